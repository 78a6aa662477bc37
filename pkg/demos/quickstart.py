"""Solve a small combinatorial auction three ways.

Branch-and-bound gives the reference optimum. Random LNS and the
local-branching expert then start from the first incumbent and improve it
step by step.

    python demos/quickstart.py
"""
from lnsforge.bnb import SolveBudget, solve_mip
from lnsforge.generators import GeneratorConfig, generate_one
from lnsforge.lns import BnbInit, ExpertPolicy, RandomPolicy, run_episode

inst = generate_one(GeneratorConfig("CombinatorialAuction", n_vars=80, n_cons=40, density=0.12, seed=3), 0)
print(f"{inst.name}: {inst.n_vars} binaries, {inst.n_cons} rows")

exact = solve_mip(inst, SolveBudget(max_nodes=50_000))
print(f"branch-and-bound: {exact.status.value}, objective {exact.objective:g}, {exact.nodes_expanded} nodes")

for policy in (RandomPolicy(), ExpertPolicy(SolveBudget(max_nodes=5000))):
    rec = run_episode(inst, policy, BnbInit(), step_limit=8, sub_budget=SolveBudget(max_nodes=200),
                      seed=0, best_known=exact.objective, proved_optimal=True)
    trace = " ".join(f"{s.primal_gap:.3f}" for s in rec.steps)
    print(f"{rec.policy:>7} gaps by step: {trace}")

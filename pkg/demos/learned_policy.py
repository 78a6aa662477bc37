"""Train the diving model and the neighborhood policy, then compare policies.

Runs in about a minute on one core. Writes an average-gap plot and the
per-policy curves to the directory given on the command line (default
``demo_out``).

    python demos/learned_policy.py [OUT_DIR]
"""
import sys
from pathlib import Path

import numpy as np

from lnsforge.bnb import SolveBudget
from lnsforge.diving import dive, train_diving
from lnsforge.evaluation import average_gap_curve, compute_best_known, plot_curves, step_grid, write_gap_csv
from lnsforge.expert import generate_trajectories, train_nns
from lnsforge.generators import GeneratorConfig, generate
from lnsforge.lns import AdaptiveSizeConfig, DiveInit, ExpertPolicy, NeuralPolicy, RandomPolicy, root_lp, run_episode
from lnsforge.neural import TrainConfig

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

insts = generate(GeneratorConfig("CombinatorialAuction", n_vars=100, n_cons=45, density=0.1, seed=21, count=70))
train, test = insts[:60], insts[60:]
table = compute_best_known(insts, SolveBudget(max_nodes=20_000))
lps = {inst.name: root_lp(inst) for inst in insts}
print(f"best-known objectives for {len(table.entries)} instances")

targets = [(inst, [np.round(np.asarray(table.entries[inst.name].solution))[inst.integer_indices]]) for inst in train]
diving, _ = train_diving(targets, TrainConfig(epochs=30, batch_size=16), lp_solutions=lps)
init = DiveInit(diving, n_samples=2, coverage=0.7)


def start(inst, run):
    return dive(inst, diving, 2, 0.7, init.budget, seed=run, lp_solution=lps[inst.name]).best, "diving"


trajs = generate_trajectories(train, eta_fraction=0.1, T_max=8, initial=start, runs_per_instance=3,
                              optima={k: e.value for k, e in table.entries.items()})
by_name = {inst.name: inst for inst in train}
grouped = {}
for traj in trajs:
    grouped.setdefault(traj.instance_id, []).append(traj)
nns, log = train_nns([(by_name[k], v) for k, v in sorted(grouped.items())], TrainConfig(epochs=30, batch_size=32), lp_solutions=lps)
print(f"{len(trajs)} expert trajectories, policy loss {log.losses()[0]:.2f} -> {log.losses()[-1]:.2f}")

adaptive = AdaptiveSizeConfig(0.1, 1.5, 0.02, 0.2)
curves = {}
for label, policy in (("random", RandomPolicy()), ("neural", NeuralPolicy(nns)), ("expert", ExpertPolicy())):
    records = [run_episode(inst, policy, init, step_limit=6, sub_budget=SolveBudget(max_nodes=200), seed=s,
                           best_known=table.value(inst.name), adaptive=adaptive, keep_x=False)
               for inst in test for s in range(3)]
    curves[label] = average_gap_curve(records, table, step_grid(6))
    write_gap_csv(curves[label], out / f"gap_{label}.csv")
    print(f"{label:>7}: mean final gap {curves[label][-1].mean_gap:.4f}")

plot_curves(curves, out / "gap_curve.svg", log_x=False)
print(f"plot written to {out / 'gap_curve.svg'}")

"""Command-line driver: ``lnsforge <command> --config run.json --out DIR``.

Every command writes ``config.resolved.json`` and ``versions.json`` into its
output directory. Failures print one ``error: <Kind>: <message>`` line to
stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bnb import SolveBudget
from .diving import dive, train_diving
from .errors import LnsError, MissingArtifactError
from .evaluation import (
    THRESHOLD_PRESETS,
    BestKnownTable,
    average_gap_curve,
    compute_best_known,
    plot_curves,
    step_grid,
    survival_curve,
    time_grid,
    write_gap_csv,
    write_survival_csv,
)
from .expert import default_eta, read_trajectories, rollout, train_nns, write_trajectories
from .generators import GeneratorConfig, load_split, write_dataset
from .graph import DEFAULT_WINDOW, FEATURE_VERSION
from .lns import (
    RECORD_VERSION,
    AdaptiveSizeConfig,
    BnbInit,
    DiveInit,
    ExpertPolicy,
    NeuralPolicy,
    RandomPolicy,
    SamplerConfig,
    bnb_incumbent,
    load_episodes,
    root_lp,
    run_parallel,
)
from .neural import TrainConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("lnsforge")

DEFAULTS = {
    "seed": 0,
    "generator": {"family": "SetCover", "n_vars": 40, "n_cons": 25, "density": 0.15, "count": 10, "split": [0.7, 0.15, 0.15]},
    "best_known": {"max_nodes": 200_000, "splits": ["train", "valid", "test"]},
    "expert": {"split": "train", "eta_fraction": 0.2, "T_max": 10, "max_nodes": 50_000, "runs_per_instance": 1, "init": "bnb"},
    "diving": {"n_samples": 4, "coverage": 0.5, "max_nodes": 2000, "use_lp": True},
    "train": {"epochs": 100, "lr": 1e-3, "batch_size": None, "hidden": 64, "n_layers": 2, "mlp_hidden": 64, "grad_clip": 10.0, "window": DEFAULT_WINDOW},
    "sampler": {"epsilon": 0.01, "tau": 0.5},
    "adaptive": {"initial_fraction": 0.2, "alpha": 1.5, "min_fraction": 0.01, "max_fraction": 0.5},
    "solve": {"split": "test", "policy": "random", "init": "bnb", "step_limit": 10, "sub_max_nodes": 1000, "time_limit_ms": None, "n_runs": 1, "expert_max_nodes": 50_000},
    "evaluate": {"mode": "step", "grid_points": 50, "thresholds": [0.0, 0.01, 0.05], "plot": True},
}


# -- config ----------------------------------------------------------------


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise LnsError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise LnsError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(path: str | None, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then ``LNSFORGE_SEED``, then ``--seed``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        p = Path(path)
        if not p.exists():
            raise MissingArtifactError(f"config file not found: {p}")
        user = json.loads(p.read_text(encoding="utf-8"))
        # a resolved config from an earlier run is accepted as input
        user.pop("out", None)
        user.pop("command", None)
        cfg = _merge(cfg, user)
    if "LNSFORGE_SEED" in os.environ:
        cfg["seed"] = int(os.environ["LNSFORGE_SEED"])
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def output_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get("LNSFORGE_OUT")
    if not out:
        raise LnsError("no output directory: pass --out or set LNSFORGE_OUT")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run_files(out: Path, cfg: dict, command: str) -> None:
    resolved = dict(cfg, command=command, out=str(out))
    (out / "config.resolved.json").write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    versions = {"package": __version__, "feature_version": FEATURE_VERSION, "record_version": RECORD_VERSION, "schema": 1}
    (out / "versions.json").write_text(json.dumps(versions, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _instances(data_dir, split: str):
    data_dir = _require(data_dir, "dataset")
    _require(data_dir / "manifest.json", "dataset manifest")
    return load_split(data_dir, split)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(t["epochs"], t["lr"], t["batch_size"], cfg["seed"], t["hidden"], t["n_layers"], t["mlp_hidden"], True, t["grad_clip"])


def _dive_init(cfg: dict, model_path) -> DiveInit:
    d = cfg["diving"]
    params = load_checkpoint(_require(model_path, "diving model"), window=0)
    return DiveInit(params, d["n_samples"], d["coverage"], SolveBudget(max_nodes=d["max_nodes"]), d["use_lp"])


# -- commands --------------------------------------------------------------


def cmd_gen(args, cfg, out):
    g = dict(cfg["generator"], seed=cfg["seed"], split=tuple(cfg["generator"]["split"]))
    manifest = write_dataset(GeneratorConfig(**g), out)
    print(f"wrote {sum(len(v) for v in manifest['splits'].values())} instances to {out}")


def _best_known_one(job):
    inst, max_nodes = job
    return compute_best_known([inst], SolveBudget(max_nodes=max_nodes))


def cmd_best_known(args, cfg, out):
    b = cfg["best_known"]
    insts = [inst for split in b["splits"] for inst in _instances(args.data, split)]
    table = BestKnownTable()
    for part in _map(_best_known_one, [(inst, b["max_nodes"]) for inst in insts], args.workers):
        table.entries.update(part.entries)
        table.excluded.update(part.excluded)
    table.save(out / "best_known.json")
    sol_dir = out / "solutions"
    sol_dir.mkdir(exist_ok=True)
    for name, entry in sorted(table.entries.items()):
        (sol_dir / f"{name}.json").write_text(json.dumps({"instance": name, "objective": entry.value, "x": entry.solution}) + "\n", encoding="utf-8")
    print(f"best-known objectives for {len(table.entries)} instances, {len(table.excluded)} excluded")


def _expert_one(job):
    inst, cfg, dive_path = job
    e = cfg["expert"]
    eta = default_eta(len(inst.integer_indices), e["eta_fraction"])
    budget = SolveBudget(max_nodes=e["max_nodes"])
    init = _dive_init(cfg, dive_path) if e["init"] == "dive" else None
    lp = root_lp(inst) if init is not None and init.use_lp else None
    trajs = []
    for run in range(e["runs_per_instance"]):
        if init is None:
            x0, source = bnb_incumbent(inst), "bnb-incumbent"
        else:
            x0 = dive(inst, init.params, init.n_samples, init.coverage, init.budget, cfg["seed"] + run, lp).best
            source = "diving"
        trajs.append(rollout(inst, x0, eta, e["T_max"], budget, source, run))
    return inst, trajs


def cmd_expert_data(args, cfg, out):
    e = cfg["expert"]
    if e["init"] not in ("bnb", "dive"):
        raise LnsError(f"expert.init must be 'bnb' or 'dive', got {e['init']!r}")
    if e["init"] == "dive" and not args.diving_model:
        raise LnsError("expert.init is 'dive' but --diving-model was not given")
    insts = _instances(args.data, e["split"])
    files = {}
    n = 0
    for inst, trajs in _map(_expert_one, [(inst, cfg, args.diving_model) for inst in insts], args.workers):
        write_trajectories(inst, trajs, out / f"{inst.name}.jsonl")
        files[inst.name] = f"{inst.name}.jsonl"
        n += len(trajs)
    manifest = {"data": str(Path(args.data).resolve()), "split": e["split"], "trajectories": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {n} trajectories for {len(files)} instances")


def cmd_train_diving(args, cfg, out):
    insts = _instances(args.data, args.split)
    sol_dir = _require(args.solutions, "solutions directory")
    dataset = []
    for inst in insts:
        sol = json.loads(_require(sol_dir / f"{inst.name}.json", "solution").read_text(encoding="utf-8"))
        dataset.append((inst, [np.round(np.asarray(sol["x"]))[inst.integer_indices]]))
    lps = {inst.name: root_lp(inst) for inst in insts} if cfg["diving"]["use_lp"] else {}
    params, history = train_diving(dataset, _train_config(cfg), lp_solutions=lps)
    save_checkpoint(params, out / "diving.json", {"kind": "diving"})
    history.to_csv(out / "train_log.csv")
    print(f"final train loss {history.losses()[-1]:.6g}")


def _trajectory_pairs(data_dir, traj_dir, split):
    traj_dir = _require(traj_dir, "trajectory directory")
    manifest = json.loads(_require(traj_dir / "manifest.json", "trajectory manifest").read_text(encoding="utf-8"))
    insts = {inst.name: inst for inst in _instances(data_dir, split)}
    pairs = []
    for name, rel in sorted(manifest["trajectories"].items()):
        if name in insts:
            pairs.append((insts[name], read_trajectories(insts[name], _require(traj_dir / rel, "trajectory file"))))
    return pairs


def cmd_train_nns(args, cfg, out):
    pairs = _trajectory_pairs(args.data, args.trajectories, cfg["expert"]["split"])
    if not pairs:
        raise MissingArtifactError(f"no trajectories for split {cfg['expert']['split']!r} in {args.trajectories}")
    lps = {inst.name: root_lp(inst) for inst, _ in pairs}
    params, history = train_nns(pairs, _train_config(cfg), lp_solutions=lps, window=cfg["train"]["window"])
    save_checkpoint(params, out / "nns.json", {"kind": "nns"})
    history.to_csv(out / "train_log.csv")
    print(f"final train loss {history.losses()[-1]:.6g}")


def _solve_all(args, cfg, out, policy_kind: str, init_kind: str) -> int:
    s = cfg["solve"]
    insts = _instances(args.data, s["split"])
    table = BestKnownTable.load(_require(args.best_known, "best-known table")) if args.best_known else None
    if policy_kind == "random":
        policy = RandomPolicy()
    elif policy_kind == "neural":
        if not args.model:
            raise LnsError("policy 'neural' needs --model")
        policy = NeuralPolicy(load_checkpoint(_require(args.model, "policy model")))
    elif policy_kind == "expert":
        policy = ExpertPolicy(SolveBudget(max_nodes=s["expert_max_nodes"]))
    else:
        raise LnsError(f"unknown policy {policy_kind!r}")
    if init_kind == "bnb":
        init = BnbInit()
    elif init_kind == "dive":
        if not args.diving_model:
            raise LnsError("init 'dive' needs --diving-model")
        init = _dive_init(cfg, args.diving_model)
    else:
        raise LnsError(f"unknown init {init_kind!r}")
    sampler = SamplerConfig(cfg["sampler"]["epsilon"], cfg["sampler"]["tau"], cfg["seed"])
    adaptive = AdaptiveSizeConfig(**cfg["adaptive"])
    n = 0
    for inst in insts:
        best = table.value(inst.name) if table is not None else None
        proved = table.proved(inst.name) if table is not None else False
        result = run_parallel(
            inst, policy, init, s["n_runs"], cfg["seed"], args.workers,
            step_limit=s["step_limit"], sub_budget=SolveBudget(max_nodes=s["sub_max_nodes"]),
            best_known=best, sampler=sampler, adaptive=adaptive,
            time_limit_ms=s["time_limit_ms"], proved_optimal=proved,
        )
        for rec in result.records:
            rec.save(out)
            n += 1
    return n


def cmd_solve(args, cfg, out):
    policy = args.policy or cfg["solve"]["policy"]
    init = args.init or cfg["solve"]["init"]
    n = _solve_all(args, cfg, out, policy, init)
    print(f"wrote {n} episode records ({policy} policy, {init} init)")


def _evaluate(run_dirs: dict[str, Path], table: BestKnownTable, cfg: dict, out: Path) -> dict:
    ev = cfg["evaluate"]
    records = {label: load_episodes(d) for label, d in run_dirs.items()}
    for label, recs in records.items():
        if not recs:
            raise MissingArtifactError(f"no episode records under {run_dirs[label] / 'episodes'}")
    everything = [r for recs in records.values() for r in recs]
    if ev["mode"] == "step":
        grid = step_grid(max(s.t for r in everything for s in r.steps))
    elif ev["mode"] == "time":
        times = [s.elapsed_ms for r in everything for s in r.steps]
        grid = time_grid(max(min(times), 1e-3), max(times), ev["grid_points"])
    else:
        raise LnsError(f"evaluate.mode must be 'step' or 'time', got {ev['mode']!r}")
    thresholds = [THRESHOLD_PRESETS[t] if isinstance(t, str) else float(t) for t in ev["thresholds"]]
    summary = {}
    gap_curves = {}
    for label, recs in records.items():
        target = out / label if len(records) > 1 else out
        target.mkdir(parents=True, exist_ok=True)
        curve = average_gap_curve(recs, table, grid, ev["mode"])
        gap_curves[label] = curve
        write_gap_csv(curve, target / "gap_curve.csv")
        write_survival_csv({thr: survival_curve(recs, table, thr, grid, ev["mode"]) for thr in thresholds}, target / "survival.csv")
        summary[label] = {"final_mean_gap": curve[-1].mean_gap, "n_instances": curve[-1].n_instances}
    if ev["plot"]:
        plot_curves(gap_curves, out / "gap_curve.svg", log_x=ev["mode"] == "time")
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def cmd_evaluate(args, cfg, out):
    table = BestKnownTable.load(_require(args.best_known, "best-known table"))
    runs = {}
    for item in args.runs:
        label, _, path = item.rpartition("=")
        path = _require(path, "run directory")
        runs[label or path.name] = path
    summary = _evaluate(runs, table, cfg, out)
    for label, row in sorted(summary.items()):
        print(f"{label}: final mean gap {row['final_mean_gap']:.6g} over {row['n_instances']} instances")


def cmd_ablate(args, cfg, out):
    if not args.best_known:
        raise LnsError("ablate needs --best-known")
    table = BestKnownTable.load(_require(args.best_known, "best-known table"))
    runs = {}
    for init in ("bnb", "dive"):
        for policy in ("random", "neural"):
            label = f"{init}-{policy}"
            sub = out / "runs" / label
            sub.mkdir(parents=True, exist_ok=True)
            _solve_all(args, cfg, sub, policy, init)
            runs[label] = sub
    summary = _evaluate(runs, table, cfg, out / "eval")
    for label, row in sorted(summary.items()):
        print(f"{label}: final mean gap {row['final_mean_gap']:.6g}")


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnsforge", description="Large neighborhood search with learned neighborhood selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration (keys as in DEFAULTS)")
        p.add_argument("--out", help="output directory (or LNSFORGE_OUT)")
        p.add_argument("--seed", type=int, help="overrides the config seed and LNSFORGE_SEED")
        p.add_argument("--workers", type=int, default=1, help="worker processes (1 = fully deterministic)")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(fn=fn)
        return p

    command("gen", cmd_gen, "generate a dataset with train/valid/test splits")

    p = command("best-known", cmd_best_known, "solve instances under a large budget and record best objectives")
    p.add_argument("--data", required=True, help="dataset directory")

    p = command("expert-data", cmd_expert_data, "roll out the local-branching expert on training instances")
    p.add_argument("--data", required=True)
    p.add_argument("--diving-model", help="diving checkpoint, used when expert.init is 'dive'")

    p = command("train-diving", cmd_train_diving, "fit the diving model to best-known solutions")
    p.add_argument("--data", required=True)
    p.add_argument("--solutions", required=True, help="solutions/ directory written by best-known")
    p.add_argument("--split", default="train")

    p = command("train-nns", cmd_train_nns, "imitation-train the neighborhood selection policy")
    p.add_argument("--data", required=True)
    p.add_argument("--trajectories", required=True, help="directory written by expert-data")

    for name, fn, text in (("solve", cmd_solve, "run LNS episodes on a split"), ("ablate", cmd_ablate, "run {bnb, dive} x {random, neural} and evaluate")):
        p = command(name, fn, text)
        p.add_argument("--data", required=True)
        p.add_argument("--model", help="neighborhood selection checkpoint")
        p.add_argument("--diving-model", help="diving checkpoint")
        p.add_argument("--best-known", help="best_known.json; gaps are relative to it")
        if name == "solve":
            p.add_argument("--policy", choices=["random", "neural", "expert"])
            p.add_argument("--init", choices=["bnb", "dive"])
        else:
            p.set_defaults(policy=None, init=None)

    p = command("evaluate", cmd_evaluate, "average-gap and survival curves for one or more run directories")
    p.add_argument("--best-known", required=True)
    p.add_argument("runs", nargs="+", help="run directories, optionally LABEL=DIR")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, args)
        out = output_dir(args)
        write_run_files(out, cfg, args.command)
        args.fn(args, cfg, out)
    except (LnsError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"error: {type(exc).__name__}: {' '.join(msg.split())}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

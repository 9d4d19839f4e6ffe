"""Command-line entry point.

    subgoal-discovery generate color3-simple --seed 0 --out runs/c3
    subgoal-discovery citest --data runs/c3 --out runs/c3-ci
    subgoal-discovery fit --data runs/c3 --seed 0 --out runs/c3-fit
    subgoal-discovery eval --data runs/c3 --fit runs/c3-fit --out runs/c3-eval
    subgoal-discovery rollout --fit runs/drv-fit --out runs/drv-roll

Every command writes ``run.json`` into ``--out`` with the resolved
configuration. Settings are taken from flags first, then ``--config``
(a JSON object), then per-dataset defaults.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .citest import PROTOCOLS, run_ci_suite
from .datagen import GENERATORS, NormalizationInfo, build_data_matrix, course_from_meta, generate
from .io import FMT, file_digest, load_dataset, load_fit, read_json, save_dataset, save_fit, write_json
from .pipeline import BOUNDARY_METHODS, block_coverage, color_signature, evaluate_fit, template_signatures
from .plotting import course_figure, dominance_figure, factorization_figure, histogram_figure, loss_trace_figure
from .policy import ExecutionConfig, execute_task
from .seqnmf import FitAborted, default_config, fit_restarts
from .subgoals import boundary_metrics, to_subgoal_matrix
from .tensorops import conv_forward

log = logging.getLogger("subgoal_discovery")

GENERATOR_FLAGS = {
    "color3-simple": ("n_seq", "T", "noise_sd"),
    "color3-conditional": ("n_seq", "T", "noise_sd"),
    "color10": ("n_seq", "T", "noise_sd"),
    "driving": ("n_per_task", "heading_sd"),
}
FIT_KEYS = ("J", "L", "lambda_bin", "lambda_1", "lambda_sim", "max_iter", "start_bin_loss_iter", "tolerance",
            "epsilon_div", "l1_gradient")


class CliError(Exception):
    """A user-facing failure; printed without a traceback."""

    def __init__(self, msg: str, code: int = 2):
        super().__init__(msg)
        self.code = code


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _file_config(args) -> dict:
    if not args.config:
        return {}
    try:
        cfg = read_json(args.config)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError("--config must hold a JSON object")
    return cfg


def _resolve(args, keys, section: dict) -> dict:
    """Flag values that were given, falling back to the config file section."""
    out = {k: section[k] for k in keys if k in section}
    out.update({k: getattr(args, k) for k in keys if getattr(args, k, None) is not None})
    return out


def _run_manifest(out: Path, command: str, resolved: dict, inputs: dict | None = None) -> None:
    write_json(out / "run.json", {
        "command": command,
        "version": __version__,
        "config": resolved,
        "inputs": inputs or {},
    })


def _load_data(path) -> tuple:
    try:
        ds = load_dataset(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load dataset from {path}: {exc}") from exc
    return ds, file_digest(Path(path) / "manifest.json")


# generate


def cmd_generate(args) -> int:
    section = _file_config(args).get("dataset", {})
    params = _resolve(args, GENERATOR_FLAGS[args.generator], section)
    try:
        ds = generate(args.generator, seed=args.seed, **params)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    manifest = save_dataset(ds, out)
    _run_manifest(out, "generate", {"generator": args.generator, "seed": args.seed, "params": ds.meta["params"]})
    print(manifest)
    return 0


# citest


def cmd_citest(args) -> int:
    ds, digest = _load_data(args.data)
    section = _file_config(args).get("citest", {})
    opts = _resolve(args, ("alpha", "independence_floor", "n_subsets", "subset_frac"), section)
    opts = {"alpha": 0.01, "independence_floor": 0.1, "n_subsets": 20, "subset_frac": 0.3, **opts}
    protocols = PROTOCOLS if args.protocol == "both" else (args.protocol,)
    try:
        report = run_ci_suite(ds, seed=args.seed, protocols=protocols, **opts)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    write_json(out / "ci_report.json", report.to_dict())
    _run_manifest(out, "citest", {**opts, "protocols": list(protocols), "seed": args.seed},
                  {"dataset": str(args.data), "manifest_sha256": digest})
    print(report.table())
    if not report.selection_confirmed:
        print("note: selection not confirmed for this dataset")
    return 0


# fit


def cmd_fit(args) -> int:
    ds, digest = _load_data(args.data)
    section = _file_config(args).get("fit", {})
    overrides = _resolve(args, FIT_KEYS, section)
    restarts = args.restarts if args.restarts is not None else section.get("restarts", 1)
    try:
        cfg = default_config(ds.generator, seed=args.seed, **overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    dm = build_data_matrix(ds)
    try:
        res = fit_restarts(dm.X, cfg, restarts, separators=dm.separators)
    except FitAborted as exc:
        raise CliError(f"fit aborted: {exc}", code=1) from exc
    out = _out_dir(args)
    save_fit(res, out, dm.norm, {"generator": ds.generator, "dataset_params": ds.meta.get("params", {}),
                                 "restarts": restarts})
    loss_trace_figure(res.loss_trace, out / "loss_trace.svg")
    _run_manifest(out, "fit", {**cfg.to_dict(), "restarts": restarts},
                  {"dataset": str(args.data), "manifest_sha256": digest})
    fl = res.final_loss
    print(f"iterations {res.iterations_run}  converged {res.converged}  "
          f"reconstruction {fl.reconstruction:.6g}  total {fl.total:.6g}")
    for msg in res.diagnostics:
        print(f"warning: {msg}", file=sys.stderr)
    return 0


# eval


def _write_segmentation(path: Path, seg, G) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "label", *(f"g{j + 1}" for j in range(G.shape[0]))])
        for t in range(G.shape[1]):
            w.writerow([t, int(seg.labels[t]), *(FMT % v for v in G[:, t])])


def _eval_one(ds, fit_dir: Path, out: Path, args, plot: bool) -> dict:
    try:
        res, info = load_fit(fit_dir)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load fit from {fit_dir}: {exc}") from exc
    if args.J is not None and res.config.J != args.J:
        raise CliError(f"{fit_dir} has J={res.config.J} but --J {args.J} was requested")
    if info.get("generator") and info["generator"] != ds.generator:
        raise CliError(f"{fit_dir} was fitted on {info['generator']}, not {ds.generator}")
    dm = build_data_matrix(ds)
    if dm.X.shape[1] != res.H.shape[1]:
        raise CliError(f"{fit_dir} does not match the dataset (H has {res.H.shape[1]} columns)")
    ev = evaluate_fit(ds, dm, res, args.boundaries, args.tol, args.min_weight)
    row = {"fit": str(fit_dir), "seed": res.config.seed, **ev.to_dict()}
    if args.tol != 0:
        exact = evaluate_fit(ds, dm, res, args.boundaries, 0, args.min_weight)
        row["exact"] = {k: exact.mean(k) for k in ("precision", "recall", "f1")}
    if ds.generator == "color10":
        sigs = [color_signature(res.O, j, dm.norm) for j in range(res.config.J)]
        row["color_signatures"] = [list(s) for s in sigs]
        row["signatures_match_templates"] = set(sigs) == template_signatures()
        row["block_coverage"] = block_coverage(ds, dm, res, 10, 1, args.min_weight)
    if plot:
        G = to_subgoal_matrix(res.O, res.H).G
        seg_dir = out / "segmentation"
        seg_dir.mkdir(exist_ok=True)
        limit = len(ds) if args.plot_limit is None else min(args.plot_limit, len(ds))
        for i, te in enumerate(ev.trajectories):
            cols = dm.columns_of(i)
            _write_segmentation(seg_dir / f"traj_{i:04d}.csv", te.segmentation, G[:, cols])
            if i < limit:
                dominance_figure(G[:, cols], te.truth, out / "dominance" / f"traj_{i:04d}.svg", f"trajectory {i}")
        first = dm.columns_of(0)
        window = first[: min(len(first), 10 * res.config.L)]
        factorization_figure(res.O, res.H, conv_forward(res.O, res.H), out / "factorization.svg", window)
        histogram_figure(ev.run_counts(), out / "run_counts.svg", "labeled runs per trajectory")
    return row


def cmd_eval(args) -> int:
    ds, digest = _load_data(args.data)
    out = _out_dir(args)
    if args.self_eval:
        scores = [boundary_metrics(tr.boundaries, tr.boundaries, args.tol) for tr in ds.trajectories]
        result = {"self_eval": True, "tol": args.tol, "f1": float(np.mean([m.f1 for m in scores]))}
    else:
        if not args.fit:
            raise CliError("eval needs at least one --fit directory (or --self-eval)")
        rows = [_eval_one(ds, Path(f), out, args, plot=(k == 0)) for k, f in enumerate(args.fit)]
        f1 = np.array([r["f1"] for r in rows])
        result = {"fits": rows, "tol": args.tol, "f1_mean": float(f1.mean()),
                  "f1_std": float(f1.std(ddof=1)) if len(f1) > 1 else 0.0}
    write_json(out / "metrics.json", result)
    _run_manifest(out, "eval", {"tol": args.tol, "min_weight": args.min_weight, "boundaries": args.boundaries,
                                "fits": args.fit or [], "self_eval": args.self_eval},
                  {"dataset": str(args.data), "manifest_sha256": digest})
    if args.self_eval:
        print(f"self-eval F1 {result['f1']:.3f}")
    else:
        for r in result["fits"]:
            print(f"{r['fit']}: precision {r['precision']:.3f} recall {r['recall']:.3f} f1 {r['f1']:.3f}")
        print(f"F1 {result['f1_mean']:.3f} +- {result['f1_std']:.3f} over {len(result['fits'])} fit(s)")
    return 0


# rollout


def cmd_rollout(args) -> int:
    try:
        res, info = load_fit(args.fit)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load fit from {args.fit}: {exc}") from exc
    if info.get("generator") != "driving":
        raise CliError("rollout needs a fit of the driving dataset")
    norm = NormalizationInfo.from_dict(info["normalization"])
    course = course_from_meta({"params": info.get("dataset_params", {})})
    section = _file_config(args).get("rollout", {})
    opts = _resolve(args, ("epsilon", "max_steps", "max_subtask_steps"), section)
    try:
        cfg = ExecutionConfig(**opts)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    rollouts, summary = [], {}
    for task in (0, 1):
        ro = execute_task(course.start_state(task), res.O, norm, cfg, course)
        rollouts.append(ro)
        with open(out / f"rollout_task{task}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "theta", "dtheta", "subgoal"])
            for t in range(ro.steps + 1):
                a = FMT % ro.actions[t, 0] if t < ro.steps else ""
                g = int(ro.subgoals[t]) if t < ro.steps else ""
                w.writerow([t, *(FMT % v for v in ro.states[t]), a, g])
        summary[f"task{task}"] = ro.summary()
    write_json(out / "summary.json", summary)
    course_figure(course, rollouts, out / "course.svg")
    _run_manifest(out, "rollout", {"epsilon": cfg.epsilon, "max_steps": cfg.max_steps,
                                   "max_subtask_steps": cfg.subtask_budget(res.config.L)},
                  {"fit": str(args.fit)})
    for name, s in summary.items():
        print(f"{name}: terminated {s['terminated']}  steps {s['steps']}  switches {s['switches']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="JSON file with dataset/citest/fit/rollout sections")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="subgoal-discovery", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="generate a synthetic dataset")
    g.add_argument("generator", choices=GENERATORS)
    g.add_argument("--n-seq", dest="n_seq", type=int)
    g.add_argument("--T", dest="T", type=int)
    g.add_argument("--noise-sd", dest="noise_sd", type=float)
    g.add_argument("--n-per-task", dest="n_per_task", type=int)
    g.add_argument("--heading-sd", dest="heading_sd", type=float)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("citest", parents=[common], help="run the selection CI tests")
    c.add_argument("--data", required=True)
    c.add_argument("--alpha", type=float)
    c.add_argument("--independence-floor", dest="independence_floor", type=float)
    c.add_argument("--subsets", dest="n_subsets", type=int)
    c.add_argument("--subset-frac", dest="subset_frac", type=float)
    c.add_argument("--protocol", choices=("both", *PROTOCOLS), default="both")
    c.set_defaults(func=cmd_citest)

    f = sub.add_parser("fit", parents=[common], help="fit the regularized convolutional NMF")
    f.add_argument("--data", required=True)
    f.add_argument("--J", dest="J", type=int)
    f.add_argument("--L", dest="L", type=int)
    f.add_argument("--lambda-bin", dest="lambda_bin", type=float)
    f.add_argument("--lambda-1", dest="lambda_1", type=float)
    f.add_argument("--lambda-sim", dest="lambda_sim", type=float)
    f.add_argument("--max-iter", dest="max_iter", type=int)
    f.add_argument("--start-bin-loss-iter", dest="start_bin_loss_iter", type=int)
    f.add_argument("--tolerance", type=float)
    f.add_argument("--epsilon-div", dest="epsilon_div", type=float)
    f.add_argument("--l1-gradient", dest="l1_gradient", choices=("offdiag", "ones"))
    f.add_argument("--restarts", type=int, help="random starts; the lowest final objective wins")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", parents=[common], help="segment and score fitted factors")
    e.add_argument("--data", required=True)
    e.add_argument("--fit", action="append", help="fit directory; repeat for several seeds")
    e.add_argument("--J", dest="J", type=int, help="expected number of factors")
    e.add_argument("--tol", type=int, default=1)
    e.add_argument("--min-weight", dest="min_weight", type=float, default=0.5)
    e.add_argument("--boundaries", choices=BOUNDARY_METHODS, default="auto")
    e.add_argument("--plot-limit", dest="plot_limit", type=int, help="dominance plots for the first N trajectories")
    e.add_argument("--self-eval", dest="self_eval", action="store_true",
                   help="score the ground truth against itself")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", parents=[common], help="replay driving patterns from both start states")
    r.add_argument("--fit", required=True)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--max-steps", dest="max_steps", type=int)
    r.add_argument("--max-subtask-steps", dest="max_subtask_steps", type=int)
    r.set_defaults(func=cmd_rollout)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

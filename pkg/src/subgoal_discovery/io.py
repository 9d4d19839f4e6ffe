"""Plain-text serialization: CSV for arrays, JSON for metadata.

Floats are written with 17 significant digits so every value round-trips
exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .datagen import Dataset, NormalizationInfo, Trajectory
from .seqnmf import FitResult, LossBreakdown, SeqNmfConfig
from .tensorops import as_matrix, as_tensor3

FMT = "%.17g"


def write_matrix(path, M) -> None:
    """One row per line, comma separated, no header."""
    M = as_matrix(M)
    np.savetxt(path, M, delimiter=",", fmt=FMT)


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_tensor3(path, O) -> None:
    """Header line ``D J L`` then one D x J block per lag, blocks separated by a blank line."""
    O = as_tensor3(O)
    D, J, L = O.shape
    with open(path, "w") as fh:
        fh.write(f"{D} {J} {L}\n")
        for lag in range(L):
            if lag:
                fh.write("\n")
            for row in O[:, :, lag]:
                fh.write(",".join(FMT % v for v in row) + "\n")


def read_tensor3(path) -> np.ndarray:
    with open(path) as fh:
        D, J, L = (int(v) for v in fh.readline().split())
        rows = [line for line in fh if line.strip()]
    if len(rows) != D * L:
        raise ValueError(f"{path}: expected {D * L} data rows, found {len(rows)}")
    flat = np.array([[float(v) for v in r.split(",")] for r in rows])
    if flat.shape[1] != J:
        raise ValueError(f"{path}: expected {J} columns, found {flat.shape[1]}")
    return flat.reshape(L, D, J).transpose(1, 2, 0).copy()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# Datasets


def save_dataset(ds: Dataset, directory) -> Path:
    """One CSV per trajectory plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d_s, d_a = ds.d_s, ds.d_a
    header = ["step", *(f"s{i + 1}" for i in range(d_s)), *(f"a{i + 1}" for i in range(d_a)), "g_label", "task_id"]
    files = []
    for n, tr in enumerate(ds.trajectories):
        name = f"traj_{n:04d}.csv"
        with open(directory / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(len(tr)):
                w.writerow([t, *(FMT % v for v in tr.states[t]), *(FMT % v for v in tr.actions[t]),
                            int(tr.subgoal_labels[t]), tr.task_id])
        files.append(name)
    manifest = {
        "generator": ds.generator,
        "params": ds.meta.get("params", {}),
        "seed": ds.meta.get("seed"),
        "d_s": d_s,
        "d_a": d_a,
        "trajectories": files,
        "boundaries": [tr.boundaries for tr in ds.trajectories],
    }
    path = directory / "manifest.json"
    write_json(path, manifest)
    return path


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    m = read_json(manifest_path)
    d_s, d_a = m["d_s"], m["d_a"]
    trajs = []
    for name, bounds in zip(m["trajectories"], m["boundaries"]):
        with open(directory / name, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        A = np.array([[float(v) for v in r] for r in rows])
        if A.shape[1] != 3 + d_s + d_a:
            raise ValueError(f"{name}: unexpected column count {A.shape[1]}")
        labels = A[:, 1 + d_s + d_a]
        if np.any(np.isnan(labels)):
            raise ValueError(f"{name}: missing subgoal labels")
        trajs.append(Trajectory(A[:, 1:1 + d_s], A[:, 1 + d_s:1 + d_s + d_a], labels.astype(int), bounds,
                                int(A[0, -1]) if len(A) else 0))
    meta = {"generator": m["generator"], "params": m.get("params", {}), "seed": m.get("seed")}
    return Dataset(trajs, meta)


# Fits

LOSS_COLUMNS = ["iter", "reconstruction", "r_bin", "r_1", "r_sim", "total"]


def save_fit(res: FitResult, directory, norm: NormalizationInfo | None = None, extra: dict | None = None) -> Path:
    """Write O, H, the loss trace and the config (plus normalization and free-form metadata)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor3(directory / "O.csv", res.O)
    write_matrix(directory / "H.csv", res.H)
    with open(directory / "loss_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for i, lb in enumerate(res.loss_trace):
            w.writerow([i, *(FMT % v for v in lb.as_row())])
    info = {
        "config": res.config.to_dict(),
        "iterations_run": res.iterations_run,
        "converged": res.converged,
        "final_loss": None if res.final_loss is None else dict(zip(LOSS_COLUMNS[1:], res.final_loss.as_row())),
        "diagnostics": res.diagnostics,
    }
    if norm is not None:
        info["normalization"] = norm.to_dict()
    if extra:
        info.update(extra)
    write_json(directory / "fit.json", info)
    return directory


def load_fit(directory) -> tuple[FitResult, dict]:
    """Returns the fit and the raw ``fit.json`` contents."""
    directory = Path(directory)
    info = read_json(directory / "fit.json")
    O = read_tensor3(directory / "O.csv")
    H = read_matrix(directory / "H.csv")
    trace = []
    with open(directory / "loss_trace.csv", newline="") as fh:
        for row in list(csv.reader(fh))[1:]:
            trace.append(LossBreakdown(*(float(v) for v in row[1:5])))
    final = info.get("final_loss")
    res = FitResult(
        O=O, H=H, loss_trace=trace, iterations_run=info["iterations_run"], converged=info["converged"],
        config=SeqNmfConfig(**info["config"]),
        final_loss=None if final is None else LossBreakdown(*(final[k] for k in LOSS_COLUMNS[1:5])),
        diagnostics=info.get("diagnostics", []),
    )
    return res, info

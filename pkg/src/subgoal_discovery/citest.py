"""Conditional-independence tests that tell a selection variable apart from a confounder.

A latent subgoal ``g`` is a selection variable (``s_t -> g_t <- a_t``) when

1. ``s_t`` and ``a_t`` are dependent given ``g_t``;
2. ``g_t`` and ``a_{t+1}`` are dependent given ``g_{t+1}``;
3. ``s_{t+1}`` is independent of ``g_t`` given ``s_t`` and ``a_t``
   (the transition does not look at the subgoal).

The backend is the Fisher-z test on partial correlations. A discrete
conditioning variable is handled by stratification: one test per stratum,
combined with Fisher's method.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .datagen import Dataset

DEPENDENT = "dependent"
INDEPENDENT = "independent"
INCONCLUSIVE = "inconclusive"
PROTOCOLS = ("single_step", "multi_step")

# Residual sums of squares below this fraction of the raw sum of squares count as exact zeros.
_DETERMINISTIC_RATIO = 1e-18


class SingularDesign(ValueError):
    """The conditioning columns are linearly dependent."""


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def _design(Z, n: int) -> np.ndarray:
    """Intercept plus the non-constant columns of Z."""
    if Z is None:
        return np.ones((n, 1))
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise ValueError(f"Z has {Z.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("Z has non-finite entries")
    keep = np.ptp(Z, axis=0) > 0 if Z.shape[1] else np.zeros(0, bool)
    return np.hstack([np.ones((n, 1)), Z[:, keep]])


def _residual(v: np.ndarray, A: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return v - A @ coef


def partial_corr_pvalue(x, y, Z=None) -> float:
    """Two-sided Fisher-z p-value for the partial correlation of x and y given Z.

    Parameters
    ----------
    x, y : array of shape (n,)
    Z : array of shape (n, k), optional
        Conditioning columns. Constant columns are dropped (the intercept
        already covers them).

    Returns
    -------
    float
        ``2 * (1 - Phi(|atanh(r)| * sqrt(n - k - 3)))``. A variable that
        is an exact linear function of Z carries no information beyond Z
        and yields 1.

    Raises
    ------
    ValueError
        If n < k + 4, or (as :class:`SingularDesign`) if the conditioning
        columns are collinear.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y must have the same length")
    A = _design(Z, n)
    k = A.shape[1] - 1
    if n < k + 4:
        raise ValueError(f"need at least k + 4 = {k + 4} samples, got {n}")
    if k and np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularDesign(f"conditioning set of {k} columns is rank deficient")
    rx = _residual(x, A)
    ry = _residual(y, A)
    sx, sy = rx @ rx, ry @ ry
    if sx <= _DETERMINISTIC_RATIO * max(x @ x, 1e-300) or sy <= _DETERMINISTIC_RATIO * max(y @ y, 1e-300):
        return 1.0
    r = float(rx @ ry / math.sqrt(sx * sy))
    if abs(r) >= 1.0 - 1e-15:
        return 0.0
    z = math.atanh(r) * math.sqrt(n - k - 3)
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def fisher_combine(pvalues) -> float:
    """Fisher's method: ``-2 sum log p`` against a chi-square with ``2m`` dof."""
    p = np.asarray(pvalues, dtype=np.float64)
    if p.size == 0:
        raise ValueError("nothing to combine")
    if np.any(p == 0):
        return 0.0
    return float(stats.chi2.sf(-2.0 * np.sum(np.log(p)), 2 * p.size))


@dataclass(frozen=True)
class StratifiedResult:
    p: float
    used: list  # stratum values that were tested
    skipped: list  # stratum values below the sample floor or without variation


def stratified_ci(x, y, g, extra_Z=None) -> StratifiedResult:
    """Test x independent of y given the discrete g (and extra_Z) stratum by stratum."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    g = np.asarray(g).ravel()
    n = len(x)
    if len(y) != n or len(g) != n:
        raise ValueError("x, y and g must have the same length")
    if extra_Z is not None:
        extra_Z = np.asarray(extra_Z, dtype=np.float64)
        extra_Z = extra_Z[:, None] if extra_Z.ndim == 1 else extra_Z
    k = 0 if extra_Z is None else extra_Z.shape[1]
    used, skipped, pvals = [], [], []
    for level in np.unique(g):
        idx = g == level
        if idx.sum() < k + 4 or np.ptp(x[idx]) == 0 or np.ptp(y[idx]) == 0:
            skipped.append(level.item())
            continue
        Zs = None if extra_Z is None else extra_Z[idx]
        try:
            pvals.append(partial_corr_pvalue(x[idx], y[idx], Zs))
        except SingularDesign:
            skipped.append(level.item())
            continue
        used.append(level.item())
    if not pvals:
        raise ValueError("no stratum has enough samples with variation in x and y")
    return StratifiedResult(fisher_combine(pvals), used, skipped)


def stratified_ci_pvalue(x, y, g, extra_Z=None) -> float:
    """Fisher-combined p-value of per-stratum partial-correlation tests."""
    return stratified_ci(x, y, g, extra_Z).p


# Transition features the next state is allowed to depend on, keyed by generator.
# Driving moves along (cos theta, sin theta), which is not linear in the state.
def _driving_features(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.column_stack([np.cos(s[:, 2]), np.sin(s[:, 2])])


TRANSITION_FEATURES: dict[str, Callable] = {"driving": _driving_features}


@dataclass(frozen=True)
class ConditionResult:
    condition: int
    protocol: str
    mean_p: float  # NaN when every sub-test failed
    var_p: float
    verdict: str
    n_tests: int
    n_failed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("mean_p", "var_p"):
            if not math.isfinite(d[key]):
                d[key] = None
        return d


@dataclass
class CITestReport:
    results: list[ConditionResult]
    alpha: float
    independence_floor: float
    seed: int
    meta: dict = field(default_factory=dict)

    def get(self, condition: int, protocol: str) -> ConditionResult | None:
        for r in self.results:
            if r.condition == condition and r.protocol == protocol:
                return r
        return None

    def protocols(self) -> list[str]:
        return [p for p in PROTOCOLS if any(r.protocol == p for r in self.results)]

    def selection_confirmed_for(self, protocol: str) -> bool:
        r = [self.get(c, protocol) for c in (1, 2, 3)]
        if any(x is None for x in r):
            return False
        return r[0].verdict == DEPENDENT and r[1].verdict == DEPENDENT and r[2].verdict == INDEPENDENT

    @property
    def selection_confirmed(self) -> bool:
        """Conditions 1 and 2 dependent and condition 3 independent under every protocol run."""
        protos = self.protocols()
        return bool(protos) and all(self.selection_confirmed_for(p) for p in protos)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "independence_floor": self.independence_floor,
            "seed": self.seed,
            "selection_confirmed": self.selection_confirmed,
            "results": [{**r.to_dict(), "alpha": self.alpha, "seed": self.seed} for r in self.results],
            **({"meta": self.meta} if self.meta else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        """Plain-text table with one row per condition and one column per protocol."""
        protos = self.protocols()
        names = {1: "(1) s_t _||_ a_t | g_t", 2: "(2) g_t _||_ a_t+1 | g_t+1", 3: "(3) s_t+1 _||_ g_t | s_t, a_t"}
        lines = ["CI test".ljust(32) + "".join(p.ljust(26) for p in protos)]
        for c in (1, 2, 3):
            row = names[c].ljust(32)
            for p in protos:
                r = self.get(c, p)
                cell = "-" if r is None or not math.isfinite(r.mean_p) else f"{r.mean_p:.3g} {r.verdict}"
                row += cell.ljust(26)
            lines.append(row)
        lines.append(f"selection confirmed: {'yes' if self.selection_confirmed else 'no'}")
        return "\n".join(lines)


def verdict(mean_p: float, alpha: float, independence_floor: float) -> str:
    if not math.isfinite(mean_p):
        return INCONCLUSIVE
    if mean_p < alpha:
        return DEPENDENT
    if mean_p > independence_floor:
        return INDEPENDENT
    return INCONCLUSIVE


def _bonferroni_min(pvals) -> float:
    return float(min(1.0, len(pvals) * min(pvals)))


# Each sample builder maps trajectories and a list of (trajectory, step) pairs to arrays.
def _gather(ds: Dataset, pairs, offset: int = 0):
    s = np.array([ds.trajectories[i].states[t + offset] for i, t in pairs])
    a = np.array([ds.trajectories[i].actions[t + offset] for i, t in pairs])
    g = np.array([ds.trajectories[i].subgoal_labels[t + offset] for i, t in pairs])
    return s, a, g


def stratum_centered_square(y, g) -> np.ndarray:
    """``(y - mean of y within its stratum) ** 2``, a probe for dependence in spread."""
    y = _as_vector(y, "y")
    g = np.asarray(g).ravel()
    out = np.empty_like(y)
    for level in np.unique(g):
        idx = g == level
        out[idx] = (y[idx] - y[idx].mean()) ** 2
    return out


def _stratified_probe(x, y, g, extra_Z=None) -> list[float]:
    # Under the null every function of y is independent of x within a stratum,
    # so the spread probe costs only a Bonferroni factor.
    return [stratified_ci_pvalue(x, y, g, extra_Z),
            stratified_ci_pvalue(x, stratum_centered_square(y, g), g, extra_Z)]


def _p_condition_1(ds: Dataset, pairs) -> float:
    # Each state coordinate is tested given the others: for jointly Gaussian data the
    # vector statement holds iff all these partial correlations vanish.
    s, a, g = _gather(ds, pairs)
    pvals = []
    for i in range(s.shape[1]):
        rest = np.delete(s, i, axis=1) if s.shape[1] > 1 else None
        for k in range(a.shape[1]):
            pvals.extend(_stratified_probe(s[:, i], a[:, k], g, rest))
    return _bonferroni_min(pvals)


def _p_condition_2(ds: Dataset, pairs) -> float:
    _, _, g0 = _gather(ds, pairs)
    _, a1, g1 = _gather(ds, pairs, offset=1)
    return _bonferroni_min([p for k in range(a1.shape[1]) for p in _stratified_probe(g0.astype(float), a1[:, k], g1)])


def _p_condition_3(ds: Dataset, pairs) -> float:
    s0, a0, g0 = _gather(ds, pairs)
    s1, _, _ = _gather(ds, pairs, offset=1)
    Z = np.hstack([s0, a0])
    feats = TRANSITION_FEATURES.get(ds.generator)
    if feats is not None:
        Z = np.hstack([Z, feats(s0, a0)])
    return _bonferroni_min([partial_corr_pvalue(s1[:, i], g0.astype(float), Z) for i in range(s1.shape[1])])


_CONDITIONS = {1: (_p_condition_1, 0), 2: (_p_condition_2, 1), 3: (_p_condition_3, 1)}


def _require_labels(ds: Dataset) -> None:
    if not len(ds):
        raise ValueError("dataset has no trajectories")
    for tr in ds.trajectories:
        if tr.subgoal_labels is None or len(tr.subgoal_labels) != len(tr):
            raise ValueError("every trajectory needs one subgoal label per step")


def _summarize(condition, protocol, pvals, n_failed, alpha, floor) -> ConditionResult:
    p = np.asarray(pvals, dtype=np.float64)
    mean = float(p.mean()) if p.size else math.nan
    var = float(p.var()) if p.size else math.nan
    return ConditionResult(condition, protocol, mean, var, verdict(mean, alpha, floor), int(p.size), n_failed)


def test_condition(ds: Dataset, condition: int, protocol: str = "single_step", alpha: float = 0.01,
                   independence_floor: float = 0.1, seed: int = 0, n_subsets: int = 20,
                   subset_frac: float = 0.3) -> ConditionResult:
    """Run one selection condition under one protocol.

    ``single_step`` runs one test per time index on the cross-trajectory
    sample at that index and averages the p-values over indices where the
    test could be computed. ``multi_step`` pools every (trajectory, step)
    pair, draws ``n_subsets`` subsets of ``subset_frac`` of the pool
    without replacement and averages over subsets.
    """
    if condition not in _CONDITIONS:
        raise ValueError("condition must be 1, 2 or 3")
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    if not 0 < subset_frac <= 1 or n_subsets < 1:
        raise ValueError("need n_subsets >= 1 and 0 < subset_frac <= 1")
    _require_labels(ds)
    fn, lookahead = _CONDITIONS[condition]
    lengths = [len(tr) for tr in ds.trajectories]
    pvals, failed = [], 0
    if protocol == "single_step":
        for t in range(max(lengths) - lookahead):
            pairs = [(i, t) for i, n in enumerate(lengths) if t + lookahead < n]
            try:
                pvals.append(fn(ds, pairs))
            except ValueError:
                failed += 1
    else:
        pool = [(i, t) for i, n in enumerate(lengths) for t in range(n - lookahead)]
        rng = np.random.default_rng(seed)
        size = max(1, int(round(subset_frac * len(pool))))
        for _ in range(n_subsets):
            pick = rng.choice(len(pool), size=size, replace=False)
            try:
                pvals.append(fn(ds, [pool[k] for k in np.sort(pick)]))
            except ValueError:
                failed += 1
    return _summarize(condition, protocol, pvals, failed, alpha, independence_floor)


def test_condition_1(ds: Dataset, protocol: str = "single_step", **kw) -> ConditionResult:
    """``s_t`` vs ``a_t`` given ``g_t``; dependence is evidence of selection."""
    return test_condition(ds, 1, protocol, **kw)


def test_condition_2(ds: Dataset, protocol: str = "single_step", **kw) -> ConditionResult:
    """``g_t`` vs ``a_{t+1}`` given ``g_{t+1}``."""
    return test_condition(ds, 2, protocol, **kw)


def test_condition_3(ds: Dataset, protocol: str = "single_step", **kw) -> ConditionResult:
    """``s_{t+1}`` vs ``g_t`` given ``s_t, a_t``; independence rules out a confounder."""
    return test_condition(ds, 3, protocol, **kw)


# Keep pytest from collecting the public test_* helpers when this module is imported in tests.
for _f in (test_condition, test_condition_1, test_condition_2, test_condition_3):
    _f.__test__ = False


def run_ci_suite(ds: Dataset, alpha: float = 0.01, independence_floor: float = 0.1, seed: int = 0,
                 protocols=PROTOCOLS, n_subsets: int = 20, subset_frac: float = 0.3) -> CITestReport:
    """All three conditions under each requested protocol."""
    if not 0 < alpha < 1 or not 0 < independence_floor < 1:
        raise ValueError("alpha and independence_floor must lie in (0, 1)")
    results = [
        test_condition(ds, c, p, alpha=alpha, independence_floor=independence_floor, seed=seed,
                       n_subsets=n_subsets, subset_frac=subset_frac)
        for p in protocols for c in (1, 2, 3)
    ]
    return CITestReport(results, alpha, independence_floor, seed, {"generator": ds.generator})

"""Regularized convolutional NMF with binary, sparsity and cross-similarity penalties.

The model is ``X ~ conv_forward(O, H)`` with a non-negative pattern tensor
``O`` of shape (D, J, L) and an activation matrix ``H`` of shape (J, T).
The objective adds three penalties on ``H``:

* ``r_bin = lambda_bin * ||H * (1 - H)||^2``, pushing activations to {0, 1};
* ``r_1 = lambda_1 * ||H||_1``, asking for few activations;
* ``r_sim = lambda_sim * sum_{i != j} |((O ~* X) S H^T)_{ij}|``, discouraging
  two patterns from explaining the same stretch of data.

Optimization uses multiplicative updates, which keep every entry
non-negative as long as the initial factors are.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .tensorops import (
    as_matrix,
    as_tensor3,
    band_smooth,
    conv_forward,
    conv_transpose,
    frobenius_sq,
    off_diagonal_ones,
    shift_columns,
)

log = logging.getLogger(__name__)


class FitAborted(RuntimeError):
    """Raised when an update produces NaN or Inf entries."""


@dataclass(frozen=True)
class SeqNmfConfig:
    J: int
    L: int
    lambda_bin: float = 1e-2
    lambda_1: float = 1e-3
    lambda_sim: float = 1e-4
    max_iter: int = 300
    start_bin_loss_iter: int = 30
    # None means 1e-7 times the initial total loss.
    tolerance: float | None = None
    epsilon_div: float = 1e-10
    seed: int = 0
    # L1 gradient: "offdiag" is (1 - I) H, "ones" the textbook all-ones gradient.
    l1_gradient: str = "offdiag"

    def __post_init__(self):
        if self.J < 1 or self.L < 1 or self.max_iter < 1:
            raise ValueError("J, L and max_iter must be >= 1")
        if min(self.lambda_bin, self.lambda_1, self.lambda_sim) < 0:
            raise ValueError("regularization strengths must be non-negative")
        if self.epsilon_div <= 0:
            raise ValueError("epsilon_div must be positive")
        if self.start_bin_loss_iter < 0:
            raise ValueError("start_bin_loss_iter must be non-negative")
        if self.l1_gradient not in ("offdiag", "ones"):
            raise ValueError("l1_gradient must be 'offdiag' or 'ones'")

    def unregularized(self) -> "SeqNmfConfig":
        return replace(self, lambda_bin=0.0, lambda_1=0.0, lambda_sim=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


# Defaults per dataset: number of subtasks and maximum pattern lag.
DATASET_DEFAULTS = {
    "color3-simple": {"J": 3, "L": 3},
    "color3-conditional": {"J": 3, "L": 3},
    "color10": {"J": 2, "L": 10},
    "driving": {"J": 5, "L": 40},
}


def default_config(generator: str, **overrides) -> SeqNmfConfig:
    try:
        base = dict(DATASET_DEFAULTS[generator])
    except KeyError:
        raise ValueError(f"no default hyperparameters for dataset {generator!r}") from None
    base.update({k: v for k, v in overrides.items() if v is not None})
    return SeqNmfConfig(**base)


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    r_bin: float
    r_1: float
    r_sim: float

    @property
    def total(self) -> float:
        return self.reconstruction + self.r_bin + self.r_1 + self.r_sim

    def as_row(self) -> list[float]:
        return [self.reconstruction, self.r_bin, self.r_1, self.r_sim, self.total]


@dataclass
class FitResult:
    O: np.ndarray
    H: np.ndarray
    loss_trace: list[LossBreakdown]
    iterations_run: int
    converged: bool
    config: SeqNmfConfig
    final_loss: LossBreakdown | None = None
    diagnostics: list[str] = field(default_factory=list)


def _check_shapes(X, O, H):
    X = as_matrix(X, "X")
    O = as_tensor3(O, "O")
    H = as_matrix(H, "H")
    if O.shape[0] != X.shape[0]:
        raise ValueError(f"O has D={O.shape[0]} but X has {X.shape[0]} rows")
    if O.shape[1] != H.shape[0]:
        raise ValueError(f"O has J={O.shape[1]} but H has {H.shape[0]} rows")
    if H.shape[1] != X.shape[1]:
        raise ValueError(f"H has T={H.shape[1]} but X has {X.shape[1]} columns")
    return X, O, H


def init_factors(D: int, J: int, L: int, T: int, seed: int, x_mean: float = 1.0):
    """Random strictly positive starting factors.

    Entries are uniform on (0, 1] times ``2 * sqrt(x_mean / (J * L))`` so the
    expected reconstruction matches ``x_mean``.
    """
    if min(D, J, L, T) < 1:
        raise ValueError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    scale = 2.0 * np.sqrt(max(x_mean, 1e-12) / (J * L))
    O = (1.0 - rng.random((D, J, L))) * scale
    H = (1.0 - rng.random((J, T))) * scale
    return O, H


def _masked(A: np.ndarray, mask) -> np.ndarray:
    return A if mask is None else A * mask


def loss(X, O, H, cfg: SeqNmfConfig, mask=None) -> LossBreakdown:
    """Objective terms. ``mask`` (length T, 1 = data column) drops columns from the reconstruction."""
    X, O, H = _check_shapes(X, O, H)
    recon = frobenius_sq(_masked(X, mask), _masked(conv_forward(O, H), mask))
    r_bin = cfg.lambda_bin * float(np.sum((H * (1.0 - H)) ** 2)) if cfg.lambda_bin else 0.0
    r_1 = cfg.lambda_1 * float(np.sum(np.abs(H))) if cfg.lambda_1 else 0.0
    r_sim = 0.0
    if cfg.lambda_sim and H.shape[0] > 1:
        cross = conv_transpose(O, X) @ band_smooth(H, cfg.L).T
        r_sim = cfg.lambda_sim * float(np.sum(np.abs(cross) * off_diagonal_ones(H.shape[0])))
    return LossBreakdown(recon, r_bin, r_1, r_sim)


def grad_reg_H(X, O, H, cfg: SeqNmfConfig, iteration: int) -> np.ndarray:
    """Penalty gradient used in the denominator of the H update (unclipped)."""
    J = H.shape[0]
    grad = np.zeros_like(H)
    if cfg.lambda_bin and iteration >= cfg.start_bin_loss_iter:
        T0 = 1.0 - H
        grad += cfg.lambda_bin * (H * T0 * T0 - H * H * T0)
    if cfg.lambda_1:
        if cfg.l1_gradient == "ones":
            grad += cfg.lambda_1
        elif J > 1:
            grad += cfg.lambda_1 * (off_diagonal_ones(J) @ H)
    if cfg.lambda_sim and J > 1:
        grad += cfg.lambda_sim * (off_diagonal_ones(J) @ band_smooth(conv_transpose(O, X), cfg.L))
    return grad


def grad_reg_O(X, H, cfg: SeqNmfConfig, lag: int, smoothed_H=None) -> np.ndarray:
    """Gradient of the cross-similarity penalty w.r.t. the lag-``lag`` slice of O."""
    J = H.shape[0]
    if not cfg.lambda_sim or J == 1:
        return np.zeros((X.shape[0], J))
    if smoothed_H is None:
        smoothed_H = band_smooth(H, cfg.L)
    Xs = shift_columns(X, -lag) if lag else X
    return cfg.lambda_sim * (Xs @ smoothed_H.T) @ off_diagonal_ones(J)


def _finite_or_abort(A: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(A)):
        raise FitAborted(f"{what} update produced non-finite entries")
    return A


def update_H(X, O, H, cfg: SeqNmfConfig, iteration: int, mask=None) -> np.ndarray:
    X, O, H = _check_shapes(X, O, H)
    numer = conv_transpose(O, _masked(X, mask))
    denom = conv_transpose(O, _masked(conv_forward(O, H), mask))
    denom += np.maximum(grad_reg_H(X, O, H, cfg, iteration), 0.0)
    return _finite_or_abort(H * numer / (denom + cfg.epsilon_div), "H")


def update_O(X, O, H, cfg: SeqNmfConfig, mask=None) -> np.ndarray:
    X, O, H = _check_shapes(X, O, H)
    Xhat = _masked(conv_forward(O, H), mask)
    Xm = _masked(X, mask)
    smoothed = band_smooth(H, cfg.L) if cfg.lambda_sim and H.shape[0] > 1 else None
    T = X.shape[1]
    new = np.empty_like(O)
    for lag in range(O.shape[2]):
        if lag >= T:
            new[:, :, lag] = O[:, :, lag]
            continue
        Hs = shift_columns(H, lag) if lag else H
        numer = Xm @ Hs.T
        denom = Xhat @ Hs.T + np.maximum(grad_reg_O(X, H, cfg, lag, smoothed), 0.0)
        new[:, :, lag] = O[:, :, lag] * numer / (denom + cfg.epsilon_div)
    return _finite_or_abort(new, "O")


def renormalize(O, H):
    """Scale each H row to max 1 and absorb the factor into the matching O slice.

    Rows that are entirely zero are left alone.
    """
    O = np.array(O, dtype=np.float64)
    H = np.array(H, dtype=np.float64)
    m = H.max(axis=1)
    ok = m > 0
    H[ok] /= m[ok, None]
    O[:, ok, :] *= m[None, ok, None]
    return O, H


def fit(X, cfg: SeqNmfConfig, separators=None, O_init=None, H_init=None, callback=None) -> FitResult:
    """Run the alternating multiplicative-update loop.

    Parameters
    ----------
    X : array of shape (D, T)
        Data scaled into [0, 1].
    cfg : SeqNmfConfig
    separators : bool array of shape (T,), optional
        Columns that only separate trajectories. Activations there are
        pinned at zero so no pattern starts on a separator.
    O_init, H_init : arrays, optional
        Starting factors; random positive ones are drawn from ``cfg.seed`` otherwise.
    callback : callable, optional
        Called as ``callback(iteration, O, H)`` after every update pass,
        including the final unregularized one (iteration ``iterations_run + 1``).
    """
    X = as_matrix(X, "X")
    if X.min() < 0 or X.max() > 1:
        raise ValueError("X must be scaled into [0, 1] before fitting")
    D, T = X.shape
    O, H = init_factors(D, cfg.J, cfg.L, T, cfg.seed, float(X.mean()))
    if O_init is not None:
        O = np.array(O_init, dtype=np.float64)
    if H_init is not None:
        H = np.array(H_init, dtype=np.float64)
    mask = None
    if separators is not None:
        sep = np.asarray(separators, dtype=bool)
        if sep.shape != (T,):
            raise ValueError(f"separators must have length {T}")
        H[:, sep] = 0.0
        mask = (~sep).astype(np.float64)
    _check_shapes(X, O, H)

    trace = [loss(X, O, H, cfg, mask)]
    tol = cfg.tolerance if cfg.tolerance is not None else 1e-7 * max(trace[0].total, 1e-300)
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        H = update_H(X, O, H, cfg, it, mask)
        O, H = renormalize(O, H)
        O = update_O(X, O, H, cfg, mask)
        trace.append(loss(X, O, H, cfg, mask))
        if callback is not None:
            callback(it, O, H)
        bin_pending = cfg.lambda_bin > 0 and it < cfg.start_bin_loss_iter
        if not bin_pending and abs(trace[-2].total - trace[-1].total) < tol:
            converged = True
            break

    final_cfg = cfg.unregularized()
    H = update_H(X, O, H, final_cfg, it + 1, mask)
    O, H = renormalize(O, H)
    O = update_O(X, O, H, final_cfg, mask)
    if callback is not None:
        callback(it + 1, O, H)

    diagnostics = [f"factor {j} has an all-zero activation row" for j in np.flatnonzero(H.max(axis=1) == 0)]
    for msg in diagnostics:
        log.warning(msg)
    return FitResult(
        O=O,
        H=H,
        loss_trace=trace,
        iterations_run=it,
        converged=converged,
        config=cfg,
        final_loss=loss(X, O, H, cfg, mask),
        diagnostics=diagnostics,
    )


def fit_restarts(X, cfg: SeqNmfConfig, n_restarts: int = 1, separators=None, callback=None) -> FitResult:
    """Fit from ``n_restarts`` random starts (seeds ``cfg.seed + k``) and keep the lowest final objective."""
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    best = None
    for k in range(n_restarts):
        res = fit(X, replace(cfg, seed=cfg.seed + k), separators=separators, callback=callback)
        if best is None or res.final_loss.total < best.final_loss.total:
            best = res
    return best

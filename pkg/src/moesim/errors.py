"""Local model-error estimation and return-error bound arithmetic.

The nonparametric expert's one-step error is bounded by a local Lipschitz
ratio times the distance to its nearest same-action neighbor.  The
parametric expert's error is taken as the worst residual it makes on the
transitions observed near the query.  Both estimates share one neighborhood
radius, chosen where the nonparametric estimate crosses the global average
parametric residual.  The per-step errors feed a discounted return-error
bound that the planner minimizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ActionId, Dataset, Metric, StateVec, Transition
from .models import DynamicsModel, NoSupportError

_RATIO_EPS = 0.0  # pairs with zero start distance are skipped outright


@dataclass(frozen=True)
class ErrorEstimate:
    """Paired transition/reward error estimates for one model at one query.

    supported=False means no same-action transition lay within the radius,
    in which case the caller should fall back to the parametric expert.
    """

    eps_t: float
    eps_r: float
    supported: bool = True

    def __post_init__(self) -> None:
        if self.supported:
            if not (np.isfinite(self.eps_t) and np.isfinite(self.eps_r)):
                raise ValueError("supported estimates must be finite")
            if self.eps_t < 0 or self.eps_r < 0:
                raise ValueError("error estimates must be nonnegative")

    @staticmethod
    def unsupported() -> "ErrorEstimate":
        return ErrorEstimate(np.inf, np.inf, supported=False)


@dataclass(frozen=True)
class LipschitzEstimates:
    """Max observed output-change / input-distance ratios for the transition
    map (l_t) and the reward map (l_r), over n_pairs usable pairs."""

    l_t: float
    l_r: float
    n_pairs: int


@dataclass(frozen=True)
class BoundParams:
    """Lipschitz constants of the true dynamics/reward and the discount,
    as used by the return-error bound."""

    l_t: float
    l_r: float
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.l_t) and np.isfinite(self.l_r)):
            raise ValueError("Lipschitz constants must be finite")
        if self.l_t < 0 or self.l_r < 0:
            raise ValueError("Lipschitz constants must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


class InsufficientPairsError(RuntimeError):
    """No transition pair with nonzero start distance was available."""


def estimate_lipschitz(
    pairs: Sequence[tuple[Transition, Transition]], metric: Metric
) -> LipschitzEstimates:
    """Max ratio estimates over explicit transition pairs.

    Pairs whose start states coincide (zero distance) are skipped to avoid
    division by zero; if nothing remains the caller must fall back.
    """
    best_t = 0.0
    best_r = 0.0
    used = 0
    for ti, tj in pairs:
        d = metric.distance(ti.x, tj.x)
        if d <= _RATIO_EPS:
            continue
        used += 1
        best_t = max(best_t, metric.distance(ti.x_next, tj.x_next) / d)
        best_r = max(best_r, abs(ti.r - tj.r) / d)
    if used == 0:
        raise InsufficientPairsError("no usable pair with nonzero start distance")
    return LipschitzEstimates(best_t, best_r, used)


_EXACT_PAIR_LIMIT = 3000  # below this, pair distances use exact differences


def _sq_dists_exact(A: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Exact squared distances between rows lo:hi and all rows of A,
    accumulated per dimension to avoid (block, n, d) temporaries."""
    out = np.zeros((hi - lo, len(A)))
    for k in range(A.shape[1]):
        diff = A[lo:hi, k][:, None] - A[None, :, k]
        out += diff * diff
    return out


def _sq_dists_gram(A: np.ndarray, sq: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Squared distances via ||a||^2 + ||b||^2 - 2ab (BLAS path)."""
    out = sq[lo:hi, None] + sq[None, :] - 2.0 * (A[lo:hi] @ A.T)
    np.maximum(out, 0.0, out=out)
    return out


def _pairwise_max_ratios(
    X: np.ndarray, Y: np.ndarray, R: np.ndarray, metric: Metric, block: int = 2048
) -> tuple[float, float, int]:
    """Chunked all-pairs max ratios for one action's stacked arrays.

    Small inputs use exact per-dimension differences; large ones switch to
    the gram-matrix identity, whose rounding can misreport near-duplicate
    starts as epsilon apart, so pairs below a scale-relative floor are
    treated as zero-distance and skipped.
    """
    n = len(X)
    w = metric.weights
    Xw = X * w
    Yw = Y * w
    best_t = 0.0
    best_r = 0.0
    used = 0
    cols = np.arange(n)[None, :]
    exact = n <= _EXACT_PAIR_LIMIT
    if exact:
        floor = _RATIO_EPS
        x_sq = y_sq = None
    else:
        x_sq = np.einsum("ij,ij->i", Xw, Xw)
        y_sq = np.einsum("ij,ij->i", Yw, Yw)
        floor = 1e-12 * max(float(x_sq.max(initial=0.0)), 1.0)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        if exact:
            dx2 = _sq_dists_exact(Xw, lo, hi)
        else:
            dx2 = _sq_dists_gram(Xw, x_sq, lo, hi)
        # keep strictly-upper-triangle pairs (global index i < j), nonzero dx
        mask = (np.arange(lo, hi)[:, None] < cols) & (dx2 > floor)
        if not mask.any():
            continue
        used += int(mask.sum())
        dx2m = dx2[mask]
        if exact:
            dy2 = _sq_dists_exact(Yw, lo, hi)
        else:
            dy2 = _sq_dists_gram(Yw, y_sq, lo, hi)
        best_t = max(best_t, float(np.sqrt((dy2[mask] / dx2m).max())))
        dr = np.abs(R[lo:hi, None] - R[None, :])
        best_r = max(best_r, float((dr[mask] / np.sqrt(dx2m)).max()))
    return best_t, best_r, used


def global_lipschitz(ds: Dataset, metric: Metric) -> LipschitzEstimates:
    """Max ratios over all same-action transition pairs in the dataset.

    Cross-action pairs are excluded: they would mix different dynamics.
    """
    best_t = 0.0
    best_r = 0.0
    used = 0
    for a in range(ds.n_actions):
        X, Y, R = ds.action_arrays(a)
        if len(R) < 2:
            continue
        bt, br, n = _pairwise_max_ratios(X, Y, R, metric)
        best_t = max(best_t, bt)
        best_r = max(best_r, br)
        used += n
    if used == 0:
        raise InsufficientPairsError("dataset holds no usable same-action pair")
    return LipschitzEstimates(best_t, best_r, used)


def np_error_estimate(
    ds: Dataset,
    x: StateVec,
    a: ActionId,
    c: float,
    metric: Metric,
    fallback: LipschitzEstimates | None = None,
) -> ErrorEstimate:
    """Nonparametric error estimate at (x, a) with neighborhood radius c.

    eps = (local Lipschitz ratio) * (distance to the nearest same-action
    start).  The local ratios come from transition pairs starting within c
    of x; with fewer than two such neighbors the global estimates are used
    (computed on the fly when `fallback` is not supplied).
    """
    if c < 0:
        raise ValueError("radius must be nonnegative")
    rows, dists = ds.neighbor_rows(x, a, c, metric)
    if len(rows) == 0:
        return ErrorEstimate.unsupported()
    d_star = float(dists[0])
    X, Y, R = ds.action_arrays(a)
    lips: LipschitzEstimates | None = None
    if len(rows) >= 2:
        bt, br, n = _pairwise_max_ratios(X[rows], Y[rows], R[rows], metric)
        if n > 0:
            lips = LipschitzEstimates(bt, br, n)
    if lips is None:
        lips = fallback if fallback is not None else global_lipschitz(ds, metric)
    return ErrorEstimate(lips.l_t * d_star, lips.l_r * d_star)


def parametric_residuals(
    ds: Dataset, model: DynamicsModel, metric: Metric
) -> tuple[np.ndarray, np.ndarray]:
    """Per-transition residuals of the parametric model on the whole batch:
    (state-prediction distances, absolute reward errors), aligned with
    ds.transitions.  Unfitted actions get infinite residuals."""
    eps_t = np.full(len(ds), np.inf)
    eps_r = np.full(len(ds), np.inf)
    for i, tr in enumerate(ds.transitions):
        try:
            xp, rp = model.predict(tr.x, tr.a)
        except NoSupportError:
            continue
        eps_t[i] = metric.distance(xp, tr.x_next)
        eps_r[i] = abs(rp - tr.r)
    return eps_t, eps_r


def p_error_estimate(
    ds: Dataset,
    model: DynamicsModel,
    x: StateVec,
    a: ActionId,
    c: float,
    metric: Metric,
    residuals: tuple[np.ndarray, np.ndarray] | None = None,
) -> ErrorEstimate:
    """Parametric error estimate: the worst residual the model makes on the
    same-action transitions starting within c of x.

    `residuals` may carry precomputed per-transition residuals (as returned
    by parametric_residuals) to avoid re-predicting on every query.
    """
    if c < 0:
        raise ValueError("radius must be nonnegative")
    idx, _ = ds.neighbor_indices(x, a, c, metric)
    if len(idx) == 0:
        return ErrorEstimate.unsupported()
    if residuals is not None:
        et = float(residuals[0][idx].max())
        er = float(residuals[1][idx].max())
    else:
        et = 0.0
        er = 0.0
        for i in idx:
            tr = ds.transitions[int(i)]
            xp, rp = model.predict(tr.x, tr.a)
            et = max(et, metric.distance(xp, tr.x_next))
            er = max(er, abs(rp - tr.r))
    if not (np.isfinite(et) and np.isfinite(er)):
        return ErrorEstimate.unsupported()
    return ErrorEstimate(float(et), float(er))


def choose_radius(
    ds: Dataset,
    model: DynamicsModel,
    metric: Metric,
    residuals: tuple[np.ndarray, np.ndarray] | None = None,
    lipschitz: LipschitzEstimates | None = None,
) -> float:
    """Neighborhood radius where the nonparametric error estimate crosses
    the global mean parametric residual: C = mean residual / global ratio.

    `residuals` and `lipschitz` accept the precomputed per-transition
    residuals and global ratio estimates so callers that already hold them
    avoid a second all-pairs scan.

    Degenerate cases: a zero global ratio means every point predicts every
    other, so all data is always in range (C = inf); a perfect parametric
    model gives C = 0, collapsing selection to the parametric fallback.
    An empty dataset also yields C = 0.
    """
    if len(ds) == 0:
        return 0.0
    eps_t, _ = residuals if residuals is not None else parametric_residuals(
        ds, model, metric
    )
    finite = eps_t[np.isfinite(eps_t)]
    if len(finite) == 0:
        return 0.0
    mean_residual = float(finite.mean())
    if lipschitz is None:
        try:
            lipschitz = global_lipschitz(ds, metric)
        except InsufficientPairsError:
            return np.inf if mean_residual > 0 else 0.0
    if lipschitz.l_t == 0.0:
        return np.inf
    return mean_residual / lipschitz.l_t


# ---------------------------------------------------------------------------
# State-error recursion and the return-error bound
# ---------------------------------------------------------------------------


def rollforward_state_error(
    delta_prev: float, p: BoundParams, eps_t: float
) -> float:
    """One step of the state-error recursion: delta' = l_t * delta + eps_t."""
    if delta_prev < 0 or eps_t < 0:
        raise ValueError("state errors must be nonnegative")
    return p.l_t * delta_prev + eps_t


def state_error_closed_form(eps_t_seq: Sequence[float], p: BoundParams, t: int) -> float:
    """Explicit form of the recursion: sum_{k=0}^{t-1} l_t^k eps_t[t-k-1]."""
    return sum((p.l_t**k) * eps_t_seq[t - k - 1] for k in range(t))


def return_error_bound(
    eps_t_seq: Sequence[float], eps_r_seq: Sequence[float], p: BoundParams
) -> float:
    """Upper bound on |true return - simulated return| over a horizon.

    With delta(0) = 0 and delta(t) = l_t * delta(t-1) + eps_t[t-1], the
    bound is sum_t gamma^t * (l_r * delta(t) + eps_r[t]).  The last
    transition-error entry only matters through delta terms beyond the
    horizon and therefore never affects the value.
    """
    if len(eps_t_seq) != len(eps_r_seq):
        raise ValueError("error sequences must have equal length")
    total = 0.0
    delta = 0.0
    for t, eps_r in enumerate(eps_r_seq):
        if t > 0:
            delta = rollforward_state_error(delta, p, eps_t_seq[t - 1])
        total += (p.gamma**t) * (p.l_r * delta + eps_r)
    return total

"""Training-set bookkeeping and least-squares fitting of the template model.

For a fixed break point the template is linear in ``(gamma, gamma*c, alpha)``,
so the fit profiles ``d0`` over a grid (plus the observed distances, where the
near/far split changes), solves each linear subproblem with a QR factorization,
and polishes the best candidate with golden-section search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .model import TemplateModel, TunnelGeometry, path_loss

__all__ = [
    "AnchorObservation",
    "DegenerateFitError",
    "FitOptions",
    "FitResult",
    "IdentifiabilityError",
    "TrainingSet",
    "evaluate_residuals",
    "fit_from_training_set",
    "fit_template",
    "record_engagement",
]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class IdentifiabilityError(ValueError):
    """No candidate break point leaves both regions observed."""


class DegenerateFitError(ValueError):
    """The optimum has a non-positive exponent, so ``c`` cannot be recovered."""


@dataclass(frozen=True)
class AnchorObservation:
    anchor_id: Hashable
    bs: int
    distance: float
    path_loss: float
    iteration: int


class TrainingSet:
    """Append-only store of observations with running per-(anchor, BS) means."""

    def __init__(self):
        self.observations: list[AnchorObservation] = []
        self._means: dict[tuple[Hashable, int], list] = {}

    def __len__(self):
        return len(self.observations)

    def append(self, obs: AnchorObservation) -> None:
        if not obs.distance > 0:
            raise ValueError(f"distance must be positive, got {obs.distance}")
        if not math.isfinite(obs.path_loss):
            raise ValueError(f"path loss must be finite, got {obs.path_loss}")
        if obs.iteration < 0:
            raise ValueError("iteration must be non-negative")
        key = (obs.anchor_id, obs.bs)
        entry = self._means.get(key)
        if entry is None:
            self._means[key] = [obs.distance, obs.path_loss, 1]
        else:
            if entry[0] != obs.distance:
                raise ValueError(
                    f"anchor {obs.anchor_id!r} reported distance {obs.distance} to BS{obs.bs}, "
                    f"previously {entry[0]}"
                )
            entry[2] += 1
            entry[1] += (obs.path_loss - entry[1]) / entry[2]
        self.observations.append(obs)

    @property
    def per_point_means(self) -> dict[tuple[Hashable, int], tuple[float, float, int]]:
        return {k: (v[0], v[1], v[2]) for k, v in self._means.items()}

    def mean_points(self, bs: int | None = None) -> list[tuple[float, float]]:
        return [(v[0], v[1]) for (_, b), v in self._means.items() if bs is None or b == bs]

    def raw_points(self, bs: int | None = None) -> list[tuple[float, float]]:
        return [(o.distance, o.path_loss) for o in self.observations if bs is None or o.bs == bs]


def record_engagement(
    ts: TrainingSet,
    geometry: TunnelGeometry,
    anchor_index: int,
    l1: float,
    l2: float,
    iteration: int,
) -> TrainingSet:
    """Record the losses seen at both base stations when an object passes an anchor."""
    if not 0 <= anchor_index < len(geometry.anchor_positions):
        raise IndexError(
            f"anchor index {anchor_index} out of range for {len(geometry.anchor_positions)} anchors"
        )
    if not (math.isfinite(l1) and math.isfinite(l2)):
        raise ValueError("path losses must be finite")
    d1, d2 = geometry.anchor_distances(anchor_index)
    ts.append(AnchorObservation(anchor_index, 1, d1, float(l1), iteration))
    ts.append(AnchorObservation(anchor_index, 2, d2, float(l2), iteration))
    return ts


@dataclass(frozen=True)
class FitOptions:
    """Knobs for :func:`fit_template`.

    ``d0_bounds`` overrides the default search range (min to max observed
    distance). ``d0_hint`` shifts the grid so the hint is a node, e.g. a
    Fresnel-zone estimate. ``d0_fixed`` skips the search entirely.
    ``base_station`` restricts a training-set fit to one BS; ``raw_samples``
    fits every sample instead of per-anchor means.
    """

    grid_step: float = 0.5
    refine_tol: float = 1e-4
    d0_bounds: tuple[float, float] | None = None
    d0_hint: float | None = None
    d0_fixed: float | None = None
    alpha_nonneg: bool = False
    raw_samples: bool = False
    base_station: int | None = None

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        if not self.refine_tol > 0:
            raise ValueError("refine_tol must be positive")
        if self.d0_bounds is not None and not self.d0_bounds[0] <= self.d0_bounds[1]:
            raise ValueError("d0_bounds must be (low, high) with low <= high")
        if self.base_station not in (None, 1, 2):
            raise ValueError("base_station must be 1, 2 or None")


@dataclass(frozen=True)
class FitResult:
    model: TemplateModel
    sse: float
    near_count: int
    far_count: int
    d0_trace: list[tuple[float, float]] = field(repr=False)

    @property
    def n_points(self) -> int:
        return self.near_count + self.far_count


class _Profile:
    """Sorted data plus the per-candidate linear solve."""

    def __init__(self, points: Sequence[tuple[float, float]], alpha_nonneg: bool):
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        if arr.shape[0] < 4:
            raise ValueError(f"need at least 4 points, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("points must be finite")
        if not np.all(arr[:, 0] > 0):
            raise ValueError("all distances must be positive")
        # canonical order makes the result independent of input ordering
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        self.d = arr[order, 0]
        self.y = arr[order, 1]
        self.logd = 10.0 * np.log10(self.d)
        self.unique_d = np.unique(self.d)
        if self.unique_d.size < 2:
            raise ValueError("need at least 2 distinct distances")
        self.alpha_nonneg = alpha_nonneg

    def valid(self, cands: np.ndarray) -> np.ndarray:
        n_near_distinct = np.searchsorted(self.unique_d, cands, side="right")
        n_far = self.d.size - np.searchsorted(self.d, cands, side="right")
        return (n_near_distinct >= 2) & (n_far >= 1)

    def design(self, cands: np.ndarray) -> np.ndarray:
        near = self.d[None, :] <= cands[:, None]
        a = np.empty((cands.size, self.d.size, 3))
        a[..., 0] = np.where(near, self.logd[None, :], 10.0 * np.log10(cands)[:, None])
        a[..., 1] = 1.0
        a[..., 2] = np.where(near, 0.0, self.d[None, :] - cands[:, None])
        return a

    def solve(self, cands: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients ``(gamma, gamma*c, alpha)`` and sse for each valid candidate."""
        a = self.design(cands)
        coef = _batched_lstsq(a, self.y)
        if self.alpha_nonneg:
            neg = coef[:, 2] < 0
            if np.any(neg):
                sub = _batched_lstsq(a[neg][..., :2], self.y)
                coef[neg] = np.column_stack([sub, np.zeros(sub.shape[0])])
        resid = np.einsum("gij,gj->gi", a, coef) - self.y[None, :]
        return coef, np.einsum("gi,gi->g", resid, resid)

    def sse_at(self, c: float) -> float:
        cands = np.array([c])
        if not self.valid(cands)[0]:
            return math.inf
        return float(self.solve(cands)[1][0])


def _batched_lstsq(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(a)
    qty = np.einsum("gij,i->gj", q, y)
    return np.linalg.solve(r, qty[..., None])[..., 0]


def _grid(lo: float, hi: float, step: float, anchor: float) -> np.ndarray:
    k_lo = math.ceil((lo - anchor) / step)
    k_hi = math.floor((hi - anchor) / step)
    nodes = anchor + step * np.arange(k_lo, k_hi + 1, dtype=float)
    return np.unique(np.concatenate([[lo], nodes[(nodes >= lo) & (nodes <= hi)], [hi]]))


def _golden(f, lo: float, hi: float, tol: float, trace: list) -> None:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    trace += [(c, fc), (d, fd)]
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
            trace.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
            trace.append((d, fd))
    # a few parabolic steps through the best three points sharpen smooth minima
    for _ in range(3):
        pts = sorted((t for t in trace if lo <= t[0] <= hi and math.isfinite(t[1])), key=lambda t: t[1])[:3]
        if len(pts) < 3:
            return
        (x0, f0), (x1, f1), (x2, f2) = sorted(pts)
        den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0)
        if den == 0:
            return
        x = x1 - 0.5 * ((x1 - x0) ** 2 * (f1 - f2) - (x1 - x2) ** 2 * (f1 - f0)) / den
        if not (x0 < x < x2) or any(x == t[0] for t in trace):
            return
        trace.append((x, f(x)))


def fit_template(points: Sequence[tuple[float, float]], options: FitOptions | None = None) -> FitResult:
    """Least-squares fit of the four template parameters to ``(distance, loss)`` points."""
    options = options or FitOptions()
    prof = _Profile(points, options.alpha_nonneg)

    if options.d0_fixed is not None:
        cands = np.array([float(options.d0_fixed)])
    else:
        lo, hi = options.d0_bounds or (float(prof.d[0]), float(prof.d[-1]))
        anchor = lo if options.d0_hint is None else float(options.d0_hint)
        cands = _grid(lo, hi, options.grid_step, anchor)
        # observed distances are where the partition changes; narrow minima sit next to them
        inside = prof.unique_d[(prof.unique_d >= lo) & (prof.unique_d <= hi)]
        cands = np.union1d(cands, inside)
        cands = cands[cands > 0]

    ok = prof.valid(cands)
    if not np.any(ok):
        raise IdentifiabilityError(
            "no candidate break point leaves at least 2 distinct distances in the near "
            "region and 1 point in the far region; anchors must cover both regions"
        )
    cands = cands[ok]
    _, sse = prof.solve(cands)
    trace = [(float(c), float(s)) for c, s in zip(cands, sse)]

    if options.d0_fixed is None and cands.size > 0:
        ib = int(np.argmin(sse))
        # stay inside the feasible span [second distinct distance, largest distance)
        lo_b = max(lo, float(cands[ib]) - options.grid_step, float(prof.unique_d[1]))
        hi_b = min(hi, float(cands[ib]) + options.grid_step, float(np.nextafter(prof.d[-1], 0)))
        if hi_b - lo_b > options.refine_tol:
            refine: list[tuple[float, float]] = []
            _golden(prof.sse_at, lo_b, hi_b, options.refine_tol, refine)
            trace += [(float(c), float(s)) for c, s in refine if math.isfinite(s)]

    # smallest sse wins; ties go to the smaller break point
    best_d0, _ = min(trace, key=lambda t: (t[1], t[0]))
    coef, sse_best = prof.solve(np.array([best_d0]))
    p1, p2, p3 = (float(v) for v in coef[0])
    if not p1 > 0:
        raise DegenerateFitError(
            f"fitted exponent is {p1:.6g} at d0={best_d0:.4f} m; the constant term "
            "cannot be recovered"
        )
    model = TemplateModel(gamma=p1, c=p2 / p1, d0=best_d0, alpha=p3)
    near = int(np.count_nonzero(prof.d <= best_d0))
    return FitResult(model, float(sse_best[0]), near, prof.d.size - near, trace)


def fit_from_training_set(ts: TrainingSet, options: FitOptions | None = None) -> FitResult:
    """Fit on the per-anchor mean losses (or every raw sample, per ``options``)."""
    options = options or FitOptions()
    if len(ts) == 0:
        raise ValueError("training set is empty")
    if options.raw_samples:
        points = ts.raw_points(options.base_station)
    else:
        points = ts.mean_points(options.base_station)
    return fit_template(points, options)


def evaluate_residuals(
    model: TemplateModel, points: Iterable[tuple[float, float]]
) -> tuple[float, np.ndarray]:
    """Residuals ``model - measured`` and their sum of squares."""
    arr = np.asarray(list(points), dtype=float).reshape(-1, 2)
    resid = path_loss(model, arr[:, 0]) - arr[:, 1]
    return float(np.dot(resid, resid)), resid

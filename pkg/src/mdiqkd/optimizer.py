"""Finite-difference gradient ascent with a neighbourhood escape step.

The search runs over the twelve source parameters.  Each iteration takes
central differences coordinate by coordinate (a component is zeroed when both
probes are worse than the centre), then a backtracking line search along the
normalised gradient.  When the ascent stalls, every point
``x + step * delta`` with ``delta in {-1, 0, 1}^12`` is a jump candidate; the
search jumps to the best strictly better neighbour and resumes.  Intermediate
stalls look at a random subsample of that neighbourhood, the final stall at
all ``3^12 - 1`` points.

Objectives are *batch* callables: ``objective(X)`` takes an array of shape
``(B, 12)`` and returns ``B`` values.  :func:`vectorize` adapts a scalar one.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .sources import MU_CAP, ParamVector

__all__ = [
    "OptimizerConfig",
    "TraceEntry",
    "OptimizationTrace",
    "OptimizationResult",
    "InfeasibleInitialError",
    "project",
    "is_feasible",
    "vectorize",
    "fd_gradient",
    "neighborhood_jump",
    "optimize",
    "random_feasible",
]

log = logging.getLogger(__name__)

BatchObjective = Callable[[np.ndarray], np.ndarray]

MU_IDX = np.array([0, 1, 2, 6, 7, 8])
P_IDX = np.array([3, 4, 5, 9, 10, 11])


class InfeasibleInitialError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    fd_step_mu: float = 1e-4
    fd_step_p: float = 1e-4
    step_init: float = 0.05
    backtrack: float = 0.5
    step_min: float = 1e-6
    neighborhood_step: float = 0.01
    max_iter: int = 500
    tol: float = 1e-4
    multistart: int = 8
    seed: int = 0
    neighborhood_samples: int = 2000
    prescan: int = 20_000
    full_neighborhood: Literal["final", "always", "never"] = "final"
    order_margin: float = 1e-4
    mu_cap: float = MU_CAP
    floor: float = 1e-4

    def __post_init__(self):
        for name in ("fd_step_mu", "fd_step_p", "step_init", "step_min", "neighborhood_step", "tol", "floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.prescan < 0:
            raise ValueError("prescan must be non-negative")
        if self.multistart < 1 or self.max_iter < 1:
            raise ValueError("multistart and max_iter must be at least 1")
        if self.full_neighborhood not in ("final", "always", "never"):
            raise ValueError(f"unknown full_neighborhood mode {self.full_neighborhood!r}")

    @property
    def fd_steps(self) -> np.ndarray:
        h = np.full(12, self.fd_step_p)
        h[MU_IDX] = self.fd_step_mu
        return h


@dataclass(frozen=True)
class TraceEntry:
    start: int
    iteration: int
    params: tuple[float, ...]
    value: float
    move: str  # start | gradient | jump | terminate


@dataclass
class OptimizationTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    projected_probes: int = 0
    evaluations: int = 0

    def add(self, start, iteration, x, value, move):
        self.entries.append(TraceEntry(start, iteration, tuple(float(v) for v in x), float(value), move))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class OptimizationResult:
    best: ParamVector
    value: float
    trace: OptimizationTrace
    start_values: tuple[float, ...]


# ---------------------------------------------------------------------------
# feasibility


def _project_simplex(p: np.ndarray, floor: float) -> np.ndarray:
    """Project rows of ``p`` (shape ``(B, 3)``) onto ``{p >= floor, sum <= 1 - floor}``."""
    p = np.maximum(p, floor)
    budget = 1.0 - 4 * floor  # mass left once every source, vacuum included, has its floor
    q = p - floor
    over = q.sum(axis=1) > budget
    if np.any(over):
        rows = q[over]
        u = -np.sort(-rows, axis=1)
        css = np.cumsum(u, axis=1) - budget
        k = np.arange(1, rows.shape[1] + 1)
        cond = u - css / k > 0
        rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(len(rows)), rho] / (rho + 1)
        q[over] = np.maximum(rows - theta[:, None], 0.0)
    return q + floor


def project(X: np.ndarray, cfg: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Map parameter rows into the feasible box (batch or single vector)."""
    X = np.array(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    lo, cap, margin = cfg.floor, cfg.mu_cap, cfg.order_margin
    X[:, MU_IDX] = np.clip(X[:, MU_IDX], lo, cap)
    for ix, iy in ((0, 1), (6, 7)):
        bad = X[:, iy] < X[:, ix] + margin
        if np.any(bad):
            mid = (X[bad, ix] + X[bad, iy]) / 2
            mid = np.clip(mid, lo + margin / 2, cap - margin / 2)
            X[bad, ix] = mid - margin / 2
            X[bad, iy] = mid + margin / 2
    for sl in (slice(3, 6), slice(9, 12)):
        X[:, sl] = _project_simplex(X[:, sl], cfg.floor)
    return X[0] if single else X


def is_feasible(x: np.ndarray, cfg: OptimizerConfig = OptimizerConfig(), atol: float = 1e-12) -> bool:
    x = np.asarray(x, dtype=float)
    mus, ps = x[MU_IDX], x[P_IDX]
    return bool(
        np.all(mus >= cfg.floor - atol)
        and np.all(mus <= cfg.mu_cap + atol)
        and x[1] - x[0] >= cfg.order_margin - atol
        and x[7] - x[6] >= cfg.order_margin - atol
        and np.all(ps >= cfg.floor - atol)
        and ps[:3].sum() <= 1 - cfg.floor + atol
        and ps[3:].sum() <= 1 - cfg.floor + atol
    )


def random_feasible(rng: np.random.Generator, n: int, cfg: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Pseudo-random feasible points from a box where decoy-state key rates are typically non-zero."""
    out = np.empty((n, 12))
    for half in (0, 6):
        mu_x = rng.uniform(0.005, 0.2, n)
        mu_y = mu_x + rng.uniform(0.05, 0.5, n)
        mu_z = rng.uniform(0.1, 0.9, n)
        p_x = rng.uniform(0.02, 0.3, n)
        p_y = rng.uniform(0.02, 0.3, n)
        p_z = rng.uniform(0.3, 0.9, n)
        scale = np.minimum(1.0, 0.95 / (p_x + p_y + p_z))
        out[:, half:half + 6] = np.column_stack([mu_x, mu_y, mu_z, p_x * scale, p_y * scale, p_z * scale])
    return project(out, cfg)


def vectorize(fn: Callable[[np.ndarray], float]) -> BatchObjective:
    """Wrap a scalar objective of one 12-vector as a batch objective."""

    def batch(X):
        return np.array([fn(x) for x in np.atleast_2d(X)], dtype=float)

    return batch


# ---------------------------------------------------------------------------
# building blocks


def _gradient(x, fx, objective, cfg, trace=None):
    h = cfg.fd_steps
    eye = np.eye(12)
    plus_raw = x + eye * h
    minus_raw = x - eye * h
    plus = project(plus_raw, cfg)
    minus = project(minus_raw, cfg)
    if trace is not None:
        trace.projected_probes += int(np.sum(np.any(plus != plus_raw, axis=1)))
        trace.projected_probes += int(np.sum(np.any(minus != minus_raw, axis=1)))
        trace.evaluations += 24
    vals = objective(np.vstack([plus, minus]))
    f_plus, f_minus = vals[:12], vals[12:]
    span = np.diag(plus - minus)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(span > 0, (f_plus - f_minus) / span, 0.0)
    g[(f_plus < fx) & (f_minus < fx)] = 0.0
    return g


def fd_gradient(x, objective: BatchObjective, cfg: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Central-difference gradient with the both-probes-worse zeroing rule.

    Probes leaving the feasible set are projected back, and the difference
    quotient uses the actual (projected) probe spacing.
    """
    x = np.asarray(x.to_array() if isinstance(x, ParamVector) else x, dtype=float)
    fx = float(objective(x[None, :])[0])
    return _gradient(x, fx, objective, cfg)


_OFFSETS: np.ndarray | None = None


def _all_offsets() -> np.ndarray:
    global _OFFSETS
    if _OFFSETS is None:
        grid = np.array(list(itertools.product((-1, 0, 1), repeat=12)), dtype=np.int8)
        _OFFSETS = grid[np.any(grid != 0, axis=1)]
    return _OFFSETS


def neighborhood_jump(
    x,
    objective: BatchObjective,
    step: float,
    cfg: OptimizerConfig = OptimizerConfig(),
    *,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
    fx: float | None = None,
    chunk: int = 50_000,
) -> tuple[np.ndarray, float] | None:
    """Best strictly better point among ``x + step * delta``, or ``None``.

    ``samples=None`` scans all ``3^12 - 1`` neighbours; otherwise a random
    subset of that size drawn from ``rng``.  Neighbours are projected into
    the feasible set; those that collapse onto ``x`` are skipped.
    """
    x = np.asarray(x.to_array() if isinstance(x, ParamVector) else x, dtype=float)
    if fx is None:
        fx = float(objective(x[None, :])[0])
    offsets = _all_offsets()
    if samples is not None and samples < len(offsets):
        rng = rng if rng is not None else np.random.default_rng(0)
        offsets = offsets[np.sort(rng.choice(len(offsets), samples, replace=False))]
    best_val, best_x = fx, None
    for i in range(0, len(offsets), chunk):
        pts = project(x + step * offsets[i:i + chunk], cfg)
        moved = np.any(np.abs(pts - x) > 1e-15, axis=1)
        if not np.any(moved):
            continue
        pts = pts[moved]
        vals = objective(pts)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_x = float(vals[j]), pts[j]
    if best_x is None:
        return None
    return best_x, best_val


def _line_search(x, fx, g, objective, cfg, trace):
    norm = np.linalg.norm(g)
    if norm == 0:
        return None
    d = g / norm
    steps = []
    s = cfg.step_init
    while s >= cfg.step_min:
        steps.append(s)
        s *= cfg.backtrack
    cands = project(x + np.outer(steps, d), cfg)
    vals = objective(cands)
    trace.evaluations += len(steps)
    # largest step that improves, i.e. the first hit of a sequential backtracking search
    better = np.flatnonzero(vals > fx)
    if better.size == 0:
        return None
    i = int(better[0])
    return cands[i], float(vals[i])


def _improved(new, old, tol):
    return new - old > tol * abs(old)


def _ascend(x, fx, objective, cfg, trace, start, rng, it0=0, final_full=True):
    """Gradient ascent with jumps until no move helps; returns ``(x, fx, iterations)``."""
    it = it0
    while it < cfg.max_iter:
        it += 1
        g = _gradient(x, fx, objective, cfg, trace)
        step = _line_search(x, fx, g, objective, cfg, trace)
        if step is not None:
            x_new, f_new = step
            progressed = _improved(f_new, fx, cfg.tol)
            x, fx = x_new, f_new
            trace.add(start, it, x, fx, "gradient")
            if progressed:
                continue
        if cfg.full_neighborhood == "always":
            jump = neighborhood_jump(x, objective, cfg.neighborhood_step, cfg, fx=fx)
            trace.evaluations += len(_all_offsets())
        else:
            jump = neighborhood_jump(
                x, objective, cfg.neighborhood_step, cfg,
                samples=cfg.neighborhood_samples, rng=rng, fx=fx,
            )
            trace.evaluations += cfg.neighborhood_samples
            if jump is None and final_full and cfg.full_neighborhood == "final":
                jump = neighborhood_jump(x, objective, cfg.neighborhood_step, cfg, fx=fx)
                trace.evaluations += len(_all_offsets())
        if jump is None:
            break
        x, fx = jump
        trace.add(start, it, x, fx, "jump")
    trace.add(start, it, x, fx, "terminate")
    return x, fx, it


def optimize(
    initial,
    objective: BatchObjective,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> OptimizationResult:
    """Maximise ``objective`` from ``initial`` plus ``cfg.multistart - 1`` seeded restarts.

    Each start runs the ascent with subsampled neighbourhood jumps; the best
    end point then gets the exhaustive neighbourhood check (and further ascent
    if that finds a better point).
    """
    x0 = np.asarray(initial.to_array() if isinstance(initial, ParamVector) else initial, dtype=float)
    if x0.shape != (12,) or not is_feasible(x0, cfg):
        raise InfeasibleInitialError(f"initial point is not feasible: {x0}")
    rng = np.random.default_rng(cfg.seed)
    trace = OptimizationTrace()
    starts = [x0]
    if cfg.multistart > 1:
        pool = random_feasible(rng, max(cfg.prescan, cfg.multistart - 1), cfg)
        if cfg.prescan:
            # the rate is exactly zero on most of the box at long distance, so
            # restarts come from the best points of a random pre-scan
            vals = np.asarray(objective(pool), dtype=float)
            trace.evaluations += len(pool)
            order = np.lexsort((np.arange(len(pool)), -vals))
            pool = pool[order]
        starts.extend(pool[: cfg.multistart - 1])

    finals = []
    for k, xs in enumerate(starts):
        fs = float(objective(xs[None, :])[0])
        trace.evaluations += 1
        trace.add(k, 0, xs, fs, "start")
        x, fx, it = _ascend(xs, fs, objective, cfg, trace, k, rng, final_full=False)
        finals.append((fx, -k, x, it))
        log.debug("start %d finished at %.6e after %d iterations", k, fx, it)

    fx, negk, x, it = max(finals, key=lambda t: (t[0], t[1]))
    k = -negk
    if cfg.full_neighborhood == "final":
        x, fx, _ = _ascend(x, fx, objective, cfg, trace, k, rng, it0=it, final_full=True)
    return OptimizationResult(ParamVector.from_array(x), fx, trace, tuple(f for f, *_ in finals))

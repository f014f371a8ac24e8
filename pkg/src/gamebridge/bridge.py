"""Time-sliced grid sets and the programmed iteration.

Sets live on a uniform cell grid with one occupancy slice per time
``t_i = i * horizon / N``.  The absorption operator works backward over the
slices for each sampled adversary value ``v`` (held constant over the whole
horizon) and keeps the cells from which some sampled player control sequence
reaches the target while staying in the current set.

Landing-point membership comes in three modes:

``interpolate`` (default)
    A level function (signed distance in cell units, clamped to
    ``[-band, band]``) is carried backward and multilinearly interpolated at
    one-step landing points.  Sub-cell displacements accumulate instead of
    being rounded away each step.
``nearest``
    The landing point is rounded to its cell.
``conservative``
    The landing cell or any of its Chebyshev neighbours counts.
"""
from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .flows import DEFAULT_SUBSTEPS, DivergenceError, flow_const
from .gamespec import (
    AuxiliarySystem,
    Controllability,
    Cylinder,
    ExplicitGrid,
    GameProblem,
    TerminalSet,
    TransformedProblem,
)
from .vectorfield import FieldDomainError, VectorField

log = logging.getLogger(__name__)

MODES = ("interpolate", "nearest", "conservative")
THREADS_ENV = "GAMEBRIDGE_THREADS"


class GridMismatchError(ValueError):
    pass


class FlowEvaluationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    bounds: tuple[tuple[float, float], ...]
    cells: tuple[int, ...]
    time_steps: int
    horizon: float = 1.0

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "time_steps", int(self.time_steps))
        object.__setattr__(self, "horizon", float(self.horizon))
        if len(bounds) != len(cells) or not bounds:
            raise ValueError("bounds and cells must have the same nonzero length")
        if any(not a < b for a, b in bounds):
            raise ValueError(f"degenerate bounds {bounds}")
        if any(c < 2 for c in cells):
            raise ValueError("at least 2 cells per axis are required")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def lo(self) -> np.ndarray:
        return np.array([a for a, _ in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b for _, b in self.bounds])

    @property
    def widths(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.cells)

    @property
    def dt(self) -> float:
        return self.horizon / self.time_steps

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.time_steps + 1,) + self.cells

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def times(self) -> np.ndarray:
        return self.horizon * np.arange(self.time_steps + 1) / self.time_steps

    def axis_centers(self, axis: int) -> np.ndarray:
        a, _ = self.bounds[axis]
        return a + (np.arange(self.cells[axis]) + 0.5) * self.widths[axis]

    def centers(self) -> np.ndarray:
        """Cell centers in C order, shape ``(n_cells, ndim)``."""
        mesh = np.meshgrid(*(self.axis_centers(i) for i in range(self.ndim)), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def center_of(self, index) -> np.ndarray:
        return self.lo + (np.asarray(index, dtype=float) + 0.5) * self.widths

    def index_coords(self, x) -> np.ndarray:
        """Continuous index coordinates; cell ``i`` has its center at ``i``."""
        return (np.asarray(x, dtype=float) - self.lo) / self.widths - 0.5

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def nearest_cell(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Multi-index of the cell containing each point, and an inside-bounds mask."""
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.lo) / self.widths).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.cells) - 1)
        return idx, self.inside(x)

    def flat(self, idx) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.moveaxis(np.asarray(idx), -1, 0)), self.cells)

    def slice_index(self, t: float, after: bool = False) -> int:
        s = t / self.dt
        i = int(np.ceil(s - 1e-9)) if after else int(np.floor(s + 0.5))
        return min(max(i, 0), self.time_steps)


class TimeSlicedGrid:
    """Immutable occupancy array of shape ``(N + 1, *cells)``."""

    __slots__ = ("spec", "bits")

    def __init__(self, spec: GridSpec, bits):
        bits = np.array(bits, dtype=bool)
        if bits.shape != spec.shape:
            raise GridMismatchError(f"bits shape {bits.shape} does not match grid {spec.shape}")
        bits.setflags(write=False)
        self.spec = spec
        self.bits = bits

    @classmethod
    def full(cls, spec: GridSpec) -> "TimeSlicedGrid":
        return cls(spec, np.ones(spec.shape, dtype=bool))

    @classmethod
    def empty(cls, spec: GridSpec) -> "TimeSlicedGrid":
        return cls(spec, np.zeros(spec.shape, dtype=bool))

    def section(self, i: int) -> np.ndarray:
        return self.bits[i]

    def count(self) -> int:
        return int(self.bits.sum())

    def slice_counts(self) -> list[int]:
        return [int(s.sum()) for s in self.bits]

    def _check(self, other: "TimeSlicedGrid"):
        if self.spec != other.spec:
            raise GridMismatchError("grids are defined on different specs")

    def __eq__(self, other):
        if not isinstance(other, TimeSlicedGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.bits, other.bits)

    __hash__ = None

    def issubset(self, other: "TimeSlicedGrid") -> bool:
        self._check(other)
        return not np.any(self.bits & ~other.bits)

    def __and__(self, other):
        self._check(other)
        return TimeSlicedGrid(self.spec, self.bits & other.bits)

    def __or__(self, other):
        self._check(other)
        return TimeSlicedGrid(self.spec, self.bits | other.bits)

    def dilate(self, radius: int) -> "TimeSlicedGrid":
        return TimeSlicedGrid(self.spec, _dilate(self.bits, radius))

    def erode(self, radius: int) -> "TimeSlicedGrid":
        if radius <= 0:
            return self
        st = np.ones((1,) + (3,) * self.spec.ndim, dtype=bool)
        return TimeSlicedGrid(
            self.spec, ndimage.binary_erosion(self.bits, st, iterations=radius, border_value=0)
        )

    def __repr__(self):
        return f"TimeSlicedGrid({self.spec}, occupied={self.count()})"


def _dilate(bits: np.ndarray, radius: int) -> np.ndarray:
    """Per-slice Chebyshev dilation (axis 0 is time and is not dilated)."""
    if radius <= 0:
        return bits.copy()
    size = (1,) + (2 * radius + 1,) * (bits.ndim - 1)
    return ndimage.maximum_filter(bits, size=size, mode="constant", cval=False)


def build_target_cylinder(F: TerminalSet, spec: GridSpec, final_only: bool = False) -> TimeSlicedGrid:
    """Cells whose center lies in ``F`` (containing cells for a point), on every slice or only at N."""
    if F.kind == "point":
        p = np.asarray(F.data)
        if p.shape != (spec.ndim,):
            raise GridMismatchError("terminal point dimension does not match grid")
        mask = np.ones(spec.cells, dtype=bool)
        for ax in range(spec.ndim):
            a = spec.lo[ax] + np.arange(spec.cells[ax]) * spec.widths[ax]
            b = a + spec.widths[ax]
            hit = (a <= p[ax]) & (p[ax] <= b)
            shape = [1] * spec.ndim
            shape[ax] = -1
            mask &= hit.reshape(shape)
    else:
        mask = F.contains(spec.centers()).reshape(spec.cells)
    bits = np.zeros(spec.shape, dtype=bool)
    if final_only:
        bits[-1] = mask
    else:
        bits[:] = mask
    return TimeSlicedGrid(spec, bits)


# ---------------------------------------------------------------------------
# level functions and landing stencils


def signed_distance(mask: np.ndarray, band: float) -> np.ndarray:
    """Signed distance (cell units) to the mask boundary, zero halfway between cells."""
    if mask.all():
        return np.full(mask.shape, -band)
    if not mask.any():
        return np.full(mask.shape, band)
    inner = ndimage.distance_transform_edt(mask)
    outer = ndimage.distance_transform_edt(~mask)
    phi = np.where(mask, 0.5 - inner, outer - 0.5)
    return np.clip(phi, -band, band)


def reinitialize(V: np.ndarray, band: float) -> np.ndarray:
    """Replace ``V`` by an approximate signed distance to its zero level.

    Each axis contributes the in-line distance to the nearest sign change
    along it (sub-cell, from the linear crossing on the edge).  The axis
    distances combine as for a planar front, ``1/sqrt(sum 1/d_a^2)``.  On the
    negative side, axes along which a cell is one cell thick are skipped, so
    sets that are flat in some direction keep their depth along the others.
    Cells with no in-line crossing fall back to a Euclidean estimate.  Signs
    (hence occupancy) are preserved, and negative values are never raised.
    """
    neg = V <= 0
    if neg.all() or not neg.any():
        return np.where(neg, -band, band).astype(float)
    nd = V.ndim
    theta = []
    thin = []
    for ax in range(nd):
        th_ax = np.full(V.shape, np.inf)
        n_cross = np.zeros(V.shape, dtype=np.int8)
        for shift in (1, -1):
            nb = np.roll(V, shift, axis=ax)
            nb_neg = np.roll(neg, shift, axis=ax)
            edge = np.ones(V.shape, dtype=bool)
            sl = [slice(None)] * nd
            sl[ax] = 0 if shift == 1 else -1
            edge[tuple(sl)] = False
            cross = edge & (nb_neg != neg)
            n_cross += cross
            with np.errstate(divide="ignore", invalid="ignore"):
                th_ax = np.minimum(th_ax, np.where(cross, V / (V - nb), np.inf))
        theta.append(th_ax)
        thin.append(n_cross == 2)
    front = np.zeros(V.shape, dtype=bool)
    for th_ax in theta:
        front |= np.isfinite(th_ax)
    d_front = np.min(theta, axis=0)
    out = np.empty(V.shape)
    for side, skip_thin in ((neg, True), (~neg, False)):
        inv_sq = np.zeros(V.shape)
        for ax in range(nd):
            seeds = np.isfinite(theta[ax]) & side
            if not seeds.any():
                continue
            # in-line distance: other axes weighted so heavily they never win
            sampling = [1.0 if k == ax else 1e6 for k in range(nd)]
            dist, ind = ndimage.distance_transform_edt(~seeds, sampling=sampling, return_indices=True)
            D = dist + theta[ax][tuple(ind)]
            use = side & (dist < 1e5)
            if skip_thin:
                use &= ~thin[ax]
            inv_sq[use] += 1.0 / np.maximum(D[use], 1e-12) ** 2
        seeds = front & side
        dist, ind = ndimage.distance_transform_edt(~seeds, return_indices=True)
        fallback = dist + d_front[tuple(ind)]
        with np.errstate(divide="ignore"):
            planar = np.where(inv_sq > 0, 1.0 / np.sqrt(inv_sq), np.inf)
        val = np.where(inv_sq > 0, planar, fallback) if skip_thin else np.minimum(planar, fallback)
        out[side] = val[side]
    out = np.minimum(out, band)
    # inside values only ever deepen: a finite control sample leaves the
    # interior level too shallow, never too deep
    return np.where(neg, np.minimum(V, -out), np.maximum(out, 1e-12))


@dataclass
class Stencil:
    idx: np.ndarray  # (m, corners) flat cell indices
    weights: np.ndarray | None  # (m, corners); None in nearest mode
    valid: np.ndarray  # (m,)

    @property
    def dropped(self) -> int:
        return int((~self.valid).sum())


def make_stencil(spec: GridSpec, points: np.ndarray, mode: str) -> Stencil:
    valid = spec.inside(points)
    cells = np.asarray(spec.cells)
    if mode != "interpolate":
        idx, _ = spec.nearest_cell(points)
        return Stencil(spec.flat(idx)[:, None], None, valid)
    q = np.clip(spec.index_coords(points), 0.0, cells - 1.0)
    base = np.minimum(np.floor(q).astype(np.int64), cells - 2)
    frac = q - base
    corners = list(itertools.product((0, 1), repeat=spec.ndim))
    idx = np.empty((len(points), len(corners)), dtype=np.int64)
    w = np.empty((len(points), len(corners)))
    for k, c in enumerate(corners):
        c = np.asarray(c)
        idx[:, k] = spec.flat(base + c)
        w[:, k] = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
    idx[~valid] = 0
    w[~valid] = 0.0
    return Stencil(idx, w, valid)


class _Dynamics:
    """Field plus player/adversary parameter samples."""

    def __init__(self, field_: VectorField, players: Sequence[dict], adversaries: Sequence[dict]):
        self.field = field_
        self.players = list(players)
        self.adversaries = list(adversaries)

    @classmethod
    def of(cls, problem) -> "_Dynamics":
        if isinstance(problem, GameProblem):
            return cls(problem.f, problem.player_params(), problem.adversary_params())
        if isinstance(problem, TransformedProblem):
            return cls(problem.f_star, problem.player_params(), problem.adversary_params())
        if isinstance(problem, AuxiliarySystem):
            return cls(problem.g, problem.control_params(), [{}])
        raise TypeError(f"unsupported problem type {type(problem).__name__}")


def _describe(params: dict) -> str:
    return ", ".join(f"{k}={np.asarray(v).tolist()}" for k, v in params.items())


class FlowCache:
    """One-step landing stencils from every cell center, keyed by (adversary, player)."""

    def __init__(self, dyn: _Dynamics, spec: GridSpec, mode: str, substeps: int):
        self.dyn = dyn
        self.spec = spec
        self.mode = mode
        self.substeps = substeps
        self._centers = spec.centers()
        self._stencils: dict[tuple[int, int], Stencil] = {}

    def stencil(self, vi: int, pi: int) -> Stencil:
        key = (vi, pi)
        st = self._stencils.get(key)
        if st is None:
            params = {**self.dyn.players[pi], **self.dyn.adversaries[vi]}
            try:
                land = flow_const(self.dyn.field, self._centers, params, self.spec.dt, self.substeps)
            except (DivergenceError, FieldDomainError) as exc:
                cell = self._first_bad_cell(params)
                raise FlowEvaluationError(
                    f"flow failed from cell {cell} with {_describe(params)}: {exc}"
                ) from exc
            st = make_stencil(self.spec, land, self.mode)
            self._stencils[key] = st
        return st

    def _first_bad_cell(self, params):
        for k, c in enumerate(self._centers):
            try:
                flow_const(self.dyn.field, c, params, self.spec.dt, self.substeps)
            except (DivergenceError, FieldDomainError):
                return tuple(int(i) for i in np.unravel_index(k, self.spec.cells))
        return None

    @property
    def dropped(self) -> int:
        return sum(st.dropped for st in self._stencils.values())


# ---------------------------------------------------------------------------
# absorption operator


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class AbsorptionOperator:
    """Discrete program absorption operator E -> A(E) for a fixed target M."""

    def __init__(self, problem, target: TimeSlicedGrid, mode: str = "interpolate",
                 substeps: int = DEFAULT_SUBSTEPS, band: float = 2.0, cache: FlowCache | None = None,
                 outside_level: float = 1e-6, reinit: bool = True):
        self.outside_level = float(outside_level)
        self.reinit = reinit
        if mode not in MODES:
            raise ValueError(f"unknown membership mode {mode!r}; expected one of {MODES}")
        self.problem = problem
        self.target = target
        self.spec = target.spec
        self.mode = mode
        self.band = float(band)
        self.dyn = _Dynamics.of(problem)
        if self.dyn.field.state_dim != self.spec.ndim:
            raise GridMismatchError("problem state dimension does not match grid")
        self.cache = cache or FlowCache(self.dyn, self.spec, mode, substeps)
        self._phi_target = None

    def __call__(self, E: TimeSlicedGrid) -> TimeSlicedGrid:
        if E.spec != self.spec:
            raise GridMismatchError("E and M are on different grids")
        if not self.target.issubset(E):
            log.warning("target is not contained in E")
        n_adv = len(self.dyn.adversaries)
        threads = _threads()
        if threads > 1 and n_adv > 1:
            for vi in range(n_adv):  # fill the cache before fanning out
                for pi in range(len(self.dyn.players)):
                    self.cache.stencil(vi, pi)
            with ThreadPoolExecutor(threads) as pool:
                tubes = list(pool.map(lambda vi: self.tube(E, vi), range(n_adv)))
        else:
            tubes = [self.tube(E, vi) for vi in range(n_adv)]
        out = E.bits.copy()
        for t in tubes:
            out &= t
        return TimeSlicedGrid(self.spec, out)

    def _target_levels(self):
        if self._phi_target is None:
            self._phi_target = [signed_distance(s, self.band).ravel() for s in self.target.bits]
        return self._phi_target

    def tube(self, E: TimeSlicedGrid, vi: int) -> np.ndarray:
        """Cells of E from which, against adversary sample ``vi``, the target is reached inside E."""
        spec = self.spec
        N = spec.time_steps
        n_pl = len(self.dyn.players)
        stencils = [self.cache.stencil(vi, pi) for pi in range(n_pl)]
        out = np.zeros(spec.shape, dtype=bool)
        Mb = self.target.bits.reshape(N + 1, -1)
        Eb = E.bits.reshape(N + 1, -1)
        if self.mode == "interpolate":
            phiM = self._target_levels()
            d = self.outside_level
            V = phiM[N].copy()
            V[~Eb[N]] = np.maximum(V[~Eb[N]], d)
            out[N] = (V <= 0).reshape(spec.cells)
            for i in range(N - 1, -1, -1):
                cand = np.full(spec.n_cells, np.inf)
                for st in stencils:
                    vals = np.einsum("ij,ij->i", V[st.idx], st.weights)
                    vals[~st.valid] = np.inf
                    np.minimum(cand, vals, out=cand)
                V = np.clip(np.minimum(phiM[i], cand), -self.band, self.band)
                if self.reinit:
                    V = reinitialize(V.reshape(spec.cells), self.band).ravel()
                out_e = ~Eb[i]
                V[out_e] = np.maximum(V[out_e], d)
                out[i] = (V <= 0).reshape(spec.cells)
            return out
        T = Eb[N] & Mb[N]
        out[N] = T.reshape(spec.cells)
        for i in range(N - 1, -1, -1):
            nxt = T
            if self.mode == "conservative":
                nxt = _dilate(T.reshape((1,) + spec.cells), 1).ravel()
            reach = np.zeros(spec.n_cells, dtype=bool)
            for st in stencils:
                reach |= st.valid & nxt[st.idx[:, 0]]
            T = Eb[i] & (Mb[i] | reach)
            out[i] = T.reshape(spec.cells)
        return out


def absorption_step(E: TimeSlicedGrid, M: TimeSlicedGrid, problem, mode: str = "interpolate",
                    substeps: int = DEFAULT_SUBSTEPS, cache: FlowCache | None = None) -> TimeSlicedGrid:
    """A(E) for target M; pass a shared ``cache`` to reuse flow evaluations."""
    if E.spec != M.spec:
        raise GridMismatchError("E and M are on different grids")
    return AbsorptionOperator(problem, M, mode, substeps, cache=cache)(E)


def build_controllability_target(aux: AuxiliarySystem, spec: GridSpec, mode: str = "interpolate",
                                 substeps: int = DEFAULT_SUBSTEPS) -> TimeSlicedGrid:
    """Positions from which some piecewise-constant w-control of g reaches F at the horizon."""
    if aux.state_dim != spec.ndim:
        raise GridMismatchError("auxiliary system dimension does not match grid")
    final = build_target_cylinder(aux.F, spec, final_only=True)
    op = AbsorptionOperator(aux, final, mode, substeps)
    out = op(TimeSlicedGrid.full(spec))
    if op.cache.dropped:
        log.info("controllability target: %d landing points left the grid", op.cache.dropped)
    return out


def target_grid(problem, spec: GridSpec, mode: str = "interpolate",
                substeps: int = DEFAULT_SUBSTEPS) -> TimeSlicedGrid:
    """Grid target for a game: M for the original game, {horizon} x F for the transformed one."""
    if isinstance(problem, TransformedProblem):
        return build_target_cylinder(problem.F, spec, final_only=True)
    tgt = problem.target
    if isinstance(tgt, Cylinder):
        return build_target_cylinder(tgt.F, spec)
    if isinstance(tgt, Controllability):
        return build_controllability_target(tgt.aux, spec, mode, substeps)
    if isinstance(tgt, ExplicitGrid):
        if tgt.grid.spec != spec:
            raise GridMismatchError("explicit target grid does not match the solver grid")
        return tgt.grid
    raise TypeError(f"unsupported target {tgt!r}")


# ---------------------------------------------------------------------------
# programmed iteration


@dataclass
class IterationResult:
    grid: TimeSlicedGrid
    k: int
    sizes: list[int]
    converged: bool
    previous: TimeSlicedGrid | None = None
    history: list[TimeSlicedGrid] = field(default_factory=list)
    dropped: int = 0

    @property
    def applications(self) -> int:
        return len(self.sizes) - 1


def programmed_iteration(problem, spec: GridSpec, max_iter: int = 30, mode: str = "interpolate",
                         target: TimeSlicedGrid | None = None, substeps: int = DEFAULT_SUBSTEPS,
                         record: bool = False, band: float = 2.0) -> IterationResult:
    """W_0 = full grid, W_k = A(W_{k-1}) until two iterates coincide.

    ``k`` is the smallest index >= 1 whose iterate is a fixed point; ``sizes``
    holds the occupied counts of every computed iterate starting with W_0.
    Without convergence within ``max_iter`` applications the result carries
    ``converged=False`` and the last two iterates.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    M = target if target is not None else target_grid(problem, spec, mode, substeps)
    op = AbsorptionOperator(problem, M, mode, substeps, band=band)
    W = TimeSlicedGrid.full(spec)
    sizes = [W.count()]
    history = [W] if record else []
    for j in range(1, max_iter + 1):
        nxt = op(W)
        sizes.append(nxt.count())
        if record:
            history.append(nxt)
        if nxt == W:
            return IterationResult(nxt, max(1, j - 1), sizes, True, W, history, op.cache.dropped)
        W, prev = nxt, W
    return IterationResult(W, max_iter, sizes, False, prev, history, op.cache.dropped)


# ---------------------------------------------------------------------------
# comparisons and checks


@dataclass
class GridComparison:
    symmetric_difference: int
    a_in_dilated_b: bool
    b_in_dilated_a: bool
    dilation_radius: int

    @property
    def mutual(self) -> bool:
        return self.a_in_dilated_b and self.b_in_dilated_a


def compare_grids(Wa: TimeSlicedGrid, Wb: TimeSlicedGrid, radius: int = 1) -> GridComparison:
    if Wa.spec != Wb.spec:
        raise GridMismatchError("grids are defined on different specs")
    sym = int(np.sum(Wa.bits ^ Wb.bits))
    a_in = not np.any(Wa.bits & ~_dilate(Wb.bits, radius))
    b_in = not np.any(Wb.bits & ~_dilate(Wa.bits, radius))
    return GridComparison(sym, a_in, b_in, radius)


@dataclass(frozen=True)
class SectionViolation:
    from_slice: int
    cell: tuple[int, ...]
    to_slice: int
    landing: tuple[float, ...]


@dataclass
class SectionsReport:
    violations: list[SectionViolation]
    checked: int
    left_grid: int

    def __len__(self):
        return len(self.violations)


def decreasing_by_sections_check(E: TimeSlicedGrid, aux: AuxiliarySystem, samples: int = 20,
                                 seed: int = 0, tolerance: int = 1,
                                 substeps: int = DEFAULT_SUBSTEPS) -> SectionsReport:
    """Sample backward g-motions from occupied cells and flag landings outside earlier sections.

    Each sampled path applies a random w per grid step; a landing at slice j
    is accepted if its cell lies within ``tolerance`` cells of ``E[j]``.
    Paths that leave the grid are counted and no longer followed.
    """
    spec = E.spec
    if aux.state_dim != spec.ndim:
        raise GridMismatchError("auxiliary system dimension does not match grid")
    rng = np.random.default_rng(seed)
    padded = _dilate(E.bits, tolerance)
    W = aux.omega.points
    centers = spec.centers()
    violations: list[SectionViolation] = []
    checked = left = 0
    for i in range(1, spec.time_steps + 1):
        occ = np.flatnonzero(E.bits[i].ravel())
        if len(occ) == 0:
            continue
        pick = np.sort(rng.choice(occ, size=min(samples, len(occ)), replace=False))
        x = centers[pick]
        alive = np.ones(len(pick), dtype=bool)
        for j in range(i - 1, -1, -1):
            w = W[rng.integers(len(W), size=len(pick))]
            x = flow_const(aux.g, x, {"w": w}, -spec.dt, substeps)
            idx, inside = spec.nearest_cell(x)
            left += int((alive & ~inside).sum())
            alive &= inside
            ok = padded[j][tuple(idx.T)]
            checked += int(alive.sum())
            for k in np.flatnonzero(alive & ~ok):
                violations.append(SectionViolation(
                    i, tuple(int(c) for c in np.unravel_index(pick[k], spec.cells)), j,
                    tuple(map(float, x[k])),
                ))
    return SectionsReport(violations, checked, left)

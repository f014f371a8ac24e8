"""Step-by-step motions, the extremal-shift contrstrategy and batch trials."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .bridge import GridSpec, TimeSlicedGrid
from .flows import DEFAULT_SUBSTEPS, DivergenceError, Trajectory, flow_const
from .gamespec import GameProblem
from .vectorfield import FieldDomainError, eval_field

Contrstrategy = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
AdversaryStrategy = Callable[[float, np.ndarray], np.ndarray]


class StrategyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Partition:
    times: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        if len(t) < 2 or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("partition times must be strictly increasing with at least two points")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t0: float, t1: float, steps: int) -> "Partition":
        pts = t0 + (t1 - t0) * np.arange(steps + 1) / steps
        pts[-1] = t1
        return cls(tuple(pts))

    @property
    def fineness(self) -> float:
        return float(np.max(np.diff(self.times)))


def _merge(a: Sequence[float], b: Sequence[float], tol: float = 1e-12) -> list[float]:
    out: list[float] = []
    for t in sorted([*a, *b]):
        if not out or t - out[-1] > tol:
            out.append(t)
    return out


def _point_index(points: Sequence[float], t: float, tol: float = 1e-12) -> int:
    """Index of the last partition point at or before ``t``."""
    return int(np.searchsorted(np.asarray(points), t + tol, side="right") - 1)


def step_motion(problem: GameProblem, U: Contrstrategy, V: AdversaryStrategy, du: Partition,
                dv: Partition, start, bounds=None, substeps: int = DEFAULT_SUBSTEPS) -> Trajectory:
    """Motion on the joint refinement of ``du`` and ``dv``.

    The adversary value is fixed at its own partition points from the state
    there; the player value is recomputed at every joint point from the state
    at its latest ``du`` point and the current adversary value.
    """
    t0, x0 = float(start[0]), np.asarray(start[1], dtype=float)
    for p in (du, dv):
        if abs(p.times[0] - t0) > 1e-12:
            raise ValueError("partitions must start at the initial time")
    if abs(du.times[-1] - dv.times[-1]) > 1e-12:
        raise ValueError("partitions must end at the same time")
    lo = hi = None
    if bounds is not None:
        b = np.asarray(bounds, dtype=float)
        lo, hi = b[:, 0], b[:, 1]
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValueError("start lies outside the bounds")
    joint = _merge(du.times, dv.times)
    times, states = [joint[0]], [x0]
    x = x_du = x0
    v = None
    reason = None
    controls = []
    for a, b in zip(joint, joint[1:]):
        if v is None or abs(dv.times[_point_index(dv.times, a)] - a) <= 1e-12:
            v = np.atleast_1d(np.asarray(V(a, x), dtype=float))
        k = _point_index(du.times, a)
        if abs(du.times[k] - a) <= 1e-12:
            x_du = x
        u = np.atleast_1d(np.asarray(U(du.times[k], x_du, v), dtype=float))
        controls.append((u, v))
        try:
            x = flow_const(problem.f, x, {"u": u, "v": v}, b - a, substeps)
        except (DivergenceError, FieldDomainError):
            reason = "diverged"
            break
        times.append(b)
        states.append(x)
        if lo is not None and (np.any(x < lo) or np.any(x > hi)):
            reason = "left bounds"
            break
    traj = Trajectory(np.asarray(times), np.asarray(states), 1, reason)
    traj.meta["controls"] = controls
    return traj


class _SliceTrees:
    """Lazy KD-trees over occupied cell centers of each slice."""

    def __init__(self, grid: TimeSlicedGrid):
        self.grid = grid
        self.centers = grid.spec.centers()
        self._trees: dict[int, tuple[cKDTree, np.ndarray] | None] = {}

    def get(self, i: int):
        if i not in self._trees:
            occ = np.flatnonzero(self.grid.bits[i].ravel())
            self._trees[i] = (cKDTree(self.centers[occ]), occ) if len(occ) else None
        return self._trees[i]

    def nearest(self, i: int, X):
        """Distances to and flat indices of the nearest occupied cells of slice ``i``.

        ``X`` has shape ``(m, n)``; ties go to the lowest cell index.  Returns
        ``None`` for an empty slice.
        """
        entry = self.get(i)
        if entry is None:
            return None
        tree, occ = entry
        k = min(len(occ), 2 ** X.shape[1] + 1)
        d, j = tree.query(X, k=k)
        d, j = d.reshape(len(X), k), j.reshape(len(X), k)
        tied = d <= d[:, :1] * (1 + 1e-12)
        cells = np.where(tied, occ[j], np.iinfo(np.int64).max)
        return d[:, 0], cells.min(axis=1)


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


class ExtremalShift:
    """Aim at the nearest occupied cell of the bridge on the first slice after ``t``.

    Returns the player sample minimizing ``<x - w, f(x, u, v)>`` (lowest
    index on ties).  A state whose own cell is occupied is already on the
    bridge; it aims at the nearest cell of ``target`` when one is given and
    otherwise at itself, which leaves the choice to the tie-break.  Accepts
    one state or a batch ``(m, n)`` with matching adversary values.
    """

    def __init__(self, W: TimeSlicedGrid, problem: GameProblem, target: TimeSlicedGrid | None = None):
        if W.spec.ndim != problem.state_dim:
            raise ValueError("bridge grid does not match the problem dimension")
        if target is not None and target.spec != W.spec:
            raise ValueError("target and bridge grids differ")
        self.W = W
        self.problem = problem
        self.P = problem.P.points
        self.trees = _SliceTrees(W)
        self.target_trees = _SliceTrees(target) if target is not None else None

    def aim(self, t: float, x) -> np.ndarray:
        spec = self.W.spec
        X, single = _batch(x)
        i = min(int(np.floor(t / spec.dt + 1e-9)) + 1, spec.time_steps)
        for j in range(i, spec.time_steps + 1):
            hit = self.trees.nearest(j, X)
            if hit is not None:
                w = self.trees.centers[hit[1]]
                idx, ok = spec.nearest_cell(X)
                on = ok & self.W.bits[j][tuple(idx.T)]
                inner = X
                if self.target_trees is not None:
                    tgt = self.target_trees.nearest(j, X)
                    if tgt is not None:
                        inner = self.target_trees.centers[tgt[1]]
                w = np.where(on[:, None], inner, w)
                return w[0] if single else w
        raise StrategyError(f"bridge is empty at and after t={t}")

    def __call__(self, t: float, x, v) -> np.ndarray:
        X, single = _batch(x)
        m, n = X.shape
        q = self.problem.Q.dim
        V = np.broadcast_to(np.asarray(v, dtype=float).reshape(-1, q), (m, q))
        w = self.aim(t, X)
        k = len(self.P)
        vel = eval_field(self.problem.f, np.broadcast_to(X[:, None, :], (m, k, n)),
                         {"u": np.broadcast_to(self.P[None], (m, k, self.P.shape[1])),
                          "v": np.broadcast_to(V[:, None, :], (m, k, q))})
        u = self.P[np.argmin(np.einsum("mkn,mn->mk", vel, X - w), axis=1)]
        return u[0] if single else u


@dataclass(frozen=True)
class ConstantAdversary:
    value: tuple

    def __call__(self, t, x):
        X, single = _batch(x)
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        return v if single else np.broadcast_to(v, (len(X), len(v))).copy()


class LookaheadAdversary:
    """Pick the sampled v whose one-step outcome, against the player's reply, lies farthest from W."""

    def __init__(self, problem: GameProblem, W: TimeSlicedGrid, U: Contrstrategy, step: float,
                 substeps: int = DEFAULT_SUBSTEPS):
        self.problem = problem
        self.U = U
        self.step = step
        self.substeps = substeps
        self.trees = _SliceTrees(W)
        self.spec = W.spec

    def __call__(self, t, x):
        X, single = _batch(x)
        Q = self.problem.Q.points
        t_next = min(t + self.step, self.spec.horizon)
        j = self.spec.slice_index(t_next)
        dist = np.empty((len(X), len(Q)))
        for q, v in enumerate(Q):
            V = np.broadcast_to(v, (len(X), len(v)))
            u = self.U(t, X, V)
            Y = flow_const(self.problem.f, X, {"u": u, "v": V}, t_next - t, self.substeps)
            hit = self.trees.nearest(j, Y)
            dist[:, q] = np.inf if hit is None else hit[0]
        out = Q[np.argmax(dist, axis=1)]
        return out[0] if single else out


def capture_radius(spec: GridSpec, diagonals: float = 1.5) -> float:
    return float(diagonals * np.linalg.norm(spec.widths))


def sample_starts(W: TimeSlicedGrid, count: int, seed: int = 0, margin: int = 2,
                  outside: bool = False, slice_index: int = 0) -> np.ndarray:
    """Cell centers drawn from ``W`` eroded by ``margin`` cells, or from outside its dilation."""
    if outside:
        pool = ~W.dilate(margin).bits[slice_index]
    else:
        pool = W.erode(margin).bits[slice_index]
    occ = np.flatnonzero(pool.ravel())
    if len(occ) == 0:
        return np.empty((0, W.spec.ndim))
    rng = np.random.default_rng(seed)
    pick = rng.choice(occ, size=count, replace=len(occ) < count)
    return W.spec.centers()[pick]


@dataclass
class TrialRecord:
    start: int
    adversary: str
    fineness: float
    success: bool
    capture_time: float | None
    exit_reason: str | None


@dataclass
class TrialReport:
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def vacuous(self) -> bool:
        return not self.records

    @property
    def success_fraction(self) -> float | None:
        if self.vacuous:
            return None
        return sum(r.success for r in self.records) / len(self.records)

    def fractions(self) -> dict[tuple[str, float], float]:
        groups: dict[tuple[str, float], list[bool]] = {}
        for r in self.records:
            groups.setdefault((r.adversary, r.fineness), []).append(r.success)
        return {k: sum(v) / len(v) for k, v in groups.items()}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["start", "adversary", "fineness", "success", "capture_time", "exit_reason"])
            for r in self.records:
                w.writerow([r.start, r.adversary, repr(r.fineness), int(r.success),
                            "" if r.capture_time is None else repr(r.capture_time), r.exit_reason or ""])


def batch_motion(problem: GameProblem, U: Contrstrategy, V: AdversaryStrategy, part: Partition,
                 X0, bounds=None, substeps: int = DEFAULT_SUBSTEPS) -> tuple[np.ndarray, list[str | None]]:
    """Many step-by-step motions sharing one partition for both players.

    Strategies are called on the whole batch.  Returns states of shape
    ``(len(part.times), m, n)``, frozen after an exit, and per-motion exit
    reasons.
    """
    X = np.array(X0, dtype=float, ndmin=2)
    m = len(X)
    reasons: list[str | None] = [None] * m
    alive = np.ones(m, dtype=bool)
    lo = hi = None
    if bounds is not None:
        b = np.asarray(bounds, dtype=float)
        lo, hi = b[:, 0], b[:, 1]
    out = [X.copy()]
    for a, b in zip(part.times, part.times[1:]):
        v = np.asarray(V(a, X), dtype=float).reshape(m, -1)
        u = np.asarray(U(a, X, v), dtype=float).reshape(m, -1)
        try:
            Y = flow_const(problem.f, X, {"u": u, "v": v}, b - a, substeps)
        except (DivergenceError, FieldDomainError):
            Y = np.full_like(X, np.nan)
        bad = alive & ~np.all(np.isfinite(Y), axis=1)
        for k in np.flatnonzero(bad):
            reasons[k] = "diverged"
        alive &= ~bad
        if lo is not None:
            gone = alive & (np.any(Y < lo, axis=1) | np.any(Y > hi, axis=1))
            for k in np.flatnonzero(gone):
                reasons[k] = "left bounds"
            alive &= ~gone
        X = np.where(alive[:, None], Y, X)
        out.append(X.copy())
    return np.asarray(out), reasons


def run_trials(problem: GameProblem, W: TimeSlicedGrid, M: TimeSlicedGrid, starts,
               adversaries: Mapping[str, AdversaryStrategy | str], finenesses: Sequence[int],
               eps: float | None = None, t0: float = 0.0, substeps: int = DEFAULT_SUBSTEPS,
               keep: bool = False) -> tuple[TrialReport, list[Trajectory]]:
    """Extremal-shift motions from every start against every adversary and partition count.

    An adversary given as the string ``"lookahead"`` is built against the
    player strategy for each partition step.  A trial succeeds when the state
    comes within ``eps`` of an occupied cell of ``M`` at some partition time.
    """
    spec = W.spec
    if M.spec != spec:
        raise ValueError("target and bridge grids differ")
    eps = capture_radius(spec) if eps is None else eps
    report = TrialReport()
    kept: list[Trajectory] = []
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if W.count() == 0 or starts.size == 0:
        return report, kept
    U = ExtremalShift(W, problem, M)
    targets = _SliceTrees(M)
    for steps in finenesses:
        part = Partition.uniform(t0, spec.horizon, int(steps))
        fineness = (spec.horizon - t0) / int(steps)
        for name, adv in adversaries.items():
            if isinstance(adv, str):
                if adv != "lookahead":
                    raise ValueError(f"unknown adversary {adv!r}")
                adv = LookaheadAdversary(problem, W, U, part.fineness, substeps)
            states, reasons = batch_motion(problem, U, adv, part, starts, spec.bounds, substeps)
            hit_t = np.full(len(starts), np.nan)
            for t, X in zip(part.times, states):
                near = targets.nearest(spec.slice_index(t), X)
                if near is not None:
                    hit_t[np.isnan(hit_t) & (near[0] <= eps)] = t
            for k in range(len(starts)):
                ok = not np.isnan(hit_t[k])
                report.records.append(TrialRecord(k, name, fineness, ok,
                                                  float(hit_t[k]) if ok else None, reasons[k]))
                if keep:
                    kept.append(Trajectory(np.asarray(part.times), states[:, k], 1, reasons[k],
                                           {"start": k, "adversary": name}))
    return report, kept

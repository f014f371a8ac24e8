"""Flows of vector fields under constant and piecewise-constant controls.

All integration is classical fixed-step RK4.  Negative durations integrate
in reverse time with a negative step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .vectorfield import VectorField, eval_field

DEFAULT_SUBSTEPS = 16


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} at RK4 step {step}")
        self.step = step


class FlowDomainError(ValueError):
    pass


@dataclass(frozen=True)
class PiecewiseControl:
    """Ordered ``(duration, value)`` segments for one control group."""

    segments: tuple[tuple[float, np.ndarray], ...]

    def __init__(self, segments):
        segs = []
        dim = None
        for tau, b in segments:
            tau = float(tau)
            if tau < 0:
                raise ValueError("segment durations must be nonnegative")
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if dim is not None and b.shape != dim:
                raise ValueError("segment values must share one dimension")
            dim = b.shape
            segs.append((tau, b))
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def duration(self) -> float:
        return float(sum(t for t, _ in self.segments))

    def __len__(self):
        return len(self.segments)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    direction: int = 1
    exit_reason: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def to_rows(self):
        for t, x in zip(self.times, self.states):
            yield [float(t), *map(float, x)]


def _rk4(F: VectorField, x: np.ndarray, params, h: float, steps: int) -> np.ndarray:
    for k in range(steps):
        k1 = eval_field(F, x, params)
        k2 = eval_field(F, x + 0.5 * h * k1, params)
        k3 = eval_field(F, x + 0.5 * h * k2, params)
        k4 = eval_field(F, x + h * k3, params)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1)
    return x


def flow_const(F: VectorField, x0, params: Mapping | None, tau: float,
               substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """S^tau(x0) for constant parameters; ``x0`` may be a batch ``(..., n)``."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if tau == 0:
        return x0.copy()
    return _rk4(F, x0, params, float(tau) / substeps, substeps)


def flow_piecewise(F: VectorField, x0, t_start: float, ctrl: PiecewiseControl, group: str,
                   fixed_params: Mapping | None = None, direction: int = 1,
                   dt: float | None = None, horizon: float | None = None,
                   substeps: int = DEFAULT_SUBSTEPS) -> Trajectory:
    """Motion under a piecewise-constant control of one parameter group.

    Each segment is one ``flow_const`` call with ``substeps`` steps, so the
    endpoint is exactly the composition of the segment flows.  States are
    sampled every ``dt`` (default: segment boundaries only).  ``direction=-1``
    runs the segments backward in time from ``t_start``.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    total = ctrl.duration
    t_end = t_start + direction * total
    eps = 1e-12 * max(1.0, abs(t_start), total)
    lo, hi = 0.0, horizon if horizon is not None else np.inf
    if t_start < lo - eps or t_start > hi + eps or t_end < lo - eps or t_end > hi + eps:
        raise FlowDomainError(f"motion over [{min(t_start, t_end)}, {max(t_start, t_end)}] "
                              f"leaves [0, {hi}]")
    fixed = dict(fixed_params or {})
    x = np.asarray(x0, dtype=float)
    offsets = [0.0]
    states = [x]
    elapsed = 0.0
    k = 1
    for tau, b in ctrl.segments:
        if tau == 0:
            continue
        params = {**fixed, group: b}
        seg_start = x
        if dt:
            while k * dt < elapsed + tau - eps:
                offsets.append(k * dt)
                states.append(flow_const(F, seg_start, params, direction * (k * dt - elapsed), substeps))
                k += 1
        x = flow_const(F, seg_start, params, direction * tau, substeps)
        elapsed += tau
        on_grid = bool(dt) and abs(k * dt - elapsed) <= eps
        if on_grid:
            k += 1
        if not dt or on_grid:
            offsets.append(elapsed)
            states.append(x)
    if offsets[-1] != elapsed:
        offsets.append(elapsed)
        states.append(x)
    times = t_start + direction * np.asarray(offsets)
    return Trajectory(times, np.asarray(states), direction)


# ---------------------------------------------------------------------------
# commutation


@dataclass
class CommutationResult:
    max_discrepancy: float
    argmax: int
    discrepancies: np.ndarray

    @property
    def worst_sample(self) -> int:
        return self.argmax


def check_flow_commutation(f: VectorField, g: VectorField, samples: Sequence[Mapping],
                           substeps: int = DEFAULT_SUBSTEPS,
                           allow_negative: bool = False) -> CommutationResult:
    """Max of ||F^tau' G^tau'' x - G^tau'' F^tau' x|| over samples.

    Each sample is a mapping with ``x``, ``tau_f``, ``tau_g``, ``f_params``
    (parameter groups of ``f``) and ``g_params``.
    """
    out = np.empty(len(samples))
    for k, s in enumerate(samples):
        tf, tg = float(s["tau_f"]), float(s["tau_g"])
        if not allow_negative and (tf < 0 or tg < 0):
            raise ValueError("commutation is checked for nonnegative durations")
        x = np.asarray(s["x"], dtype=float)
        fg = flow_const(f, flow_const(g, x, s["g_params"], tg, substeps), s["f_params"], tf, substeps)
        gf = flow_const(g, flow_const(f, x, s["f_params"], tf, substeps), s["g_params"], tg, substeps)
        out[k] = np.linalg.norm(fg - gf)
    if len(out) == 0:
        return CommutationResult(0.0, -1, out)
    i = int(np.argmax(out))
    return CommutationResult(float(out[i]), i, out)


@dataclass(frozen=True)
class ScheduleStep:
    member: str  # "f" or "g"
    duration: float
    params: Mapping


def _run_schedule(fields: Mapping[str, VectorField], x0, steps, substeps):
    x = np.asarray(x0, dtype=float)
    for st in steps:
        x = flow_const(fields[st.member], x, st.params, st.duration, substeps)
    return x


def check_rearrangement(fields: Mapping[str, VectorField], x0, schedule: Sequence[ScheduleStep],
                        first: str = "f", substeps: int = DEFAULT_SUBSTEPS) -> float:
    """Endpoint gap between an interleaved schedule and its regrouped form.

    The regrouped schedule runs every ``first`` member step (in order) and then
    every other step (in order).
    """
    schedule = list(schedule)
    interleaved = _run_schedule(fields, x0, schedule, substeps)
    regrouped = [s for s in schedule if s.member == first] + [s for s in schedule if s.member != first]
    grouped = _run_schedule(fields, x0, regrouped, substeps)
    return float(np.linalg.norm(interleaved - grouped))

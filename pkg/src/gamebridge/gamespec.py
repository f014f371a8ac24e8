"""Problem model: control samples, terminal sets, games and their transform."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.stats import qmc

from .vectorfield import BinOp, FieldSignature, Num, Var, VectorField

NU = "nu"  # switch between f (nu=1) and g (nu=0) in the transformed game
OMEGA = "w"


class ProblemError(ValueError):
    pass


# ---------------------------------------------------------------------------
# control sets


@dataclass(frozen=True, eq=False)
class SampledControlSet:
    points: np.ndarray
    descriptor: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) == 0:
            raise ProblemError("control sample must be a nonempty list of vectors")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ProblemError("control sample points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def _interval(a: float, b: float, k: int) -> np.ndarray:
    if k < 1:
        raise ProblemError("sample count must be >= 1")
    if k == 1:
        return np.array([0.5 * (a + b)])
    if a > b:
        raise ProblemError(f"empty interval [{a}, {b}]")
    if a == b:
        raise ProblemError(f"degenerate interval [{a}, {b}] with {k} samples")
    pts = a + (b - a) * np.arange(k) / (k - 1)
    pts[-1] = b
    return pts


def _ball(radius: float, dim: int, k: int, center) -> np.ndarray:
    if radius < 0:
        raise ProblemError("ball radius must be nonnegative")
    if k < 1:
        raise ProblemError("sample count must be >= 1")
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    if dim == 1:
        return center + _interval(-radius, radius, k)[:, None] if radius > 0 else center[None, :]
    if radius == 0:
        return center[None, :]
    # center, the 2*dim axis points, then unscrambled Halton points inside the ball
    pts = [np.zeros(dim)]
    for i in range(dim):
        for s in (-1.0, 1.0):
            e = np.zeros(dim)
            e[i] = s
            pts.append(e)
    pts = pts[:k]
    sampler = qmc.Halton(d=dim, scramble=False)
    sampler.fast_forward(1)
    while len(pts) < k:
        cand = 2.0 * sampler.random(64) - 1.0
        for c in cand:
            if len(pts) < k and np.dot(c, c) <= 1.0:
                pts.append(c)
    return center + radius * np.asarray(pts)


def sample_control_set(descriptor) -> SampledControlSet:
    """Deterministic finite sample of a compact control set.

    Descriptors:

    * ``{"interval": [a, b], "count": k}`` -- uniform with both endpoints
    * ``{"box": [[a1, b1], ...], "count": k or [k1, ...]}`` -- product grid
    * ``{"ball": r, "dim": d, "count": k, "center": [...]}``
    * ``{"points": [...]}`` -- explicit list (scalars or vectors)
    """
    d = dict(descriptor)
    if "points" in d:
        pts = np.asarray(d["points"], dtype=float)
        if pts.size == 0:
            raise ProblemError("explicit control set is empty")
        return SampledControlSet(pts, d)
    if "interval" in d:
        a, b = map(float, d["interval"])
        return SampledControlSet(_interval(a, b, int(d.get("count", 2))), d)
    if "box" in d:
        box = [tuple(map(float, ab)) for ab in d["box"]]
        counts = d.get("count", 2)
        if np.isscalar(counts):
            counts = [int(counts)] * len(box)
        if len(counts) != len(box):
            raise ProblemError("box count list must match box dimension")
        axes = [_interval(a, b, int(k)) for (a, b), k in zip(box, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return SampledControlSet(np.stack([m.ravel() for m in mesh], axis=1), d)
    if "ball" in d:
        return SampledControlSet(
            _ball(float(d["ball"]), int(d.get("dim", 1)), int(d.get("count", 1)), d.get("center")), d
        )
    raise ProblemError(f"unrecognized control set descriptor {sorted(d)}")


# ---------------------------------------------------------------------------
# terminal sets


@dataclass(frozen=True)
class TerminalSet:
    """Point, box or ball predicate over the state space (or the empty set).

    Grid marking uses cell centers, except for points, which mark every cell
    whose closed extent contains the point.
    """

    kind: str
    data: Any = None

    @classmethod
    def from_descriptor(cls, d) -> "TerminalSet":
        if d is None or d == "empty" or (isinstance(d, Mapping) and d.get("empty")):
            return cls("empty")
        if "point" in d:
            return cls("point", tuple(map(float, d["point"])))
        if "box" in d:
            return cls("box", tuple(tuple(map(float, ab)) for ab in d["box"]))
        if "ball" in d:
            b = d["ball"]
            return cls("ball", (tuple(map(float, b["center"])), float(b["radius"])))
        raise ProblemError(f"unrecognized terminal set descriptor {d}")

    def to_descriptor(self) -> dict:
        if self.kind == "empty":
            return {"empty": True}
        if self.kind == "point":
            return {"point": list(self.data)}
        if self.kind == "box":
            return {"box": [list(ab) for ab in self.data]}
        return {"ball": {"center": list(self.data[0]), "radius": self.data[1]}}

    @property
    def dim(self) -> int | None:
        if self.kind == "empty":
            return None
        if self.kind == "ball":
            return len(self.data[0])
        return len(self.data)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "empty":
            return np.zeros(x.shape[:-1], dtype=bool)
        if self.kind == "point":
            return np.all(x == np.asarray(self.data), axis=-1)
        if self.kind == "box":
            b = np.asarray(self.data)
            return np.all((x >= b[:, 0]) & (x <= b[:, 1]), axis=-1)
        c, r = self.data
        return np.linalg.norm(x - np.asarray(c), axis=-1) <= r


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True, eq=False)
class AuxiliarySystem:
    g: VectorField
    omega: SampledControlSet
    F: TerminalSet

    def __post_init__(self):
        if self.g.signature.group_dim(OMEGA) != self.omega.dim:
            raise ProblemError("g's omega group dimension must equal the Omega sample dimension")

    @property
    def state_dim(self) -> int:
        return self.g.state_dim

    def control_params(self) -> list[dict]:
        return [{OMEGA: w} for w in self.omega.points]


@dataclass(frozen=True)
class Cylinder:
    F: TerminalSet


@dataclass(frozen=True)
class Controllability:
    aux: AuxiliarySystem


@dataclass(frozen=True)
class ExplicitGrid:
    grid: Any  # bridge.TimeSlicedGrid


TargetSpec = Cylinder | Controllability | ExplicitGrid


@dataclass(frozen=True, eq=False)
class GameProblem:
    f: VectorField
    P: SampledControlSet
    Q: SampledControlSet
    horizon: float
    target: TargetSpec
    name: str = ""

    def __post_init__(self):
        sig = self.f.signature
        if sig.group_dim("u") != self.P.dim or sig.group_dim("v") != self.Q.dim:
            raise ProblemError("control group dimensions must match P and Q")
        if not self.horizon > 0:
            raise ProblemError("horizon must be positive")

    @property
    def state_dim(self) -> int:
        return self.f.state_dim

    def player_params(self) -> list[dict]:
        return [{"u": u} for u in self.P.points]

    def adversary_params(self) -> list[dict]:
        return [{"v": v} for v in self.Q.points]


@dataclass(frozen=True, eq=False)
class TransformedProblem:
    f_star: VectorField
    P_star: SampledControlSet
    Q: SampledControlSet
    horizon: float
    F: TerminalSet
    u_dim: int
    omega_dim: int
    name: str = ""

    @property
    def state_dim(self) -> int:
        return self.f_star.state_dim

    @property
    def target(self):
        return Cylinder(self.F)

    def split(self, p) -> dict:
        p = np.asarray(p, dtype=float)
        return {NU: p[:1], "u": p[1 : 1 + self.u_dim], OMEGA: p[1 + self.u_dim :]}

    def player_params(self) -> list[dict]:
        return [self.split(p) for p in self.P_star.points]

    def adversary_params(self) -> list[dict]:
        return [{"v": v} for v in self.Q.points]


def build_transformed(problem: GameProblem, aux: AuxiliarySystem) -> TransformedProblem:
    """Approach-at-the-moment game with dynamics nu*f + (1 - nu)*g.

    The player sample is the canonical one: ``(1, u, w0)`` for every u and
    ``(0, u0, w)`` for every w, with ``u0``/``w0`` the first sample points.
    """
    f, g = problem.f, aux.g
    if f.state_dim != g.state_dim:
        raise ProblemError("f and g must share the state dimension")
    fs, gs = f.signature, g.signature
    if fs.state_names != gs.state_names:
        raise ProblemError("f and g must use the same state variable names")
    u_dim, v_dim, w_dim = fs.group_dim("u"), fs.group_dim("v"), gs.group_dim(OMEGA)
    sig = FieldSignature(
        fs.state_dim, ((NU, 1), ("u", u_dim), (OMEGA, w_dim), ("v", v_dim)), fs.state_names
    )
    nu = Var(NU)
    comps = tuple(
        BinOp("+", BinOp("*", nu, fc), BinOp("*", BinOp("-", Num(1.0), nu), gc))
        for fc, gc in zip(f.components, g.components)
    )
    f_star = VectorField(sig, comps)
    u0, w0 = problem.P.points[0], aux.omega.points[0]
    rows = [np.concatenate([[1.0], u, w0]) for u in problem.P.points]
    rows += [np.concatenate([[0.0], u0, w]) for w in aux.omega.points]
    P_star = SampledControlSet(
        np.asarray(rows), {"canonical": True, "P": problem.P.descriptor, "Omega": aux.omega.descriptor}
    )
    return TransformedProblem(f_star, P_star, problem.Q, problem.horizon, aux.F, u_dim, w_dim,
                              name=f"{problem.name}*" if problem.name else "")

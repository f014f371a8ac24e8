"""Min-max and max-min of <s, f(x, u, v)> over finite control samples."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .gamespec import NU, SampledControlSet, TransformedProblem
from .vectorfield import BinOp, Neg, Node, VectorField, eval_field, variables

SEPARATED_TOL = 1e-12
GENERAL_TOL = 1e-9


@dataclass
class IsaacsReport:
    xs: np.ndarray
    ss: np.ndarray
    minmax: np.ndarray
    maxmin: np.ndarray
    argmin_u: np.ndarray  # player index attaining the min-max
    argmax_v: np.ndarray  # adversary index attaining the max-min
    case: list[str] = field(default_factory=list)

    @property
    def gap(self) -> np.ndarray:
        return self.minmax - self.maxmin

    @property
    def max_gap(self) -> float:
        return float(self.gap.max()) if len(self.gap) else 0.0

    def __len__(self):
        return len(self.minmax)

    def rows(self):
        n = self.xs.shape[1]
        head = [f"x{i + 1}" for i in range(n)] + [f"s{i + 1}" for i in range(n)]
        yield head + ["minmax", "maxmin", "gap", "case"]
        cases = self.case or [""] * len(self)
        for k in range(len(self)):
            yield [*map(repr, map(float, self.xs[k])), *map(repr, map(float, self.ss[k])),
                   repr(float(self.minmax[k])), repr(float(self.maxmin[k])),
                   repr(float(self.gap[k])), cases[k]]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())


def _hamiltonian_table(F: VectorField, players: list[dict], adversaries: list[dict], xs, ss):
    """<s, F> for every sample, player and adversary: shape (m, |P|, |Q|)."""
    xs = np.asarray(xs, dtype=float)
    ss = np.asarray(ss, dtype=float)
    m, n = xs.shape
    npl, nad = len(players), len(adversaries)
    x = np.broadcast_to(xs[:, None, None, :], (m, npl, nad, n))
    params = {}
    for g in players[0]:
        vals = np.stack([np.atleast_1d(p[g]) for p in players])
        params[g] = np.broadcast_to(vals[None, :, None, :], (m, npl, nad, vals.shape[1]))
    for g in adversaries[0]:
        vals = np.stack([np.atleast_1d(a[g]) for a in adversaries])
        params[g] = np.broadcast_to(vals[None, None, :, :], (m, npl, nad, vals.shape[1]))
    vel = eval_field(F, x, params)
    return np.einsum("mpqn,mn->mpq", vel, ss)


def _check_directions(ss, normalize):
    ss = np.atleast_2d(np.asarray(ss, dtype=float))
    norms = np.linalg.norm(ss, axis=1)
    if np.any(norms == 0):
        raise ValueError("direction samples must be nonzero")
    return ss / norms[:, None] if normalize else ss


def _solve(table):
    inner_max = table.max(axis=2)
    iu = np.argmin(inner_max, axis=1)  # first index on ties
    inner_min = table.min(axis=1)
    iv = np.argmax(inner_min, axis=1)
    rows = np.arange(len(table))
    return inner_max[rows, iu], inner_min[rows, iv], iu, iv


def isaacs_gap(f: VectorField, P: SampledControlSet, Q: SampledControlSet, xs, ss,
               normalize: bool = False) -> IsaacsReport:
    """Paired samples ``(xs[k], ss[k])``; exact min/max over the finite sets.

    Directions are used as given, so ``gap(x, c*s) == c*gap(x, s)`` for
    ``c > 0``; ``normalize=True`` rescales them to unit length first.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ss = _check_directions(ss, normalize)
    if xs.shape != ss.shape:
        raise ValueError("xs and ss must be paired samples of equal shape")
    table = _hamiltonian_table(f, [{"u": u} for u in P.points], [{"v": v} for v in Q.points], xs, ss)
    mm, Mm, iu, iv = _solve(table)
    return IsaacsReport(xs, ss, mm, Mm, iu, iv)


def isaacs_gap_transformed(tp: TransformedProblem, xs, ss, Q: SampledControlSet | None = None,
                           normalize: bool = False) -> IsaacsReport:
    """As :func:`isaacs_gap` for ``f*`` over the canonical ``P*``.

    ``case`` records which branch attains the min-max: ``"f"`` when the
    minimizing player point has nu = 1, ``"g"`` when it has nu = 0.
    """
    Q = Q if Q is not None else tp.Q
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ss = _check_directions(ss, normalize)
    if xs.shape != ss.shape:
        raise ValueError("xs and ss must be paired samples of equal shape")
    players = tp.player_params()
    table = _hamiltonian_table(tp.f_star, players, [{"v": v} for v in Q.points], xs, ss)
    mm, Mm, iu, iv = _solve(table)
    nu = np.array([float(p[NU][0]) for p in players])
    case = ["f" if nu[i] == 1.0 else "g" for i in iu]
    return IsaacsReport(xs, ss, mm, Mm, iu, iv, case)


def default_directions(dim: int, count: int) -> np.ndarray:
    """Coordinate axes (both signs) followed by Halton points mapped to the unit sphere."""
    axes = np.concatenate([np.eye(dim), -np.eye(dim)])[:count] + 0.0
    rest = count - len(axes)
    if rest <= 0:
        return axes
    if dim == 1:
        return np.concatenate([axes, np.where(np.arange(rest)[:, None] % 2 == 0, 1.0, -1.0)])
    sampler = qmc.Halton(d=dim, scramble=False)
    sampler.fast_forward(1)
    pts = norm.ppf(np.clip(sampler.random(rest), 1e-12, 1 - 1e-12))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.concatenate([axes, pts])


def sample_states(bounds, count: int, seed: int = 0) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(seed)
    return b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random((count, len(b)))


def _additive_terms(node: Node):
    if isinstance(node, BinOp) and node.op in "+-":
        yield from _additive_terms(node.left)
        yield from _additive_terms(node.right)
    elif isinstance(node, Neg):
        yield from _additive_terms(node.operand)
    else:
        yield node


def is_separated(F: VectorField, first: str = "u", second: str = "v") -> bool:
    """True if every component is a sum of terms each free of ``first`` or of ``second``."""
    pv = F.signature.param_variables()
    a = {k for k, (g, _) in pv.items() if g == first}
    b = {k for k, (g, _) in pv.items() if g == second}
    for comp in F.components:
        for term in _additive_terms(comp):
            names = variables(term)
            if names & a and names & b:
                return False
    return True


def default_tolerance(F: VectorField) -> float:
    return SEPARATED_TOL if is_separated(F) else GENERAL_TOL

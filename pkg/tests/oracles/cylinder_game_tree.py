"""Exact game-tree oracle for x' = u + v with a cylindrical target.

Positional game on 6 time slices (5 steps of 0.2): at every step the
adversary announces v in Q and the player answers with u in P; the state
moves by (u + v) * dt.  The player wins from (i, x) if |x| <= 0.2 at some
slice.  States stay exact rationals, so no grid is involved.  Evaluated at
the 21 cell centers of [-2, 2].  Run as a script to print the table that
is frozen in the tests.
"""
from fractions import Fraction as Fr
from functools import lru_cache

P = [Fr(-1) + Fr(k, 4) for k in range(9)]
Q = [Fr(-1, 2) + Fr(k, 4) for k in range(5)]
STEPS = 5
DT = Fr(1, STEPS)
RADIUS = Fr(1, 5)
CELLS = 21


@lru_cache(maxsize=None)
def wins(i: int, x: Fr) -> bool:
    if abs(x) <= RADIUS:
        return True
    if i == STEPS:
        return False
    return all(any(wins(i + 1, x + (u + v) * DT) for u in P) for v in Q)


def table():
    centers = [Fr(-2) + Fr(4) * (2 * j + 1) / (2 * CELLS) for j in range(CELLS)]
    return ["".join("1" if wins(i, c) else "0" for c in centers) for i in range(STEPS + 1)]


if __name__ == "__main__":
    for row in table():
        print(row)

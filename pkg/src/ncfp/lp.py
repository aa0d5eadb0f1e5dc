"""Exact rational linear programming for the theta optimization.

A dense two-phase simplex over :class:`fractions.Fraction` with Bland's
rule, so every solve is exact, cycle-free and bit-reproducible.  Problem
sizes here are tens of variables and a few hundred constraints; no sparse
machinery is warranted.

Programs are stated over named nonnegative variables with constraints of
the form ``affine >= 0`` and an affine objective to minimize, matching how
the analysis emits its theta domains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .minplus import AffineExpr, UsageError

F0 = Fraction(0)
F1 = Fraction(1)


@dataclass(frozen=True)
class LinearProgram:
    """Minimize ``objective`` s.t. every constraint >= 0 and all variables >= 0."""

    variables: tuple[int, ...]
    objective: AffineExpr
    constraints: tuple[AffineExpr, ...]

    def __post_init__(self):
        known = set(self.variables)
        for e in (self.objective, *self.constraints):
            missing = e.thetas() - known
            if missing:
                raise UsageError(f"constraint references unknown variables {missing}")


@dataclass(frozen=True)
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    value: Fraction | None
    assignment: dict[int, Fraction] = field(default_factory=dict)
    pivots: tuple[tuple[int, int], ...] = ()


def solve(lp: LinearProgram) -> LpSolution:
    """Two-phase simplex; deterministic pivot order (Bland's rule)."""
    nvars = len(lp.variables)
    index = {v: i for i, v in enumerate(lp.variables)}

    # rows: constraint  sum(a_j x_j) <= b   from   c0 + sum(c_j x_j) >= 0
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    for e in lp.constraints:
        row = [F0] * nvars
        for k, v in e.coeffs:
            row[index[k]] = -v
        rows.append(row)
        rhs.append(e.const)

    m = len(rows)
    # slack per row; artificial per negative-rhs row
    neg = [i for i in range(m) if rhs[i] < 0]
    nslack = m
    nart = len(neg)
    total = nvars + nslack + nart

    tableau = []
    basis: list[int] = []
    art_of_row = {}
    for i in range(m):
        row = [F0] * (total + 1)
        sign = -1 if rhs[i] < 0 else 1
        for j in range(nvars):
            row[j] = sign * rows[i][j]
        row[nvars + i] = F1 * sign
        row[-1] = sign * rhs[i]
        tableau.append(row)
        basis.append(nvars + i)
    for a, i in enumerate(neg):
        tableau[i][nvars + nslack + a] = F1
        basis[i] = nvars + nslack + a
        art_of_row[i] = nvars + nslack + a

    pivots: list[tuple[int, int]] = []

    def run(cost: list[Fraction], allowed: int) -> str:
        # cost row holds reduced costs of the current basis for `minimize cost.x`
        z = [F0] * (allowed + 1)
        for j in range(len(cost)):
            z[j] = cost[j]
        for i, b in enumerate(basis):
            cb = cost[b] if b < len(cost) else F0
            if cb != 0:
                for j in range(allowed + 1):
                    col = tableau[i][j] if j < allowed else tableau[i][-1]
                    z[j] -= cb * col
        while True:
            enter = -1
            for j in range(allowed):
                if z[j] < 0:
                    enter = j
                    break
            if enter < 0:
                return "optimal"
            leave = -1
            best = None
            for i in range(m):
                a = tableau[i][enter]
                if a > 0:
                    ratio = tableau[i][-1] / a
                    if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                        best = ratio
                        leave = i
            if leave < 0:
                return "unbounded"
            pivots.append((enter, leave))
            _pivot(tableau, z, leave, enter, allowed)
            basis[leave] = enter
        # unreachable

    def _pivot(tab, z, leave, enter, allowed):
        piv = tab[leave][enter]
        row = tab[leave]
        for j in range(len(row)):
            row[j] /= piv
        for i in range(m):
            if i == leave:
                continue
            f = tab[i][enter]
            if f != 0:
                r = tab[i]
                for j in range(len(r)):
                    r[j] -= f * row[j]
        f = z[enter]
        if f != 0:
            for j in range(allowed):
                z[j] -= f * row[j]
            z[-1] -= f * row[-1]

    if nart:
        phase1 = [F0] * total
        for a in range(nart):
            phase1[nvars + nslack + a] = F1
        status = run(phase1, total)
        assert status == "optimal"  # artificials bound phase 1 below by 0
        infeas = F0
        for i, b in enumerate(basis):
            if b >= nvars + nslack:
                infeas += tableau[i][-1]
        if infeas > 0:
            return LpSolution("infeasible", None, {}, tuple(pivots))
        # drive remaining zero-valued artificials out of the basis
        for i in range(m):
            if basis[i] >= nvars + nslack:
                for j in range(nvars + nslack):
                    if tableau[i][j] != 0:
                        pivots.append((j, i))
                        _pivot(tableau, [F0] * (total + 1), i, j, total)
                        basis[i] = j
                        break

    cost = [F0] * (nvars + nslack)
    for k, v in lp.objective.coeffs:
        cost[index[k]] = v
    status = run(cost, nvars + nslack)
    if status == "unbounded":
        return LpSolution("unbounded", None, {}, tuple(pivots))

    assignment = {v: F0 for v in lp.variables}
    for i, b in enumerate(basis):
        if b < nvars:
            assignment[lp.variables[b]] = tableau[i][-1]
    value = lp.objective.evaluate(assignment)
    return LpSolution("optimal", value, assignment, tuple(pivots))


def format_program(lp: LinearProgram) -> str:
    """Human-readable export, one inequality per line, for external cross-checks."""
    lines = [f"min {lp.objective}"]
    for e in lp.constraints:
        lines.append(f"{e} >= 0")
    for v in lp.variables:
        lines.append(f"t{v} >= 0")
    return "\n".join(lines) + "\n"

"""Gomory mixed-integer cuts from the optimal simplex tableau.

Cuts are separated from tableau rows of fractional basic binaries, with the
standard nonbasic shift (variables at upper bound are complemented), so they
are valid for every mixed solution with integral structural variables.  The
continuous slack and logical columns take the mixed-integer coefficient form.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .lp import SimplexSolver

FRAC_EPS = 1e-4          # basic value must be at least this fractional
COEF_DROP = 1e-11
MAX_DYNAMISM = 1e7
MAX_CUTS_PER_ROUND = 10


def fractional_binaries(solver: SimplexSolver, n_int: int,
                        int_tol: float = 1e-6) -> list[int]:
    """Basis positions of structural integer columns with fractional values."""
    out = []
    for r in range(solver.m):
        j = int(solver.basis[r])
        if j >= n_int:
            continue
        v = solver.xB[r]
        if min(v - np.floor(v), np.ceil(v) - v) > int_tol:
            out.append(r)
    return out


def gmi_from_row(solver: SimplexSolver, r: int, n_int: int):
    """One mixed-integer cut (coeffs over working columns, rhs) or None."""
    arow, bval = solver.tableau_row(r)
    f0 = bval - np.floor(bval)
    if f0 < FRAC_EPS or f0 > 1 - FRAC_EPS:
        return None

    k = solver.W.shape[1]
    nonbasic = solver.in_basis < 0
    free = (solver.ub - solver.lb) > 1e-12
    cols = np.nonzero(nonbasic & free)[0]

    at_ub = solver.at_ub[cols]
    a = np.where(at_ub, -arow[cols], arow[cols])   # shifted-space coefficients
    is_int = cols < n_int

    g = np.empty(len(cols))
    fj = a - np.floor(a)
    ratio = f0 / (1.0 - f0)
    g[is_int] = np.where(fj[is_int] <= f0 + 1e-12, fj[is_int],
                         ratio * (1.0 - fj[is_int]))
    cont = ~is_int
    g[cont] = np.where(a[cont] >= 0.0, a[cont], -ratio * a[cont])
    g[np.abs(g) < COEF_DROP] = 0.0

    nz = g != 0.0
    if not nz.any():
        return None
    mags = np.abs(g[nz])
    if mags.max() / mags.min() > MAX_DYNAMISM:
        return None

    # back to original variables: sum_j gamma_j * shifted_j >= f0, then <= form
    lhs = np.zeros(k)
    sel = cols[nz]
    gg = g[nz]
    ub_sel = at_ub[nz]
    lhs[sel] = np.where(ub_sel, gg, -gg)
    rhs = -f0 - float(gg[~ub_sel] @ solver.lb[sel[~ub_sel]]) \
        + float(gg[ub_sel] @ solver.ub[sel[ub_sel]])
    if not np.isfinite(rhs):
        return None
    return lhs, rhs


def separate(solver: SimplexSolver, n_int: int) -> tuple[sp.csr_matrix, np.ndarray] | None:
    """Cut batch for the current optimum; None when nothing separates."""
    rows = fractional_binaries(solver, n_int)
    if not rows:
        return None
    # most fractional first, ties by basis column id for reproducibility
    fracs = [(abs(solver.xB[r] - np.floor(solver.xB[r]) - 0.5), int(solver.basis[r]), r)
             for r in rows]
    fracs.sort()
    picked = []
    rhs = []
    for _, _, r in fracs[:MAX_CUTS_PER_ROUND]:
        cut = gmi_from_row(solver, r, n_int)
        if cut is None:
            continue
        picked.append(cut[0])
        rhs.append(cut[1])
    if not picked:
        return None
    mat = sp.csr_matrix(np.vstack(picked))
    return mat, np.asarray(rhs)

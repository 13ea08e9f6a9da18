"""Numba-jitted Gauss-Seidel kernels.

CSR arrays are passed raw so the jitted loops stay allocation free.  All
sweeps run in ascending (and for symmetric smoothing descending) index
order, which makes repeated runs bitwise identical.
"""

import numpy as np
from numba import njit

__all__ = ["diag_positions", "gs_forward", "gs_backward", "pgs_sweep",
           "project_feasible"]


@njit(cache=True)
def apply_rot_forward(ii, jj, cc, ss, v):
    """Apply a recorded rotation/flip sequence in order (Q^T v)."""
    for k in range(ii.shape[0]):
        i, j = ii[k], jj[k]
        if i == j:
            v[i] = cc[k] * v[i]
        else:
            vi, vj = v[i], v[j]
            v[i] = cc[k] * vi + ss[k] * vj
            v[j] = -ss[k] * vi + cc[k] * vj


@njit(cache=True)
def apply_rot_backward(ii, jj, cc, ss, v):
    """Apply the inverse sequence in reverse order (Q v)."""
    for k in range(ii.shape[0] - 1, -1, -1):
        i, j = ii[k], jj[k]
        if i == j:
            v[i] = cc[k] * v[i]
        else:
            vi, vj = v[i], v[j]
            v[i] = cc[k] * vi - ss[k] * vj
            v[j] = ss[k] * vi + cc[k] * vj


@njit(cache=True)
def apply_rot_forward_rows(ii, jj, cc, ss, M):
    """Forward sequence applied to the rows of a dense matrix (Q^T M)."""
    ncol = M.shape[1]
    for k in range(ii.shape[0]):
        i, j = ii[k], jj[k]
        if i == j:
            c = cc[k]
            for t in range(ncol):
                M[i, t] = c * M[i, t]
        else:
            c, s = cc[k], ss[k]
            for t in range(ncol):
                a = M[i, t]
                b = M[j, t]
                M[i, t] = c * a + s * b
                M[j, t] = -s * a + c * b


@njit(cache=True)
def diag_positions(n, indptr, indices):
    """Index of the diagonal entry per CSR row; -1 if absent."""
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                pos[i] = k
                break
    return pos


@njit(cache=True)
def gs_forward(indptr, indices, data, diag_pos, x, b):
    n = x.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * x[j]
        x[i] = s / data[diag_pos[i]]


@njit(cache=True)
def gs_backward(indptr, indices, data, diag_pos, x, b):
    n = x.shape[0]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                s -= data[k] * x[j]
        x[i] = s / data[diag_pos[i]]


@njit(cache=True)
def pgs_sweep(indptr, indices, data, diag_pos, x, b,
              m, rt_indptr, rt_indices, rt_data,
              ru_indptr, ru_indices, ru_data, s, lb, ub, active, bind_tol,
              skip):
    """One ascending projected sweep clamping the first m unknowns.

    The local step at coordinate i minimizes the energy on the segment of
    the full feasible set cut out by that coordinate: the admissible move
    is intersected over every constraint row containing x[i], i.e. row i
    and the rows k > i reached through the upper factor (ru_* holds the
    rows of the upper-triangular factor, diagonal first).  The running
    row values ``s`` = R1^T x[:m] are maintained incrementally, so the
    iterate stays feasible after every single update.  ``active`` is
    filled post-sweep with the rows binding within ``bind_tol``.
    """
    n = x.shape[0]
    for i in range(n):
        if skip.shape[0] and skip[i]:
            continue
        gs = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j != i:
                gs -= data[k] * x[j]
        xi_new = gs / data[diag_pos[i]]
        if i < m:
            dt = xi_new - x[i]
            # own row first (diagonal is the first entry, positive)
            k0 = ru_indptr[i]
            vii = ru_data[k0]
            own_hi = (ub[i] - s[i]) / vii
            own_lo = (lb[i] - s[i]) / vii
            t_lo = own_lo
            t_hi = own_hi
            for k in range(k0 + 1, ru_indptr[i + 1]):
                row = ru_indices[k]
                v = ru_data[k]
                if v > 0.0:
                    hi = (ub[row] - s[row]) / v
                    lo = (lb[row] - s[row]) / v
                else:
                    hi = (lb[row] - s[row]) / v
                    lo = (ub[row] - s[row]) / v
                # a row left infeasible by an outer update must not force a
                # repair through a possibly tiny coupling; it only forbids
                # making things worse, its own step restores it cheaply
                if hi < 0.0:
                    hi = 0.0
                if lo > 0.0:
                    lo = 0.0
                if hi < t_hi:
                    t_hi = hi
                if lo > t_lo:
                    t_lo = lo
            if t_lo > t_hi:
                # conflicting repairs: enforce the own row, later rows are
                # restored at their own steps
                t_lo = own_lo
                t_hi = own_hi
            if dt >= t_hi:
                dt = t_hi
            elif dt <= t_lo:
                dt = t_lo
            xi_new = x[i] + dt
            if dt != 0.0:
                for k in range(k0, ru_indptr[i + 1]):
                    s[ru_indices[k]] += ru_data[k] * dt
        x[i] = xi_new
    # refresh the row values exactly and mark binding rows
    for i in range(m):
        acc = 0.0
        for k in range(rt_indptr[i], rt_indptr[i + 1]):
            acc += rt_data[k] * x[rt_indices[k]]
        s[i] = acc
        if acc >= ub[i] - bind_tol or acc <= lb[i] + bind_tol:
            active[i] = 1
        else:
            active[i] = 0


@njit(cache=True)
def project_feasible(x, m, r_indptr, r_indices, r_data, lb, ub):
    """Forward clamping pass making x satisfy the triangular bounds."""
    for i in range(m):
        acc = 0.0
        lastk = r_indptr[i + 1] - 1
        for k in range(r_indptr[i], lastk):
            acc += r_data[k] * x[r_indices[k]]
        rii = r_data[lastk]
        lo = (lb[i] - acc) / rii
        hi = (ub[i] - acc) / rii
        if x[i] < lo:
            x[i] = lo
        elif x[i] > hi:
            x[i] = hi

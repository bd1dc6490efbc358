"""Independent reference computations used by the tests.

The walk's first-step equations are assembled as a linear system and solved
by Gaussian elimination with partial pivoting in mpmath.  The systems are
very ill-conditioned (the condition number grows like ``e^{max U - min U}``),
so a double-precision LU, even with refined residuals, returns garbage for
rough potentials.  The working precision is therefore scaled with the range
of the potential.  Entries that are structurally zero are skipped, which keeps
the elimination linear in the size for the banded systems used here.
"""

from itertools import combinations

import mpmath as mp
import numpy as np

DPS = 50


def _dps_for(U):
    return DPS + int(np.ptp(U) / 2.3) + 10


def _hp_probs(U):
    """``(q_y, 1 - q_y)`` for ``y = 0 .. n`` at the current precision, from the potential."""
    q = [mp.mpf(0)]
    p = [mp.mpf(1)]
    for i in range(1, len(U)):
        e = mp.exp(mp.mpf(float(U[i])) - mp.mpf(float(U[i - 1])))
        q.append(e / (1 + e))
        p.append(1 / (1 + e))
    return q, p


def gauss_solve(rows, rhs):
    """Solve ``A x = rhs`` with ``A`` given as rows of ``{column: value}``.

    Plain Gaussian elimination with partial pivoting; a pivot search and an
    update only visit rows within the matrix bandwidth of the pivot.
    """
    n = len(rows)
    A = [dict(r) for r in rows]
    b = list(rhs)
    bw = max(abs(i - j) for i, r in enumerate(A) for j in r)
    for k in range(n):
        last = min(n, k + bw + 1)
        piv_row = max(range(k, last), key=lambda i: abs(A[i].get(k, 0)))
        A[k], A[piv_row] = A[piv_row], A[k]
        b[k], b[piv_row] = b[piv_row], b[k]
        piv = A[k][k]
        for i in range(k + 1, last):
            f = A[i].pop(k, 0)
            if f:
                f = f / piv
                for j, v in A[k].items():
                    if j != k:
                        A[i][j] = A[i].get(j, 0) - f * v
                b[i] -= f * b[k]
    x = [mp.mpf(0)] * n
    for k in reversed(range(n)):
        s = b[k] - mp.fsum(v * x[j] for j, v in A[k].items() if j != k)
        x[k] = s / A[k][k]
    return np.array([float(v) for v in x])


def system_expected_hit(U, y):
    """``E^x[tau_y]`` for ``x = 0 .. y-1`` from the first-step equations ``(I - P) m = 1``."""
    U = U[: y + 1]
    with mp.workdps(_dps_for(U)):
        q, p = _hp_probs(U)
        rows = []
        for i in range(y):
            row = {i: mp.mpf(1)}
            if i > 0:
                row[i - 1] = -q[i]
            if i + 1 < y:
                row[i + 1] = -p[i]
            rows.append(row)
        return gauss_solve(rows, [mp.mpf(1)] * y)


def system_ruin(U, a, c):
    """``P^x[tau_c < tau_a]`` for ``x = a .. c`` from the harmonic equations."""
    U = U[: c + 1]
    with mp.workdps(_dps_for(U)):
        q, p = _hp_probs(U)
        n = c - a + 1
        rows = [{0: mp.mpf(1)}]
        for k in range(1, n - 1):
            i = a + k
            rows.append({k: mp.mpf(1), k - 1: -q[i], k + 1: -p[i]})
        rows.append({n - 1: mp.mpf(1)})
        return gauss_solve(rows, [mp.mpf(0)] * (n - 1) + [mp.mpf(1)])


def brute_drawup(v):
    """``max over w <= u of v[u] - v[w]`` from the full pairwise difference matrix."""
    v = np.asarray(v, dtype=float)
    diff = v[None, :] - v[:, None]  # diff[w, u] = v[u] - v[w]
    return float(np.max(np.triu(diff)))


def brute_drawdown(v):
    """``max over u <= w of v[u] - v[w]``."""
    v = np.asarray(v, dtype=float)
    diff = v[:, None] - v[None, :]  # diff[u, w] = v[u] - v[w]
    return float(np.max(np.triu(diff)))


def brute_partition(v, threshold, n_parts, rising):
    """Exhaustive search over cut points ``0 = i_0 < ... < i_N = n-1`` (pieces share endpoints)."""
    f = brute_drawup if rising else brute_drawdown
    n = len(v)
    for inner in combinations(range(1, n - 1), n_parts - 1):
        cuts = (0,) + inner + (n - 1,)
        if all(f(v[cuts[k] : cuts[k + 1] + 1]) > threshold for k in range(n_parts)):
            return True
    return False


def mp_log_sum_exp(values, dps=60):
    with mp.workdps(dps):
        return float(mp.log(mp.fsum(mp.exp(mp.mpf(float(x))) for x in values)))


def mp_expected_hit(U, x, y, dps=DPS):
    """``E^x[tau_y]`` from the one-step recursion ``e_k = (1 + q_k e_{k-1}) / (1 - q_k)``."""
    with mp.workdps(max(dps, _dps_for(U[: y + 1]))):
        q, p = _hp_probs(U[: y + 1])
        e = []
        prev = mp.mpf(0)
        for k in range(y):
            prev = (1 + q[k] * prev) / p[k]
            e.append(prev)
        return float(mp.fsum(e[x:]))

"""Compiled inner loops: adaptive propagation with the tail estimator and
QUBO annealing.

Numba is optional; without it :data:`HAVE_NUMBA` is false and callers fall
back to the pure-Python loop.
"""

from __future__ import annotations

import numpy as np

from .polyalg import _recursion_arrays

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


def stacked_recursion(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """``first``/``parent`` indices into the stacked monomial vector.

    Monomial ``j >= 1`` equals ``x[first[j]] * mon[parent[j]]``.
    """
    first = [0]
    parent = [0]
    offset_prev, offset = 0, 1
    for k in range(1, order + 1):
        f, p = _recursion_arrays(n, k)
        first.extend(f.tolist())
        parent.extend((p + offset_prev).tolist())
        offset_prev, offset = offset, offset + len(f)
    return np.array(first, dtype=np.int64), np.array(parent, dtype=np.int64)


@njit(cache=True)
def tail_steps(S, spans, first, parent, top, x, t, t_end, rtol, warm, prev,
               stop_index, stop_value, times, states):
    """Advance until the buffers fill, ``t_end`` is out of reach or the stop fires.

    Returns ``(count, t, prev, status)`` with status 0 = buffer full,
    1 = remaining time below the smallest span (or exactly zero),
    2 = stop condition met, 3 = tolerance unattainable.
    """
    K, n, M = S.shape
    mon = np.empty(M)
    y = np.empty(n)
    count = 0
    while count < times.shape[0]:
        remaining = t_end - t
        if remaining <= 0.0:
            return count, t, prev, 1
        if stop_index >= 0 and x[stop_index] <= stop_value:
            return count, t, prev, 2
        lo = 0
        while lo < K and spans[lo] > remaining * (1.0 + 1e-12):
            lo += 1
        if lo == K:
            return count, t, prev, 1
        if warm and prev - 1 > lo:
            lo = prev - 1
        mon[0] = 1.0
        for j in range(1, M):
            mon[j] = x[first[j]] * mon[parent[j]]
        accepted = -1
        for i in range(lo, K):
            err = 0.0
            for r in range(n):
                full = 0.0
                tail = 0.0
                for j in range(top):
                    full += S[i, r, j] * mon[j]
                for j in range(top, M):
                    tail += S[i, r, j] * mon[j]
                full += tail
                y[r] = full
                scale = max(abs(x[r]), abs(full))
                d = abs(tail)
                if scale > 0.0:
                    e = d / scale
                elif d > 0.0:
                    e = np.inf
                else:
                    e = 0.0
                if not (e <= err):
                    err = e if e == e else np.inf
            if err <= rtol:
                accepted = i
                break
        if accepted < 0:
            return count, t, prev, 3
        prev = accepted
        t = t + spans[accepted]
        for r in range(n):
            x[r] = y[r]
            states[count, r] = y[r]
        times[count] = t
        count += 1
    return count, t, prev, 0


@njit(cache=True)
def anneal_run(lin, Q, b, idx, u, T, cooling):
    """Metropolis single-flip annealing from ``b``; returns the best state seen.

    ``idx``/``u`` are the pre-drawn proposal indices and uniforms, so the
    result does not depend on whether this function is compiled.
    """
    n = lin.size
    field = Q @ b
    e = 0.0
    best_e = 0.0
    best_b = b.copy()
    for k in range(idx.size):
        i = idx[k]
        s = 1.0 - 2.0 * b[i]
        delta = s * (lin[i] + 2.0 * field[i])
        if delta <= 0.0 or u[k] < np.exp(-delta / T):
            b[i] += s
            for j in range(n):
                field[j] += s * Q[j, i]
            e += delta
            if e < best_e:
                best_e = e
                best_b[:] = b
        T *= cooling
    return best_b

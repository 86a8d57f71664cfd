"""Coordinate-descent kernels with a numba fast path and a numpy fallback.

The cyclic soft-threshold sweep is the hot loop of the whole package (a
single screening call runs on the order of a thousand warm-started path
fits). Both backends implement the identical update in the same order, so
results are bitwise equal; only speed differs.

Backend selection: ``PSPS_BACKEND=numpy`` forces the fallback,
``PSPS_BACKEND=numba`` requires numba, anything else (or unset) uses numba
when importable. ``benchmarks/lasso_backend_bench.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np


def _cd_sweeps_numpy(gram, xz, penalties, beta, resid_corr, tol, max_iter):
    """Cyclic coordinate descent on the Gram form of the penalized LS problem.

    Minimizes  b'Gb - 2 b'xz + 2 sum_j penalties[j] |b_j|  (plus a constant),
    where ``gram``=X'X/T and ``xz``=X'z/T, by exact coordinatewise updates.
    ``beta`` and ``resid_corr`` (= xz - gram @ beta) are updated in place.

    Returns (sweeps_used, last_max_change, converged).
    """
    p = beta.shape[0]
    max_change = 0.0
    for sweep in range(max_iter):
        max_change = 0.0
        for j in range(p):
            gjj = gram[j, j]
            old = beta[j]
            if gjj <= 0.0:
                # zero-norm column: coefficient pinned at zero
                if old != 0.0:
                    resid_corr += old * gram[:, j]
                    beta[j] = 0.0
                    if abs(old) > max_change:
                        max_change = abs(old)
                continue
            rho = resid_corr[j] + gjj * old
            pen = penalties[j]
            if rho > pen:
                new = (rho - pen) / gjj
            elif rho < -pen:
                new = (rho + pen) / gjj
            else:
                new = 0.0
            if new != old:
                delta = new - old
                resid_corr -= delta * gram[:, j]
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change <= tol:
            return sweep + 1, max_change, True
    return max_iter, max_change, False


def _build_numba_kernel():
    from numba import njit

    @njit(cache=True, nogil=True)
    def _cd_sweeps_numba(gram, xz, penalties, beta, resid_corr, tol, max_iter):
        p = beta.shape[0]
        max_change = 0.0
        for sweep in range(max_iter):
            max_change = 0.0
            for j in range(p):
                gjj = gram[j, j]
                old = beta[j]
                if gjj <= 0.0:
                    if old != 0.0:
                        for i in range(p):
                            resid_corr[i] += old * gram[i, j]
                        beta[j] = 0.0
                        if abs(old) > max_change:
                            max_change = abs(old)
                    continue
                rho = resid_corr[j] + gjj * old
                pen = penalties[j]
                if rho > pen:
                    new = (rho - pen) / gjj
                elif rho < -pen:
                    new = (rho + pen) / gjj
                else:
                    new = 0.0
                if new != old:
                    delta = new - old
                    for i in range(p):
                        resid_corr[i] -= delta * gram[i, j]
                    beta[j] = new
                    if abs(delta) > max_change:
                        max_change = abs(delta)
            if max_change <= tol:
                return sweep + 1, max_change, True
        return max_iter, max_change, False

    return _cd_sweeps_numba


def _select_backend():
    choice = os.environ.get("PSPS_BACKEND", "").strip().lower()
    if choice == "numpy":
        return _cd_sweeps_numpy, "numpy"
    try:
        kernel = _build_numba_kernel()
    except ImportError:
        if choice == "numba":
            raise
        return _cd_sweeps_numpy, "numpy"
    return kernel, "numba"


cd_sweeps, BACKEND = _select_backend()

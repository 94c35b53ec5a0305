"""Hot numerical kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version and a vectorized
pure-numpy version. The active backend is chosen once at import time from
the ``DISAGG_USE_NUMBA`` environment variable ("1" by default; set "0" to
force the numpy path, e.g. for debugging or on platforms without numba).
Both backends implement identical arithmetic and agree to floating-point
roundoff; results are deterministic within a backend.

Shared conventions:
  - knot vectors are full clamped vectors (boundary knot repeated degree+1
    times), length K + degree + 1;
  - covariance assembly is Z[a,b] = sum_c w_c * eta_c[a] * eta_c[b] *
    corr_c[a,b] with the category sum innermost, so tied parameter sets
    reduce bit-for-bit across covariance kinds;
  - Cholesky failures escalate through the jitter ladder (eps * mean diag
    added to the diagonal) before reporting failure.
"""

import os

import numpy as np
import scipy.linalg as sla

LOG_2PI = 1.8378770664093453
# jitter ladder: raw attempt, then eps * mean(diag) with eps from 1e-10 to 1e-6
JITTER_LADDER = np.array([0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6])

_env = os.environ.get("DISAGG_USE_NUMBA", "1")
try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and _env != "0"


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _basis_matrix_np(knots, degree, tvals):
    """Evaluate all B-spline basis functions at tvals; returns (len(tvals), K)."""
    K = knots.shape[0] - degree - 1
    t = np.ascontiguousarray(tvals, dtype=np.float64)
    n = t.shape[0]
    span = np.searchsorted(knots, t, side="right") - 1
    span = np.clip(span, degree, K - 1)
    N = np.zeros((n, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = t - knots[span + 1 - j]
        right[:, j] = knots[span + j] - t
        saved = np.zeros(n)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    out = np.zeros((n, K))
    rows = np.arange(n)[:, None]
    cols = (span[:, None] - degree) + np.arange(degree + 1)[None, :]
    out[rows, cols] = N
    return out


def _curve_eval_np(knots, degree, coeffs, tvals):
    """Evaluate the spline sum_k coeffs[k] B_k(t) by de Boor's recurrence.

    The incremental form d_r <- d_{r-1} + a*(d_r - d_{r-1}) evaluates a
    constant-coefficient spline to exactly that constant, which the
    covariance reduction identities rely on.
    """
    K = coeffs.shape[0]
    t = np.ascontiguousarray(tvals, dtype=np.float64)
    span = np.searchsorted(knots, t, side="right") - 1
    span = np.clip(span, degree, K - 1)
    idx = (span[:, None] - degree) + np.arange(degree + 1)[None, :]
    d = coeffs[idx].astype(np.float64)
    for j in range(1, degree + 1):
        for r in range(degree, j - 1, -1):
            i = span - degree + r
            a = (t - knots[i]) / (knots[i + degree + 1 - j] - knots[i])
            d[:, r] = d[:, r - 1] + a * (d[:, r] - d[:, r - 1])
    return d[:, degree]


def _corr_matrix_np(phi, grid_a, grid_b):
    """Exponential-decay correlation exp(-phi |t - s|) between two grids."""
    return np.exp(-phi * np.abs(grid_a[:, None] - grid_b[None, :]))


def _cov_cross_np(eta_a, eta_b, corr, weights):
    """Weighted per-category covariance sum; eta_a (C,Ta), eta_b (C,Tb),
    corr (C,Ta,Tb), weights (C,) -> (Ta,Tb)."""
    C = eta_a.shape[0]
    out = np.zeros((eta_a.shape[1], eta_b.shape[1]))
    for c in range(C):
        out += weights[c] * (eta_a[c][:, None] * eta_b[c][None, :]) * corr[c]
    return out


def _chol_jittered_np(Z, jitters):
    """Cholesky with jitter escalation; returns L or None."""
    T = Z.shape[0]
    mean_diag = np.trace(Z) / T
    for eps in jitters:
        Zj = Z if eps == 0.0 else Z + np.eye(T) * (eps * mean_diag)
        try:
            return np.linalg.cholesky(Zj)
        except np.linalg.LinAlgError:
            continue
    return None


def _cov_loglik_np(eta, corr, cweights, sfac, ranks, resid, n_rep, jitters,
                   L_out, logdet_out, trs_out):
    """Assemble + factorize every curve's covariance and return the total
    Gaussian log-likelihood at the current residuals.

    Writes per-curve Cholesky factors, log-determinants and base traces
    tr(Z_i^{-1} S0c_i) into the provided buffers so the caller can reuse
    them after a Metropolis acceptance. Returns (loglik, fail_index);
    fail_index is -1 on success.
    """
    C, T = eta.shape
    I = cweights.shape[0]
    total = 0.0
    for i in range(I):
        Z = _cov_cross_np(eta, eta, corr, cweights[i])
        L = _chol_jittered_np(Z, jitters)
        if L is None:
            return np.nan, i
        L_out[i] = L
        logdet = 2.0 * np.sum(np.log(np.diagonal(L)))
        logdet_out[i] = logdet
        r = int(ranks[i])
        if r > 0:
            W = sla.solve_triangular(L, sfac[i, :, :r], lower=True,
                                     check_finite=False)
            trs = float(np.sum(W * W))
        else:
            trs = 0.0
        trs_out[i] = trs
        w = sla.solve_triangular(L, resid[i], lower=True, check_finite=False)
        quad = float(np.dot(w, w))
        total += (-0.5 * n_rep * (T * LOG_2PI + logdet)
                  - 0.5 * trs - 0.5 * n_rep * quad)
    return total, -1


def _loglik_from_factors_np(L, logdet, trs, resid, n_rep):
    """Log-likelihood from cached factors; only the residuals vary."""
    I, T = resid.shape
    total = 0.0
    for i in range(I):
        w = sla.solve_triangular(L[i], resid[i], lower=True, check_finite=False)
        total += (-0.5 * n_rep * (T * LOG_2PI + logdet[i])
                  - 0.5 * trs[i] - 0.5 * n_rep * float(np.dot(w, w)))
    return total


def _beta_suffstats_np(L, x_design, ybar, n_rep):
    """Data terms of the beta full conditional from cached factors.

    Returns (M, h) with M = n_rep * sum_i X_i' Z_i^{-1} X_i and
    h = n_rep * sum_i X_i' Z_i^{-1} ybar_i.
    """
    I, T, P = x_design.shape
    M = np.zeros((P, P))
    h = np.zeros(P)
    for i in range(I):
        A = sla.solve_triangular(L[i], x_design[i], lower=True,
                                 check_finite=False)
        u = sla.solve_triangular(L[i], ybar[i], lower=True, check_finite=False)
        M += n_rep * (A.T @ A)
        h += n_rep * (A.T @ u)
    return M, h


_NUMPY_IMPLS = {
    "basis_matrix": _basis_matrix_np,
    "curve_eval": _curve_eval_np,
    "corr_matrix": _corr_matrix_np,
    "cov_cross": _cov_cross_np,
    "cov_loglik": _cov_loglik_np,
    "loglik_from_factors": _loglik_from_factors_np,
    "beta_suffstats": _beta_suffstats_np,
}


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _basis_matrix_nb(knots, degree, tvals):
        K = knots.shape[0] - degree - 1
        n = tvals.shape[0]
        out = np.zeros((n, K))
        N = np.empty(degree + 1)
        left = np.empty(degree + 1)
        right = np.empty(degree + 1)
        for m in range(n):
            t = tvals[m]
            span = np.searchsorted(knots, t, side="right") - 1
            if span < degree:
                span = degree
            elif span > K - 1:
                span = K - 1
            N[0] = 1.0
            for j in range(1, degree + 1):
                left[j] = t - knots[span + 1 - j]
                right[j] = knots[span + j] - t
                saved = 0.0
                for r in range(j):
                    temp = N[r] / (right[r + 1] + left[j - r])
                    N[r] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                N[j] = saved
            for r in range(degree + 1):
                out[m, span - degree + r] = N[r]
        return out

    @njit(cache=True, nogil=True)
    def _curve_eval_nb(knots, degree, coeffs, tvals):
        K = coeffs.shape[0]
        n = tvals.shape[0]
        out = np.empty(n)
        d = np.empty(degree + 1)
        for m in range(n):
            t = tvals[m]
            span = np.searchsorted(knots, t, side="right") - 1
            if span < degree:
                span = degree
            elif span > K - 1:
                span = K - 1
            for r in range(degree + 1):
                d[r] = coeffs[span - degree + r]
            for j in range(1, degree + 1):
                for r in range(degree, j - 1, -1):
                    i = span - degree + r
                    a = (t - knots[i]) / (knots[i + degree + 1 - j] - knots[i])
                    d[r] = d[r - 1] + a * (d[r] - d[r - 1])
            out[m] = d[degree]
        return out

    @njit(cache=True, nogil=True)
    def _corr_matrix_nb(phi, grid_a, grid_b):
        na = grid_a.shape[0]
        nb = grid_b.shape[0]
        out = np.empty((na, nb))
        for a in range(na):
            for b in range(nb):
                out[a, b] = np.exp(-phi * abs(grid_a[a] - grid_b[b]))
        return out

    @njit(cache=True, nogil=True)
    def _cov_cross_nb(eta_a, eta_b, corr, weights):
        C = eta_a.shape[0]
        na = eta_a.shape[1]
        nb = eta_b.shape[1]
        out = np.zeros((na, nb))
        for c in range(C):
            for a in range(na):
                for b in range(nb):
                    out[a, b] += weights[c] * (eta_a[c, a] * eta_b[c, b]) * corr[c, a, b]
        return out

    @njit(cache=True, nogil=True)
    def _chol_inplace_nb(Z, mean_diag, jitters, L):
        """Lower Cholesky of Z (+ jitter ladder) into L; returns logdet or nan."""
        T = Z.shape[0]
        for jt in range(jitters.shape[0]):
            bump = jitters[jt] * mean_diag
            ok = True
            logdet = 0.0
            for a in range(T):
                for b in range(a):
                    acc = Z[a, b]
                    for k in range(b):
                        acc -= L[a, k] * L[b, k]
                    L[a, b] = acc / L[b, b]
                acc = Z[a, a] + bump
                for k in range(a):
                    acc -= L[a, k] * L[a, k]
                if acc <= 0.0 or np.isnan(acc):
                    ok = False
                    break
                L[a, a] = np.sqrt(acc)
                logdet += np.log(L[a, a])
            if ok:
                return 2.0 * logdet
        return np.nan

    @njit(cache=True, nogil=True)
    def _forward_solve_nb(L, b, out):
        """Solve L x = b for lower-triangular L."""
        T = L.shape[0]
        for a in range(T):
            acc = b[a]
            for k in range(a):
                acc -= L[a, k] * out[k]
            out[a] = acc / L[a, a]

    @njit(cache=True, nogil=True)
    def _cov_loglik_nb(eta, corr, cweights, sfac, ranks, resid, n_rep, jitters,
                       L_out, logdet_out, trs_out):
        C, T = eta.shape
        I = cweights.shape[0]
        Z = np.empty((T, T))
        w = np.empty(T)
        total = 0.0
        for i in range(I):
            mean_diag = 0.0
            for a in range(T):
                for b in range(T):
                    acc = 0.0
                    for c in range(C):
                        acc += cweights[i, c] * (eta[c, a] * eta[c, b]) * corr[c, a, b]
                    Z[a, b] = acc
                mean_diag += Z[a, a]
            mean_diag /= T
            L = L_out[i]
            logdet = _chol_inplace_nb(Z, mean_diag, jitters, L)
            if np.isnan(logdet):
                return np.nan, i
            logdet_out[i] = logdet
            trs = 0.0
            for col in range(ranks[i]):
                _forward_solve_nb(L, sfac[i, :, col], w)
                for a in range(T):
                    trs += w[a] * w[a]
            trs_out[i] = trs
            _forward_solve_nb(L, resid[i], w)
            quad = 0.0
            for a in range(T):
                quad += w[a] * w[a]
            total += (-0.5 * n_rep * (T * LOG_2PI + logdet)
                      - 0.5 * trs - 0.5 * n_rep * quad)
        return total, -1

    @njit(cache=True, nogil=True)
    def _loglik_from_factors_nb(L, logdet, trs, resid, n_rep):
        I, T = resid.shape
        w = np.empty(T)
        total = 0.0
        for i in range(I):
            _forward_solve_nb(L[i], resid[i], w)
            quad = 0.0
            for a in range(T):
                quad += w[a] * w[a]
            total += (-0.5 * n_rep * (T * LOG_2PI + logdet[i])
                      - 0.5 * trs[i] - 0.5 * n_rep * quad)
        return total

    @njit(cache=True, nogil=True)
    def _beta_suffstats_nb(L, x_design, ybar, n_rep):
        I, T, P = x_design.shape
        M = np.zeros((P, P))
        h = np.zeros(P)
        A = np.empty((T, P))
        u = np.empty(T)
        for i in range(I):
            Li = L[i]
            for p in range(P):
                for a in range(T):
                    acc = x_design[i, a, p]
                    for k in range(a):
                        acc -= Li[a, k] * A[k, p]
                    A[a, p] = acc / Li[a, a]
            _forward_solve_nb(Li, ybar[i], u)
            for p in range(P):
                for q in range(P):
                    acc = 0.0
                    for a in range(T):
                        acc += A[a, p] * A[a, q]
                    M[p, q] += n_rep * acc
                acc = 0.0
                for a in range(T):
                    acc += A[a, p] * u[a]
                h[p] += n_rep * acc
        return M, h

    _NUMBA_IMPLS = {
        "basis_matrix": _basis_matrix_nb,
        "curve_eval": _curve_eval_nb,
        "corr_matrix": _corr_matrix_nb,
        "cov_cross": _cov_cross_nb,
        "cov_loglik": _cov_loglik_nb,
        "loglik_from_factors": _loglik_from_factors_nb,
        "beta_suffstats": _beta_suffstats_nb,
    }
else:  # pragma: no cover
    _NUMBA_IMPLS = {}

IMPLS = {"numpy": _NUMPY_IMPLS}
if _HAVE_NUMBA:
    IMPLS["numba"] = _NUMBA_IMPLS

_ACTIVE = "numba" if NUMBA_ENABLED else "numpy"

basis_matrix = IMPLS[_ACTIVE]["basis_matrix"]
curve_eval = IMPLS[_ACTIVE]["curve_eval"]
corr_matrix = IMPLS[_ACTIVE]["corr_matrix"]
cov_cross = IMPLS[_ACTIVE]["cov_cross"]
cov_loglik = IMPLS[_ACTIVE]["cov_loglik"]
loglik_from_factors = IMPLS[_ACTIVE]["loglik_from_factors"]
beta_suffstats = IMPLS[_ACTIVE]["beta_suffstats"]


def active_backend():
    """Name of the kernel backend selected at import time."""
    return _ACTIVE

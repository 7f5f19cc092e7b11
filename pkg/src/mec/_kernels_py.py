"""Pure-numpy kernels. Same signatures as the compiled ``_kernels`` module."""

import numpy as np

# generator codes: see bregman.KIND_CODES
_QUAD, _KL, _EL, _HEL, _INV, _RENYI = range(6)

_KNN_CHUNK = 256


def _image_ok(code, nu, margin):
    if not np.all(np.isfinite(nu)):
        return False
    if code in (_QUAD, _KL):
        return True
    if code in (_EL, _INV):
        return bool(np.all(nu < -margin))
    if code == _HEL:
        return bool(np.all(nu < 1.0 - margin))
    return bool(np.all(nu > margin))


def dual_terms(code, alpha, gd, Z, lam, margin):
    """Evaluate the calibration map and dual derivatives at ``lam``.

    Returns ``(ok, omega, zt_omega, hessian, fsum)`` where ``zt_omega`` is
    ``Z.T @ omega``, ``hessian`` is ``Z.T diag(1/g'(omega)) Z`` and
    ``fsum`` is ``sum_j F(nu_j)``. When some ``nu_j`` leaves the image of
    ``g`` (shrunk by ``margin``) only ``ok=False`` is meaningful.
    """
    nu = gd + Z @ lam
    if not _image_ok(code, nu, margin):
        return False, None, None, None, np.nan
    if code == _QUAD:
        omega = nu
        curv = np.ones_like(nu)
        fvals = 0.5 * nu * nu
    elif code == _KL:
        omega = np.exp(nu - 1.0)
        curv = omega
        fvals = omega
    elif code == _EL:
        omega = -1.0 / nu
        curv = omega * omega
        fvals = -1.0 - np.log(-nu)
    elif code == _HEL:
        omega = (1.0 - nu) ** -2.0
        curv = 2.0 * omega**1.5
        fvals = nu / (1.0 - nu)
    elif code == _INV:
        s = np.sqrt(-2.0 * nu)
        omega = 1.0 / s
        curv = omega**3
        fvals = -s
    else:
        omega = nu ** (1.0 / alpha)
        curv = omega ** (1.0 - alpha) / alpha
        fvals = alpha / (alpha + 1.0) * nu * omega
    zt_omega = Z.T @ omega
    hess = Z.T @ (curv[:, None] * Z)
    return True, omega, zt_omega, hess, float(np.sum(fvals))


def knn_average(Xtr, Ytr, Xq, k):
    """Rectangular-kernel kNN average with inclusive ties at the k-th radius."""
    n = Xtr.shape[0]
    m = Xq.shape[0]
    k = min(int(k), n)
    out = np.empty(m, dtype=np.float64)
    for start in range(0, m, _KNN_CHUNK):
        q = Xq[start:start + _KNN_CHUNK]
        # accumulate coordinates left to right, as the compiled loop does, so
        # that exact distance ties are detected identically by both backends
        sq = np.zeros((q.shape[0], n))
        for c in range(Xtr.shape[1]):
            diff = q[:, c, None] - Xtr[None, :, c]
            sq += diff * diff
        radius = np.partition(sq, k - 1, axis=1)[:, k - 1]
        mask = sq <= radius[:, None]
        out[start:start + q.shape[0]] = (mask @ Ytr) / mask.sum(axis=1)
    return out

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled ordered product of SU(2) step exponentials."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

cnp.import_array()

# Below this squared angle the Taylor series of cos and sin(x)/x, cut after
# the x^10 term, are exact to double rounding.
cdef double SMALL_N2 = 1e-2


cdef inline void _cos_sinc(double n2, double *c, double *s) noexcept nogil:
    cdef double n
    if n2 < SMALL_N2:
        c[0] = 1.0 - n2 / 2 * (1.0 - n2 / 12 * (1.0 - n2 / 30 * (1.0 - n2 / 56 * (1.0 - n2 / 90))))
        s[0] = 1.0 - n2 / 6 * (1.0 - n2 / 20 * (1.0 - n2 / 42 * (1.0 - n2 / 72 * (1.0 - n2 / 110))))
    else:
        n = sqrt(n2)
        c[0] = cos(n)
        s[0] = sin(n) / n


def su2_chain(double[::1] ax, double[::1] ay, double[:, ::1] az):
    """Return ``U = S_{n-1} ... S_0`` per shot, ``S_k = exp(-i (ax, ay, az)_k . sigma)``.

    ``ax``/``ay`` are shared by all shots; ``az`` has shape (n_shots, n_steps).
    Each product is kept as the SU(2) pair ``U = [[a, -b*], [b, a*]]``.
    """
    cdef Py_ssize_t n_shots = az.shape[0]
    cdef Py_ssize_t n_steps = az.shape[1]
    if ax.shape[0] != n_steps or ay.shape[0] != n_steps:
        raise ValueError("ax, ay and az must share the step axis")
    out = np.empty((n_shots, 2, 2), dtype=np.complex128)
    cdef double complex[:, :, ::1] o = out
    cdef Py_ssize_t i, k
    cdef double x, y, z, c, s
    cdef double pr, pi, qr, qi          # step: alpha = pr + i pi, beta = qr + i qi
    cdef double ar, ai, br, bi, tr, ti
    with nogil:
        for i in range(n_shots):
            ar = 1.0
            ai = 0.0
            br = 0.0
            bi = 0.0
            for k in range(n_steps):
                x = ax[k]
                y = ay[k]
                z = az[i, k]
                _cos_sinc(x * x + y * y + z * z, &c, &s)
                pr = c
                pi = -s * z
                qr = s * y
                qi = -s * x
                # a' = alpha a - conj(beta) b ; b' = beta a + conj(alpha) b
                tr = pr * ar - pi * ai - (qr * br + qi * bi)
                ti = pr * ai + pi * ar - (qr * bi - qi * br)
                br, bi = qr * ar - qi * ai + (pr * br + pi * bi), qr * ai + qi * ar + (pr * bi - pi * br)
                ar = tr
                ai = ti
            o[i, 0, 0] = ar + 1j * ai
            o[i, 0, 1] = -br + 1j * bi
            o[i, 1, 0] = br + 1j * bi
            o[i, 1, 1] = ar - 1j * ai
    return out

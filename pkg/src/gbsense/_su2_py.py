"""Numpy fallback for :mod:`gbsense._su2`, vectorised over shots."""
import numpy as np


def su2_chain(ax, ay, az):
    ax = np.ascontiguousarray(ax, dtype=float)
    ay = np.ascontiguousarray(ay, dtype=float)
    az = np.ascontiguousarray(az, dtype=float)
    n_shots, n_steps = az.shape
    if ax.shape != (n_steps,) or ay.shape != (n_steps,):
        raise ValueError("ax, ay and az must share the step axis")
    u00 = np.ones(n_shots, dtype=complex)
    u01 = np.zeros(n_shots, dtype=complex)
    u10 = np.zeros(n_shots, dtype=complex)
    u11 = np.ones(n_shots, dtype=complex)
    for k in range(n_steps):
        x, y, z = ax[k], ay[k], az[:, k]
        nrm = np.sqrt(x * x + y * y + z * z)
        c = np.cos(nrm)
        s = np.ones_like(nrm)
        nz = nrm > 1e-300
        s[nz] = np.sin(nrm[nz]) / nrm[nz]
        s00 = c - 1j * s * z
        s01 = -s * y - 1j * s * x
        s10 = s * y - 1j * s * x
        s11 = c + 1j * s * z
        u00, u01, u10, u11 = (
            s00 * u00 + s01 * u10,
            s00 * u01 + s01 * u11,
            s10 * u00 + s11 * u10,
            s10 * u01 + s11 * u11,
        )
    out = np.empty((n_shots, 2, 2), dtype=complex)
    out[:, 0, 0] = u00
    out[:, 0, 1] = u01
    out[:, 1, 0] = u10
    out[:, 1, 1] = u11
    return out

"""Exact 2x2 quantum objects shared by the simulator, graybox and whitebox models.

Units: time in microseconds, frequency in MHz. Their product is dimensionless,
so phases are ``2*pi*f*t`` with no scale factors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCalibrationError, InvalidArgumentError

MATRIX_TOL = 1e-12
Z_CLAMP_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"X": SX, "Y": SY, "Z": SZ}

PROJ0 = np.array([[1, 0], [0, 0]], dtype=complex)
PROJ1 = np.array([[0, 0], [0, 1]], dtype=complex)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_unitary(u: np.ndarray, tol: float = MATRIX_TOL) -> bool:
    return bool(np.max(np.abs(dagger(u) @ u - I2)) <= tol)


def is_hermitian(a: np.ndarray, tol: float = MATRIX_TOL) -> bool:
    return bool(np.max(np.abs(a - dagger(a))) <= tol)


@dataclass(frozen=True)
class PulseSettings:
    """Ideal Ramsey sequence: delay ``tau`` (us), phase ``phi`` (rad), frequency ``f_B`` (MHz)."""

    tau: float
    phi: float
    f_B: float
    chi: tuple[float, ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise InvalidArgumentError(f"tau must be finite and >= 0, got {self.tau}")
        if not math.isfinite(self.phi) or not math.isfinite(self.f_B):
            raise InvalidArgumentError("phi and f_B must be finite")
        chi = tuple(float(c) for c in self.chi)
        if not all(math.isfinite(c) for c in chi):
            raise InvalidArgumentError("chi entries must be finite")
        object.__setattr__(self, "chi", chi)

    def with_frequency(self, f_B: float) -> "PulseSettings":
        return PulseSettings(self.tau, self.phi, f_B, self.chi)


@dataclass(frozen=True)
class ReadoutCalibration:
    """Per-shot click probabilities for the qubit in |0> (``pi0``) and |1> (``pi1``)."""

    pi0: float
    pi1: float

    def __post_init__(self):
        for name in ("pi0", "pi1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {v}")

    @property
    def alpha(self) -> float:
        return 0.5 * (self.pi0 + self.pi1)

    @property
    def visibility(self) -> float:
        s = self.pi0 + self.pi1
        if s <= 0:
            raise DegenerateCalibrationError("pi0 + pi1 must be positive")
        return (self.pi0 - self.pi1) / s


@dataclass(frozen=True)
class QubitState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (2, 2) or not np.all(np.isfinite(rho)):
            raise InvalidArgumentError("rho must be a finite 2x2 matrix")
        if abs(np.trace(rho) - 1) > MATRIX_TOL or not is_hermitian(rho):
            raise InvalidArgumentError("rho must be Hermitian with unit trace")
        if np.min(np.linalg.eigvalsh(rho)) < -MATRIX_TOL:
            raise InvalidArgumentError("rho must be positive semidefinite")
        object.__setattr__(self, "rho", rho)

    def population(self, k: int) -> float:
        return float(self.rho[k, k].real)


@dataclass(frozen=True)
class NoiseOperator:
    """Operator V_Z such that <Z> = Re tr(V_Z rho_tilde Z)."""

    matrix: np.ndarray
    imag_residue: float = field(default=0.0, compare=False)


def axis_rotation(axis: str, angle: float) -> np.ndarray:
    """Return ``exp(-i angle sigma_axis / 2)``."""
    if axis not in PAULI:
        raise InvalidArgumentError(f"axis must be X, Y or Z, got {axis!r}")
    if not math.isfinite(angle):
        raise InvalidArgumentError("rotation angle must be finite")
    return math.cos(angle / 2) * I2 - 1j * math.sin(angle / 2) * PAULI[axis]


def rz_batch(angles: np.ndarray) -> np.ndarray:
    """Vectorised ``R_Z`` over an array of angles, shape ``(..., 2, 2)``."""
    angles = np.asarray(angles, dtype=float)
    out = np.zeros(angles.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * angles)
    out[..., 1, 1] = np.exp(0.5j * angles)
    return out


def ry_batch(angles: np.ndarray) -> np.ndarray:
    angles = np.asarray(angles, dtype=float)
    c, s = np.cos(angles / 2), np.sin(angles / 2)
    out = np.empty(angles.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def ramsey_phase(settings: PulseSettings) -> float:
    return 2 * math.pi * settings.f_B * settings.tau + settings.phi


_RX_HALF = axis_rotation("X", math.pi / 2)


def u_ramsey(settings: PulseSettings) -> np.ndarray:
    """Ideal sequence unitary ``R_X(pi/2) R_Z(theta) R_X(pi/2)``."""
    return _RX_HALF @ axis_rotation("Z", ramsey_phase(settings)) @ _RX_HALF


def u_ramsey_batch(theta: np.ndarray) -> np.ndarray:
    return _RX_HALF @ rz_batch(theta) @ _RX_HALF


def evolve(state: QubitState, u: np.ndarray) -> QubitState:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2) or not is_unitary(u):
        raise InvalidArgumentError("evolve requires a 2x2 unitary")
    return QubitState(u @ state.rho @ dagger(u))


def noisy_expectation(v: NoiseOperator | np.ndarray, state_tilde: QubitState, observable: np.ndarray = SZ) -> float:
    """Real part of ``tr(V rho_tilde O)``.

    The imaginary part is not physical; callers who need it should use
    :func:`noisy_expectation_full`.
    """
    return noisy_expectation_full(v, state_tilde, observable)[0]


def noisy_expectation_full(v, state_tilde: QubitState, observable: np.ndarray = SZ) -> tuple[float, float]:
    """Return ``(Re, Im)`` of ``tr(V rho_tilde O)``."""
    mat = v.matrix if isinstance(v, NoiseOperator) else np.asarray(v, dtype=complex)
    if not is_hermitian(np.asarray(observable, dtype=complex)):
        raise InvalidArgumentError("observable must be Hermitian")
    t = np.trace(mat @ state_tilde.rho @ observable)
    return float(t.real), float(t.imag)


def clamp_z(z):
    """Clip <Z> into [-1, 1]; excursions beyond ``Z_CLAMP_TOL`` are model violations."""
    z_arr = np.asarray(z, dtype=float)
    if np.any(np.abs(z_arr) > 1 + Z_CLAMP_TOL) or not np.all(np.isfinite(z_arr)):
        raise InvalidArgumentError("<Z> outside [-1, 1]")
    out = np.clip(z_arr, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def click_probability(z_expectation, calib: ReadoutCalibration):
    """``alpha (1 + V <Z>)``; accepts scalars or arrays of <Z>."""
    z = clamp_z(z_expectation)
    return calib.alpha * (1 + calib.visibility * z)


def prep_error_state(epsilon: float) -> QubitState:
    if not (0.0 <= epsilon < 0.5):
        raise InvalidArgumentError(f"epsilon must lie in [0, 1/2), got {epsilon}")
    return QubitState(np.diag([1 - epsilon, epsilon]).astype(complex))


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """``(<X>, <Y>, <Z>)`` for one or many density matrices."""
    rho = np.asarray(rho)
    return np.stack(
        [
            2 * rho[..., 0, 1].real,
            -2 * rho[..., 0, 1].imag,
            (rho[..., 0, 0] - rho[..., 1, 1]).real,
        ],
        axis=-1,
    )

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbsense.errors import DegenerateCalibrationError, InvalidArgumentError
from gbsense.quantum import (
    I2,
    PROJ0,
    SX,
    SY,
    SZ,
    NoiseOperator,
    PulseSettings,
    QubitState,
    ReadoutCalibration,
    axis_rotation,
    click_probability,
    evolve,
    is_unitary,
    noisy_expectation,
    noisy_expectation_full,
    prep_error_state,
    ramsey_phase,
    u_ramsey,
)

from conftest import random_settings

angles = st.floats(-20, 20, allow_nan=False)
ZERO = QubitState(PROJ0)
ONE = QubitState(np.diag([0.0, 1.0]).astype(complex))


def p0_after(settings):
    return ZERO.__class__(evolve(ZERO, u_ramsey(settings)).rho).population(0)


# --- rotations -------------------------------------------------------------------


def test_rotation_zero_angle_is_identity():
    assert np.allclose(axis_rotation("X", 0.0), I2, atol=1e-15)


def test_rotation_about_z_is_diagonal_phase():
    th = 0.7
    expect = np.diag([np.exp(-0.5j * th), np.exp(0.5j * th)])
    assert np.allclose(axis_rotation("Z", th), expect, atol=1e-15)


def test_x_pi_flips_ground_state():
    out = evolve(ZERO, axis_rotation("X", math.pi))
    assert np.allclose(out.rho, ONE.rho, atol=1e-12)


def test_rotation_rejects_non_finite_angle():
    with pytest.raises(InvalidArgumentError):
        axis_rotation("Y", math.inf)
    with pytest.raises(InvalidArgumentError):
        axis_rotation("W", 0.1)


@given(st.sampled_from("XYZ"), angles, angles)
def test_rotations_about_one_axis_compose_additively(axis, a, b):
    lhs = axis_rotation(axis, a) @ axis_rotation(axis, b)
    assert np.max(np.abs(lhs - axis_rotation(axis, a + b))) < 1e-10


@given(st.sampled_from("XYZ"), angles)
def test_rotation_is_special_unitary(axis, a):
    r = axis_rotation(axis, a)
    assert is_unitary(r)
    assert abs(np.linalg.det(r) - 1) < 1e-12


# --- Ramsey phase and unitary ----------------------------------------------------


def test_phase_zero_delay():
    assert ramsey_phase(PulseSettings(0.0, 0.0, 123.4)) == 0.0


def test_phase_half_cycle():
    assert ramsey_phase(PulseSettings(1.0, 0.0, 0.5)) == pytest.approx(math.pi, abs=1e-15)


def test_phase_pure_offset():
    assert ramsey_phase(PulseSettings(1.0, math.pi / 2, 0.0)) == pytest.approx(math.pi / 2, abs=1e-15)


def test_ramsey_theta_pi_returns_to_ground():
    assert p0_after(PulseSettings(0.0, math.pi, 0.0)) == pytest.approx(1.0, abs=1e-12)


def test_ramsey_theta_zero_is_a_pi_pulse():
    s = PulseSettings(0.0, 0.0, 1.0)
    assert np.allclose(u_ramsey(s), axis_rotation("X", math.pi), atol=1e-12)
    assert p0_after(s) == pytest.approx(0.0, abs=1e-12)


def test_ramsey_closed_system_population_many_settings(rng):
    for s in random_settings(rng, 10_000):
        u = u_ramsey(s)
        assert np.max(np.abs(u.conj().T @ u - I2)) < 1e-12
        z = noisy_expectation(I2, evolve(ZERO, u), SZ)
        assert abs((1 + z) / 2 - 0.5 * (1 - math.cos(ramsey_phase(s)))) < 1e-10


def test_pulse_settings_validation():
    with pytest.raises(InvalidArgumentError):
        PulseSettings(-1.0, 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        PulseSettings(1.0, math.nan, 1.0)
    with pytest.raises(InvalidArgumentError):
        PulseSettings(1.0, 0.0, 1.0, (math.inf,))


# --- evolution and states ----------------------------------------------------------


def test_evolve_identity_keeps_state():
    rho = QubitState(np.array([[0.6, 0.2 - 0.1j], [0.2 + 0.1j, 0.4]]))
    assert np.allclose(evolve(rho, I2).rho, rho.rho, atol=1e-15)


@given(angles, angles, angles)
def test_maximally_mixed_state_is_invariant(a, b, c):
    u = axis_rotation("Z", a) @ axis_rotation("Y", b) @ axis_rotation("X", c)
    out = evolve(QubitState(I2 / 2), u)
    assert np.allclose(out.rho, I2 / 2, atol=1e-12)


@given(angles, angles, st.floats(0, 1))
def test_evolve_preserves_trace_and_spectrum(a, b, p):
    rho = QubitState(np.array([[p, 0], [0, 1 - p]], dtype=complex))
    out = evolve(rho, axis_rotation("Y", a) @ axis_rotation("Z", b))
    assert abs(np.trace(out.rho) - 1) < 1e-12
    assert np.allclose(np.sort(np.linalg.eigvalsh(out.rho)), sorted([p, 1 - p]), atol=1e-12)


def test_evolve_rejects_non_unitary():
    with pytest.raises(InvalidArgumentError):
        evolve(ZERO, 2 * I2)


def test_state_validation():
    with pytest.raises(InvalidArgumentError):
        QubitState(np.diag([0.7, 0.7]).astype(complex))
    with pytest.raises(InvalidArgumentError):
        QubitState(np.array([[0.5, 1.0], [0.0, 0.5]], dtype=complex))
    with pytest.raises(InvalidArgumentError):
        QubitState(np.diag([1.5, -0.5]).astype(complex))


# --- noise-operator expectation ------------------------------------------------------


@given(st.floats(-10, 10))
def test_identity_noise_operator_recovers_ideal_expectation(theta):
    s = PulseSettings(0.0, theta, 0.0)
    assert noisy_expectation(NoiseOperator(I2), evolve(ZERO, u_ramsey(s)), SZ) == pytest.approx(
        -math.cos(theta), abs=1e-12
    )


def test_zero_noise_operator_gives_zero():
    for obs in (SX, SY, SZ):
        assert noisy_expectation(np.zeros((2, 2)), ONE, obs) == 0.0


@given(st.floats(-1, 1), st.floats(-10, 10))
def test_scalar_noise_operator_scales_expectation(mu, theta):
    rho = evolve(ZERO, u_ramsey(PulseSettings(0.0, theta, 0.0)))
    assert noisy_expectation(mu * I2, rho, SZ) == pytest.approx(-mu * math.cos(theta), abs=1e-12)


def test_imaginary_residue_is_reported():
    v = np.array([[0, 1], [0, 0]], dtype=complex)
    rho = QubitState(np.array([[0.5, 0.5j], [-0.5j, 0.5]]))
    re, im = noisy_expectation_full(v, rho, SZ)
    assert re == pytest.approx(0.0, abs=1e-15)
    assert im == pytest.approx(-0.5, abs=1e-15)


# --- readout map -----------------------------------------------------------------------


def test_click_probability_bright_state():
    assert click_probability(1.0, ReadoutCalibration(0.03, 0.02)) == pytest.approx(0.03, abs=1e-15)


def test_click_probability_zero_visibility():
    for z in (-1.0, -0.3, 0.0, 0.8):
        assert click_probability(z, ReadoutCalibration(0.04, 0.04)) == pytest.approx(0.04, abs=1e-15)


def test_click_probability_midpoint():
    assert click_probability(0.0, ReadoutCalibration(0.03, 0.02)) == pytest.approx(0.025, abs=1e-15)


def test_click_probability_degenerate_calibration():
    with pytest.raises(DegenerateCalibrationError):
        click_probability(0.0, ReadoutCalibration(0.0, 0.0))


def test_click_probability_forms_agree_on_grid():
    for pi0 in np.linspace(0, 1, 11):
        for pi1 in np.linspace(0, 1, 11):
            if pi0 + pi1 == 0:
                continue
            cal = ReadoutCalibration(pi0, pi1)
            for z in np.linspace(-1, 1, 21):
                eq2 = pi0 * (1 + z) / 2 + pi1 * (1 - z) / 2
                p = click_probability(z, cal)
                assert abs(p - eq2) < 1e-15
                assert min(pi0, pi1) - 1e-15 <= p <= max(pi0, pi1) + 1e-15


def test_click_probability_clamps_rounding_but_rejects_excursions():
    cal = ReadoutCalibration(0.03, 0.02)
    assert click_probability(1 + 5e-10, cal) == pytest.approx(0.03, abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        click_probability(1.01, cal)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1), st.floats(0.01, 1))
def test_click_probability_is_affine(z1, z2, lam, pi0):
    cal = ReadoutCalibration(pi0, 0.3 * pi0)
    mix = click_probability(lam * z1 + (1 - lam) * z2, cal)
    assert mix == pytest.approx(lam * click_probability(z1, cal) + (1 - lam) * click_probability(z2, cal), abs=1e-14)


def test_calibration_bounds():
    with pytest.raises(InvalidArgumentError):
        ReadoutCalibration(1.2, 0.0)
    with pytest.raises(InvalidArgumentError):
        ReadoutCalibration(0.1, -0.1)


# --- preparation error --------------------------------------------------------------------


def test_prep_error_zero_is_ground_state():
    assert np.array_equal(prep_error_state(0.0).rho, ZERO.rho)


def test_prep_error_quarter():
    assert np.allclose(prep_error_state(0.25).rho, np.diag([0.75, 0.25]), atol=0)


@given(st.floats(0, 0.4999))
def test_prep_error_spectrum_exact(eps):
    rho = prep_error_state(eps).rho
    assert np.trace(rho).real == 1.0
    assert sorted(np.diag(rho).real) == sorted([1 - eps, eps])


def test_prep_error_range():
    for bad in (-0.1, 0.5, 0.7):
        with pytest.raises(InvalidArgumentError):
            prep_error_state(bad)

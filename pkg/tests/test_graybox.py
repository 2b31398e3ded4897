from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbsense.errors import (
    CheckpointVersionError,
    CorruptCheckpointError,
    InvalidArgumentError,
    LayoutMismatchError,
    TrainingDivergedError,
)
from gbsense.graybox import (
    NoiseOperatorParams,
    checkpoint_dict,
    feature_layout,
    gb_forward,
    gb_forward_batch,
    gb_loss_gradient,
    gb_predict_grid,
    load_checkpoint,
    make_graybox,
    reconstruct_batch,
    reconstruct_noise_operator,
    save_checkpoint,
    split_indices,
    train,
)
from gbsense.quantum import I2, SZ, PulseSettings, ReadoutCalibration, bloch_vector, dagger, ramsey_phase, u_ramsey
from gbsense.simulator import DatasetRecord

from conftest import random_settings

CAL = ReadoutCalibration(0.03, 0.02)
FORMS = ["observable", "hermitian"]
angles = st.floats(-10, 10)
mus = st.floats(-1, 1)


def feats_for(n, rng):
    return np.column_stack([rng.uniform(0, 5, n), rng.uniform(0, 2 * math.pi, n), rng.uniform(0, 4, n)])


def small_gb(form="observable", seed=0, hidden=(8, 6)):
    lo_hi = np.array([[0.0, 0.0, 0.0], [5.0, 2 * math.pi, 4.0]])
    return make_graybox(lo_hi, hidden=hidden, seed=seed, vz_form=form)


def identity_gb(form):
    """Head pinned so that the reconstructed V is exactly the identity."""
    gb = small_gb(form)
    net = gb.net.copy()
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = [0, 0, 0, 20.0, 20.0 if form == "hermitian" else -20.0]  # tanh(+-20) == +-1.0
    return gb.replace_net(net)


def records_from(settings, p_values, calib=CAL, R=2**53):
    return [DatasetRecord(s, calib, R, int(round(p * R))) for s, p in zip(settings, p_values)]


# --- noise-operator reconstruction ------------------------------------------------------


@given(angles, angles, angles)
def test_unit_eigenvalues_give_identity(t1, t2, t3):
    v = reconstruct_noise_operator(NoiseOperatorParams(t1, t2, t3, 1.0, 1.0)).matrix
    assert np.max(np.abs(v - I2)) < 1e-12


@given(mus, mus)
def test_zero_angles_give_diagonal(a, b):
    v = reconstruct_noise_operator(NoiseOperatorParams(0, 0, 0, a, b)).matrix
    assert np.allclose(v, np.diag([a, b]), atol=1e-15)


@given(angles, angles, angles, mus, mus)
def test_eigenvalues_are_mu(t1, t2, t3, a, b):
    v = reconstruct_noise_operator(NoiseOperatorParams(t1, t2, t3, a, b)).matrix
    assert np.max(np.abs(v - dagger(v))) < 1e-12
    assert np.allclose(np.linalg.eigvalsh(v), sorted([a, b]), atol=1e-12)
    assert np.linalg.norm(v, 2) <= 1 + 1e-9


@given(angles, angles, angles, mus, mus, angles)
def test_observable_form_expectation_is_affine_in_bloch_vector(t1, t2, t3, a, b, theta):
    w = reconstruct_batch(np.array([t1, t2, t3, a, b]), "hermitian")[0]
    v = reconstruct_batch(np.array([t1, t2, t3, a, b]), "observable")[0]
    assert np.allclose(v, SZ @ w, atol=1e-15)
    u = u_ramsey(PulseSettings(0, theta, 0))
    rho = u @ np.diag([1, 0]).astype(complex) @ dagger(u)
    tr = np.trace(v @ rho @ SZ)
    w0 = 0.5 * np.trace(w).real
    wv = 0.5 * bloch_vector(w)  # W = w0 I + wv . sigma
    assert abs(tr.imag) < 1e-12
    assert tr.real == pytest.approx(w0 + wv @ bloch_vector(rho), abs=1e-12)
    assert abs(tr.real) <= 1 + 1e-12


def test_noise_operator_params_validation():
    with pytest.raises(InvalidArgumentError):
        NoiseOperatorParams(0, 0, 0, 1.5, 0)
    with pytest.raises(InvalidArgumentError):
        NoiseOperatorParams(math.nan, 0, 0, 0, 0)
    with pytest.raises(InvalidArgumentError):
        reconstruct_batch(np.zeros(5), "general")


# --- forward pass ---------------------------------------------------------------------------


@pytest.mark.parametrize("form", FORMS)
def test_identity_operator_recovers_noiseless_click_probability(form, rng):
    gb = identity_gb(form)
    settings = random_settings(rng, 1000, f_range=(0, 4))
    p, tape = gb_forward_batch(gb, settings, [CAL] * 1000)
    theta = np.array([ramsey_phase(s) for s in settings])
    expect = CAL.alpha * (1 - CAL.visibility * np.cos(theta))
    assert np.max(np.abs(p - expect)) < 1e-10
    assert np.max(np.abs(tape.imag_residue)) < 1e-12


def test_zero_visibility_ignores_network(rng):
    cal = ReadoutCalibration(0.04, 0.04)
    for seed in range(3):
        for s in random_settings(rng, 5):
            assert gb_forward(small_gb(seed=seed), s, cal)[0] == pytest.approx(0.04, abs=1e-17)


@pytest.mark.parametrize("form", FORMS)
def test_probability_stays_between_calibration_levels(form, rng):
    for seed in range(10):
        gb = small_gb(form, seed=seed)
        net = gb.net.copy()
        for w in net.weights:
            w *= 3
        gb = gb.replace_net(net)
        pi = rng.uniform(0, 1, (1000, 2))
        cals = [ReadoutCalibration(*row) for row in pi]
        p, tape = gb_forward_batch(gb, random_settings(rng, 1000, f_range=(0, 4)), cals)
        assert np.all(np.abs(tape.z) <= 1)
        assert np.all(p >= pi.min(axis=1) - 1e-15) and np.all(p <= pi.max(axis=1) + 1e-15)


def test_calibration_enters_only_the_last_layer(rng):
    gb = small_gb()
    s = random_settings(rng, 20, f_range=(0, 4))
    _, t1 = gb_forward_batch(gb, s, [CAL] * 20)
    _, t2 = gb_forward_batch(gb, s, [ReadoutCalibration(0.9, 0.1)] * 20)
    assert np.array_equal(t1.z, t2.z)
    assert np.array_equal(t1.head, t2.head)


def test_forward_rejects_wrong_chi(rng):
    with pytest.raises(InvalidArgumentError):
        gb_forward(small_gb(), PulseSettings(1, 0, 1, (0.5,)), CAL)


# --- gradients --------------------------------------------------------------------------------


def fd_relative_errors(gb, records, rng, n_params=30, h=1e-6, mode="batch"):
    _, grads = gb_loss_gradient(gb, records, mode=mode)
    arrays = gb.net.arrays()
    errs = []
    for _ in range(n_params):
        k = rng.integers(len(arrays))
        idx = tuple(rng.integers(s) for s in arrays[k].shape)

        def loss(delta):
            moved = [a.copy() for a in arrays]
            moved[k][idx] += delta
            return gb_loss_gradient(gb.replace_net(gb.net.with_arrays(moved)), records, mode=mode)[0]

        fd = (loss(h) - loss(-h)) / (2 * h)
        an = grads[k][idx]
        errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return np.array(errs)


@pytest.mark.parametrize("form", FORMS)
def test_full_composite_gradient_single_record(form, rng):
    gb = small_gb(form, seed=4)
    s = random_settings(rng, 1, f_range=(0, 4))
    recs = records_from(s, [0.0237])
    assert fd_relative_errors(gb, recs, rng).max() < 1e-5


@pytest.mark.parametrize("mode", ["batch", "per_example"])
def test_full_composite_gradient_batch(mode, rng):
    gb = small_gb(seed=5)
    s = random_settings(rng, 6, f_range=(0, 4))
    recs = records_from(s, rng.uniform(0.02, 0.03, 6))
    assert fd_relative_errors(gb, recs, rng, n_params=20, mode=mode).max() < 1e-5


def test_gradient_vanishes_at_a_perfect_fit(rng):
    gb = small_gb(seed=6)
    s = random_settings(rng, 8, f_range=(0, 4))
    p, _ = gb_forward_batch(gb, s, [CAL] * 8)
    _, g_fit = gb_loss_gradient(gb, records_from(s, p))
    _, g_off = gb_loss_gradient(gb, records_from(s, p + 0.001))
    n_fit = math.sqrt(sum(float(np.sum(g * g)) for g in g_fit))
    n_off = math.sqrt(sum(float(np.sum(g * g)) for g in g_off))
    assert n_fit < 1e-3 * n_off


def test_duplicated_batch_has_same_loss_and_gradient(rng):
    gb = small_gb(seed=7)
    s = random_settings(rng, 5, f_range=(0, 4))
    recs = records_from(s, rng.uniform(0.02, 0.03, 5))
    l1, g1 = gb_loss_gradient(gb, recs)
    l2, g2 = gb_loss_gradient(gb, recs + recs)
    assert l2 == pytest.approx(l1, rel=1e-12)
    for a, b in zip(g1, g2):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-14)


def test_empty_batch_is_rejected():
    with pytest.raises(InvalidArgumentError):
        gb_loss_gradient(small_gb(), [])


# --- training -----------------------------------------------------------------------------------


def toy_dataset(rng, n=60):
    s = random_settings(rng, n, f_range=(0.5, 3))
    p = [CAL.alpha * (1 - CAL.visibility * math.cos(ramsey_phase(x))) for x in s]
    return records_from(s, p)


def test_zero_iterations_leave_model_unchanged(rng):
    data = toy_dataset(rng)
    gb = make_graybox(data, hidden=(6, 4), seed=1)
    out, rep = train(gb, data, iterations=0)
    assert all(np.array_equal(a, b) for a, b in zip(gb.net.arrays(), out.net.arrays()))
    assert rep.train_loss == [] and rep.test_iterations == [0]


def test_training_is_deterministic_and_reduces_loss(rng):
    data = toy_dataset(rng)
    gb = make_graybox(data, hidden=(6, 4), seed=1)
    a, rep_a = train(gb, data, iterations=300, eval_every=100, seed=3)
    b, rep_b = train(gb, data, iterations=300, eval_every=100, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.net.arrays(), b.net.arrays()))
    assert rep_a.train_loss == rep_b.train_loss
    assert rep_a.test_iterations == [0, 100, 200, 300]
    assert np.mean(rep_a.train_loss[-20:]) < np.mean(rep_a.train_loss[:20])
    assert all(math.isfinite(x) for x in rep_a.train_loss + rep_a.test_loss)


def test_minibatch_training_runs(rng):
    data = toy_dataset(rng)
    gb = make_graybox(data, hidden=(6, 4), seed=1)
    _, rep = train(gb, data, iterations=20, batch_size=10, eval_every=10)
    assert len(rep.train_loss) == 20


@given(st.integers(10, 20000), st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, seed):
    tr, te = split_indices(n, 0.9, seed)
    assert len(tr) == round(0.9 * n) and len(tr) + len(te) == n
    assert not set(tr.tolist()) & set(te.tolist())


def test_split_sizes_for_full_size_dataset():
    tr, te = split_indices(9652, 0.9, 0)
    assert (len(tr), len(te)) == (8687, 965)


def test_training_needs_ten_records(rng):
    data = toy_dataset(rng, n=9)
    with pytest.raises(InvalidArgumentError):
        train(make_graybox(data, hidden=(4,)), data, iterations=1)


def test_divergence_keeps_last_good_model(rng):
    data = toy_dataset(rng)
    gb = make_graybox(data, hidden=(6, 4), seed=1)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as info:
        train(gb, data, iterations=50, lr=1e308)
    good = info.value.last_good
    assert good is not None
    assert all(np.all(np.isfinite(a)) for a in good.net.arrays())


def test_report_csv_columns(tmp_path, rng):
    data = toy_dataset(rng)
    _, rep = train(make_graybox(data, hidden=(4,)), data, iterations=4, eval_every=2)
    rep.write_csv(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,train_loss,test_loss"
    assert len(lines) == 1 + 5


# --- grid prediction ----------------------------------------------------------------------------------


def test_singleton_grid_matches_forward():
    gb = small_gb(seed=2)
    p = gb_predict_grid(gb, 1.3, 0.4, CAL, (), [2.2])
    assert p.shape == (1,)
    assert p[0] == gb_forward(gb, PulseSettings(1.3, 0.4, 2.2), CAL)[0]


@pytest.mark.parametrize("form", FORMS)
def test_zero_delay_identity_grid_is_constant(form):
    p = gb_predict_grid(identity_gb(form), 0.0, 0.0, CAL, (), np.linspace(0.5, 3.5, 50))
    assert np.allclose(p, CAL.alpha * (1 - CAL.visibility), atol=1e-15)


def test_estimator_sized_grid():
    p = gb_predict_grid(small_gb(), 1.0, 0.2, CAL, (), np.linspace(0.5, 3.5, 5001))
    assert p.shape == (5001,)
    assert np.all((p >= 0.02) & (p <= 0.03))


def test_grid_validation():
    with pytest.raises(InvalidArgumentError):
        gb_predict_grid(small_gb(), 1.0, 0.0, CAL, (), [])
    with pytest.raises(InvalidArgumentError):
        gb_predict_grid(small_gb(), 1.0, 0.0, CAL, (1.0,), [1.0])


# --- checkpoints -----------------------------------------------------------------------------------------


@pytest.mark.parametrize("form", FORMS)
def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng, form):
    gb = small_gb(form, seed=8)
    for b in gb.net.biases:
        b[:] = rng.normal(size=b.shape)
    save_checkpoint(gb, tmp_path / "ck.json")
    back = load_checkpoint(tmp_path / "ck.json")
    s = random_settings(rng, 100, f_range=(0, 4))
    assert np.array_equal(gb_forward_batch(gb, s, [CAL] * 100)[0], gb_forward_batch(back, s, [CAL] * 100)[0])
    assert back.vz_form == form
    assert [p.name for p in tmp_path.iterdir()] == ["ck.json"]


def test_truncated_checkpoint_is_corrupt(tmp_path):
    save_checkpoint(small_gb(), tmp_path / "ck.json")
    text = (tmp_path / "ck.json").read_text()
    (tmp_path / "ck.json").write_text(text[: len(text) // 2])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(tmp_path / "ck.json")


def test_checkpoint_with_bad_shapes_is_corrupt(tmp_path):
    d = checkpoint_dict(small_gb())
    d["weights"][1] = d["weights"][1][:-1]
    (tmp_path / "ck.json").write_text(json.dumps(d))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(tmp_path / "ck.json")


def test_checkpoint_version_mismatch(tmp_path):
    d = checkpoint_dict(small_gb())
    d["version"] = 99
    (tmp_path / "ck.json").write_text(json.dumps(d))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "ck.json")


def test_checkpoint_layout_mismatch(tmp_path):
    save_checkpoint(small_gb(), tmp_path / "ck.json")
    with pytest.raises(LayoutMismatchError):
        load_checkpoint(tmp_path / "ck.json", expected_layout=feature_layout(2))
    assert load_checkpoint(tmp_path / "ck.json", expected_layout=feature_layout(0)).n_chi == 0

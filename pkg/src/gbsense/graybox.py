"""Graybox click-probability model.

Pipeline (batched over rows)::

    (tau, phi, f_B, chi) -> normalize -> dense net -> (t1, t2, t3, mu1, mu2)
        -> Q = Rz(t1) Ry(t2) Rz(t3),  W = Q diag(mu1, mu2) Q^dag
        -> V = W            (form "hermitian")
           V = Z W          (form "observable", default)
    theta = 2 pi f_B tau + phi -> rho_tilde = U_Ramsey |0><0| U_Ramsey^dag
    <Z> = Re tr(V rho_tilde Z) -> P_cl = alpha (1 + visibility <Z>)

The calibration (pi0, pi1) only enters the last line.

The "observable" form matches the structure of the exact noise operator,
``Z`` times a Hermitian operator with eigenvalues in [-1, 1]. It gives
``<Z> = w0 + w . r`` for the ideal Bloch vector ``r``. The "hermitian" form
can only express ``w0 * r_z + w_z``; the rest of its trace is imaginary and
is dropped.

Gradients through the complex layers use ``G_X = dL/dRe X + i dL/dIm X``:
for ``C = A B``, ``G_A = G_C B^H`` and ``G_B = A^H G_C``.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import (
    AdamState,
    LayerSpec,
    NetworkParams,
    DEFAULT_WIDTHS,
    adam_step,
    backward,
    init_network,
    log_mse_loss,
    network_forward,
)
from .errors import (
    CheckpointVersionError,
    CorruptCheckpointError,
    InvalidArgumentError,
    LayoutMismatchError,
    NumericError,
    TrainingDivergedError,
)
from .quantum import (
    SY,
    SZ,
    NoiseOperator,
    PulseSettings,
    ReadoutCalibration,
    dagger,
    ry_batch,
    rz_batch,
    u_ramsey_batch,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gbsense-graybox"
CHECKPOINT_VERSION = 1
VZ_FORMS = ("observable", "hermitian")


@dataclass(frozen=True)
class NoiseOperatorParams:
    theta1: float
    theta2: float
    theta3: float
    mu1: float
    mu2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.theta1, self.theta2, self.theta3)):
            raise InvalidArgumentError("thetas must be finite")
        if not (abs(self.mu1) <= 1 and abs(self.mu2) <= 1):
            raise InvalidArgumentError("mu values must lie in [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.theta3, self.mu1, self.mu2])


def _euler_q(t1, t2, t3):
    a, b, c = rz_batch(t1), ry_batch(t2), rz_batch(t3)
    return a, b, c, a @ b @ c


def _diag(mu1, mu2):
    d = np.zeros(np.shape(mu1) + (2, 2), dtype=complex)
    d[..., 0, 0] = mu1
    d[..., 1, 1] = mu2
    return d


def reconstruct_batch(head: np.ndarray, form: str = "observable") -> np.ndarray:
    """Noise operators for rows of ``head`` = ``(t1, t2, t3, mu1, mu2)``."""
    if form not in VZ_FORMS:
        raise InvalidArgumentError(f"unknown noise-operator form {form!r}")
    head = np.atleast_2d(head)
    *_, q = _euler_q(head[:, 0], head[:, 1], head[:, 2])
    w = q @ _diag(head[:, 3], head[:, 4]) @ dagger(q)
    return SZ @ w if form == "observable" else w


def reconstruct_noise_operator(p: NoiseOperatorParams, form: str = "hermitian") -> NoiseOperator:
    """``Q diag(mu1, mu2) Q^dag`` (``form="hermitian"``) or ``Z`` times it (``"observable"``)."""
    return NoiseOperator(reconstruct_batch(p.as_array(), form)[0])


@dataclass
class GrayboxParams:
    net: NetworkParams
    offset: np.ndarray
    scale: np.ndarray
    feature_layout: tuple[str, ...]
    vz_form: str = "observable"

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if len(self.feature_layout) != self.net.input_width:
            raise InvalidArgumentError("feature layout length must equal the network input width")
        if self.offset.shape != (len(self.feature_layout),) or self.scale.shape != self.offset.shape:
            raise InvalidArgumentError("normalization shape does not match the feature layout")
        if np.any(self.scale <= 0):
            raise InvalidArgumentError("normalization scales must be positive")
        if self.vz_form not in VZ_FORMS:
            raise InvalidArgumentError(f"unknown noise-operator form {self.vz_form!r}")

    @property
    def n_chi(self) -> int:
        return len(self.feature_layout) - 3

    def replace_net(self, net: NetworkParams) -> "GrayboxParams":
        return GrayboxParams(net, self.offset, self.scale, self.feature_layout, self.vz_form)


def feature_layout(n_chi: int = 0) -> tuple[str, ...]:
    return ("tau_us", "phi_rad", "fB_MHz") + tuple(f"chi{i}" for i in range(n_chi))


def settings_features(settings: Sequence[PulseSettings]) -> np.ndarray:
    return np.array([[s.tau, s.phi, s.f_B, *s.chi] for s in settings], dtype=float)


def fit_normalization(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine map of each column's [min, max] onto [-1, 1]."""
    lo, hi = features.min(axis=0), features.max(axis=0)
    offset = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return offset, np.where(half > 0, half, 1.0)


def make_graybox(
    records_or_features,
    hidden: Sequence[int | LayerSpec] = DEFAULT_WIDTHS,
    seed: int = 0,
    vz_form: str = "observable",
) -> GrayboxParams:
    """Fresh graybox with normalization fitted to the given records (or feature matrix)."""
    if isinstance(records_or_features, np.ndarray):
        feats = records_or_features
    else:
        feats = settings_features([r.settings for r in records_or_features])
    n_chi = feats.shape[1] - 3
    net = init_network(feats.shape[1], tuple(hidden), seed=seed)
    offset, scale = fit_normalization(feats)
    return GrayboxParams(net, offset, scale, feature_layout(n_chi), vz_form)


@dataclass
class GBTape:
    """Everything the backward pass needs from a batched graybox forward pass."""

    net_tape: object
    head: np.ndarray
    rho_z: np.ndarray
    z: np.ndarray
    dp_dz: np.ndarray
    imag_residue: np.ndarray


def _forward_features(gb: GrayboxParams, feats: np.ndarray, pi0: np.ndarray, pi1: np.ndarray):
    feats = np.atleast_2d(feats)
    x = (feats - gb.offset) / gb.scale
    head, net_tape = network_forward(gb.net, x)
    v = reconstruct_batch(head, gb.vz_form)
    theta = 2 * np.pi * feats[:, 2] * feats[:, 0] + feats[:, 1]
    u = u_ramsey_batch(theta)
    rho = u[:, :, :1] @ dagger(u[:, :, :1])
    rho_z = rho @ SZ
    tr = np.trace(v @ rho_z, axis1=1, axis2=2)
    z = np.clip(tr.real, -1.0, 1.0)
    s = pi0 + pi1
    if np.any(s <= 0):
        raise InvalidArgumentError("pi0 + pi1 must be positive")
    p = 0.5 * s + 0.5 * (pi0 - pi1) * z
    tape = GBTape(net_tape, head, rho_z, z, 0.5 * (pi0 - pi1), tr.imag)
    return p, tape


def gb_forward_batch(gb: GrayboxParams, settings: Sequence[PulseSettings], calibs: Sequence[ReadoutCalibration]):
    pi0 = np.array([c.pi0 for c in calibs])
    pi1 = np.array([c.pi1 for c in calibs])
    return _forward_features(gb, settings_features(settings), pi0, pi1)


def gb_forward(gb: GrayboxParams, settings: PulseSettings, calib: ReadoutCalibration) -> tuple[float, GBTape]:
    if len(settings.chi) != gb.n_chi:
        raise InvalidArgumentError(f"settings carry {len(settings.chi)} chi entries, model expects {gb.n_chi}")
    p, tape = gb_forward_batch(gb, [settings], [calib])
    return float(p[0]), tape


def z_head_gradient(tape: GBTape, dl_dz: np.ndarray, form: str) -> np.ndarray:
    """Back-propagate ``dL/d<Z>`` (per row) through the complex layers to the 5 head outputs."""
    head = tape.head
    t1, t2, t3, mu1, mu2 = (head[:, k] for k in range(5))
    a, b, c, q = _euler_q(t1, t2, t3)
    d = _diag(mu1, mu2)
    g_v = dl_dz[:, None, None] * dagger(tape.rho_z)
    g_w = SZ @ g_v if form == "observable" else g_v
    sym = g_w + dagger(g_w)
    g_q = sym @ q @ d
    g_d = dagger(q) @ g_w @ q
    g_a = g_q @ dagger(b @ c)
    g_b = dagger(a) @ g_q @ dagger(c)
    g_c = dagger(a @ b) @ g_q

    def angle_grad(g, x, gen):
        # d/dt exp(-i t G/2) = (-i/2) G exp(-i t G/2)
        return np.real(np.sum(np.conj(g) * (-0.5j) * (gen @ x), axis=(1, 2)))

    out = np.empty_like(head)
    out[:, 0] = angle_grad(g_a, a, SZ)
    out[:, 1] = angle_grad(g_b, b, SY)
    out[:, 2] = angle_grad(g_c, c, SZ)
    out[:, 3] = g_d[:, 0, 0].real
    out[:, 4] = g_d[:, 1, 1].real
    return out


def _record_arrays(records):
    feats = settings_features([r.settings for r in records])
    pi0 = np.array([r.calib.pi0 for r in records])
    pi1 = np.array([r.calib.pi1 for r in records])
    target = np.array([r.p_cl for r in records])
    return feats, pi0, pi1, target


def _loss_grad_arrays(gb, feats, pi0, pi1, target, mode="batch"):
    p, tape = _forward_features(gb, feats, pi0, pi1)
    loss, dl_dp = log_mse_loss(p, target, mode=mode)
    if not math.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(p))
        idx = int(bad[0]) if len(bad) else -1
        raise NumericError(f"non-finite loss (first offending record index {idx})")
    # clipped <Z> passes no gradient
    dl_dz = dl_dp * tape.dp_dz * (np.abs(tape.z) < 1.0)
    head_grad = z_head_gradient(tape, dl_dz, gb.vz_form)
    return loss, backward(tape.net_tape, head_grad), p


def gb_loss_gradient(gb: GrayboxParams, records, mode: str = "batch") -> tuple[float, list[np.ndarray]]:
    """Log-MSE loss over ``records`` and its gradient w.r.t. ``gb.net.arrays()``."""
    if len(records) == 0:
        raise InvalidArgumentError("empty batch")
    loss, grads, _ = _loss_grad_arrays(gb, *_record_arrays(records), mode=mode)
    return loss, grads


def gb_predict_grid(gb: GrayboxParams, tau: float, phi: float, calib: ReadoutCalibration, chi, f_grid) -> np.ndarray:
    f_grid = np.asarray(f_grid, dtype=float)
    if f_grid.ndim != 1 or len(f_grid) == 0:
        raise InvalidArgumentError("f_grid must be a non-empty vector")
    chi = tuple(chi or ())
    if len(chi) != gb.n_chi:
        raise InvalidArgumentError(f"chi has {len(chi)} entries, model expects {gb.n_chi}")
    feats = np.empty((len(f_grid), 3 + len(chi)))
    feats[:, 0] = tau
    feats[:, 1] = phi
    feats[:, 2] = f_grid
    feats[:, 3:] = chi
    n = len(f_grid)
    p, _ = _forward_features(gb, feats, np.full(n, calib.pi0), np.full(n, calib.pi1))
    return p


class GrayboxProvider:
    def __init__(self, gb: GrayboxParams):
        self.gb = gb

    def predict_grid(self, tau, phi, calib, chi, f_grid):
        return gb_predict_grid(self.gb, tau, phi, calib, chi, f_grid)


# --- training -------------------------------------------------------------------


@dataclass
class TrainReport:
    iterations: int
    seed: int
    train_loss: list[float] = field(default_factory=list)
    test_iterations: list[int] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    final_train_mse: float = math.nan
    final_test_mse: float = math.nan
    train_indices: list[int] = field(default_factory=list, repr=False)
    test_indices: list[int] = field(default_factory=list, repr=False)

    def write_csv(self, path) -> None:
        tests = dict(zip(self.test_iterations, self.test_loss))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "train_loss", "test_loss"])
            n = max(len(self.train_loss), max(tests, default=-1) + 1)
            for it in range(n):
                tr = self.train_loss[it] if it < len(self.train_loss) else ""
                w.writerow([it, tr, tests.get(it, "")])


def split_indices(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test partition with ``round(ratio * n)`` training indices."""
    if not 0 < ratio < 1:
        raise InvalidArgumentError("split ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    n_train = min(max(n_train, 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _mse(gb, arrays) -> float:
    feats, pi0, pi1, target = arrays
    p, _ = _forward_features(gb, feats, pi0, pi1)
    return float(np.mean((p - target) ** 2))


def train(
    gb: GrayboxParams,
    dataset,
    split_ratio: float = 0.9,
    iterations: int = 100_000,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    seed: int = 0,
    eval_every: int = 1000,
    batch_size: int | None = None,
    loss_mode: str = "batch",
    progress=None,
) -> tuple[GrayboxParams, TrainReport]:
    """Fit the blackbox weights by Adam on the log-MSE loss.

    Full-batch unless ``batch_size`` is given. The test split is only ever
    evaluated, never differentiated. Raises :class:`TrainingDivergedError`
    carrying the last parameters with a finite loss.
    """
    n = len(dataset)
    if n < 10:
        raise InvalidArgumentError("training needs at least 10 records")
    tr_idx, te_idx = split_indices(n, split_ratio, seed)
    arrays = _record_arrays(dataset)
    train_arr = tuple(a[tr_idx] for a in arrays)
    test_arr = tuple(a[te_idx] for a in arrays)
    report = TrainReport(iterations, seed, train_indices=tr_idx.tolist(), test_indices=te_idx.tolist())
    rng = np.random.default_rng([seed, 1])

    def test_loss(model):
        p, _ = _forward_features(model, *test_arr[:3])
        return log_mse_loss(p, test_arr[3], mode=loss_mode)[0]

    params = [a.copy() for a in gb.net.arrays()]
    state = AdamState.zeros_like(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    current = gb.replace_net(gb.net.with_arrays(params))
    last_good = current
    report.test_iterations.append(0)
    report.test_loss.append(test_loss(current))
    for it in range(iterations):
        if batch_size is None or batch_size >= len(tr_idx):
            batch = train_arr
        else:
            pick = rng.choice(len(tr_idx), size=batch_size, replace=False)
            batch = tuple(a[pick] for a in train_arr)
        try:
            loss, grads, _ = _loss_grad_arrays(current, *batch, mode=loss_mode)
            params, state = adam_step(params, grads, state)
        except NumericError as exc:
            raise TrainingDivergedError(f"training diverged at iteration {it}: {exc}", last_good, report) from exc
        report.train_loss.append(loss)
        last_good = current
        current = gb.replace_net(gb.net.with_arrays(params))
        done = it + 1
        if done % eval_every == 0 or done == iterations:
            try:
                held_out = test_loss(current)
            except NumericError as exc:
                raise TrainingDivergedError(f"evaluation diverged at iteration {done}: {exc}", last_good, report) from exc
            report.test_iterations.append(done)
            report.test_loss.append(held_out)
            if progress is not None:
                progress(done, loss, report.test_loss[-1])
    try:
        report.final_train_mse = _mse(current, train_arr)
        report.final_test_mse = _mse(current, test_arr)
    except NumericError as exc:
        raise TrainingDivergedError(f"final evaluation failed: {exc}", last_good, report) from exc
    if not (math.isfinite(report.final_train_mse) and math.isfinite(report.final_test_mse)):
        raise TrainingDivergedError("final losses are not finite", last_good, report)
    return current, report


# --- checkpoints ----------------------------------------------------------------


def checkpoint_dict(gb: GrayboxParams) -> dict:
    net = gb.net
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "feature_layout": list(gb.feature_layout),
        "vz_form": gb.vz_form,
        "normalization": {"offset": gb.offset.tolist(), "scale": gb.scale.tolist()},
        "hidden": [{"width": h.width, "activation": h.activation} for h in net.hidden],
        "head": {"linear": net.n_linear_head, "tanh": net.n_tanh_head},
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def save_checkpoint(gb: GrayboxParams, path) -> None:
    """Write a versioned JSON checkpoint atomically."""
    from .jsonfmt import dumps

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps(checkpoint_dict(gb)))
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def graybox_from_dict(d: dict, expected_layout: Sequence[str] | None = None) -> GrayboxParams:
    if not isinstance(d, dict) or d.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError("not a graybox checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {d.get('version')} != supported {CHECKPOINT_VERSION}")
    try:
        layout = tuple(d["feature_layout"])
        if expected_layout is not None and tuple(expected_layout) != layout:
            raise LayoutMismatchError(f"checkpoint layout {layout} != expected {tuple(expected_layout)}")
        hidden = tuple(LayerSpec(int(h["width"]), h["activation"]) for h in d["hidden"])
        weights = [np.array(w, dtype=float) for w in d["weights"]]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        net = NetworkParams(weights, biases, hidden, int(d["head"]["linear"]), int(d["head"]["tanh"]))
        widths = [len(layout)] + [h.width for h in hidden] + [net.head_width]
        if len(weights) != len(widths) - 1 or len(biases) != len(weights):
            raise CorruptCheckpointError("layer count does not match hidden specification")
        for w, b, fi, fo in zip(weights, biases, widths[:-1], widths[1:]):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise CorruptCheckpointError("weight shapes do not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise CorruptCheckpointError("non-finite weights")
        norm = d["normalization"]
        return GrayboxParams(net, norm["offset"], norm["scale"], layout, d.get("vz_form", "observable"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgumentError):
            raise CorruptCheckpointError(str(exc)) from exc
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path, expected_layout: Sequence[str] | None = None) -> GrayboxParams:
    import json

    try:
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    return graybox_from_dict(d, expected_layout)

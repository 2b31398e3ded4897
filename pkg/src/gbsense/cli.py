"""Command-line harness: generate | train | estimate | benchmark | report.

Every command writes ``run_config.json`` with its fully resolved settings and
seed into ``--out``. Values come from built-in defaults, then an optional JSON
``--config`` file, then explicit flags. Exit codes: 0 success, 2 invalid
input, 3 I/O or checkpoint failure, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__, kernels
from .autodiff import DEFAULT_WIDTHS
from .bayes import MeasurementBatch, distribution_summary, run_estimation
from .errors import (
    CheckpointError,
    InvalidArgumentError,
    LayoutMismatchError,
    NumericError,
    TrainingDivergedError,
)
from .graybox import GrayboxProvider, feature_layout, load_checkpoint, make_graybox, save_checkpoint, train
from .harness import (
    benchmark_providers,
    build_report,
    default_tolerance,
    read_truth,
    summarize_outcomes,
    trace_name,
    write_json,
    write_per_set_csv,
)
from .simulator import DatasetPlan, NoiseConfig, generate_dataset, group_by_set, read_dataset, write_dataset
from .whitebox import WhiteboxConfig, WhiteboxProvider

log = logging.getLogger("gbsense")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "generate": {
        "n_sets": 20, "taus_per_set": 32, "fmin_mhz": 0.5, "fmax_mhz": 3.0, "tau_min_us": 0.05, "tau_max_us": 5.0,
        "repetitions": 100_000, "pi0": 0.03, "pi1": 0.02, "calib_spread": 0.0, "n_shots": 2000,
        "prep_epsilon": 0.0, "t2star_us": None, "sigma_f": 0.0, "ou_amplitude": 0.0, "ou_tau_c": 1.0,
        "pulse_width_us": 0.0, "distortion_us": 0.0, "amp_error": 0.0, "calib_jitter": 0.0,
    },
    "train": {
        "dataset": None, "iterations": 100_000, "hidden": list(DEFAULT_WIDTHS), "lr": 1e-3, "split": 0.9,
        "loss_mode": "batch", "eval_every": 1000, "batch_size": None, "vz_form": "observable",
    },
    "estimate": {
        "dataset": None, "set_id": None, "provider": None, "checkpoint": None, "t2star_us": None,
        "fmin_mhz": None, "fmax_mhz": None, "grid_m": 5000, "orderings": 100, "mode": "auto",
    },
    "benchmark": {
        "dataset": None, "truth": None, "checkpoint": None, "t2star_us": None, "providers": ["gb", "wb"],
        "fmin_mhz": None, "fmax_mhz": None, "grid_m": 5000, "orderings": 100, "mode": "auto", "tolerance_mhz": None,
    },
    "report": {"input": None},
}


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _csv_names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON file of settings; flags take precedence")
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (default 0)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    def estimator_flags(p):
        p.add_argument("--dataset", type=Path)
        p.add_argument("--checkpoint", type=Path)
        p.add_argument("--t2star-us", dest="t2star_us", type=float)
        p.add_argument("--fmin-mhz", dest="fmin_mhz", type=float)
        p.add_argument("--fmax-mhz", dest="fmax_mhz", type=float)
        p.add_argument("--grid-m", dest="grid_m", type=int)
        p.add_argument("--orderings", type=int)
        p.add_argument("--mode", choices=("auto", "gaussian", "binomial"))

    g = common(sub.add_parser("generate", help="simulate a randomized Ramsey dataset"))
    g.add_argument("--n-sets", dest="n_sets", type=int)
    g.add_argument("--taus-per-set", dest="taus_per_set", type=int)
    g.add_argument("--fmin-mhz", dest="fmin_mhz", type=float)
    g.add_argument("--fmax-mhz", dest="fmax_mhz", type=float)
    g.add_argument("--repetitions", type=int, help="R per batch; 0 stores exact probabilities")
    g.add_argument("--t2star-us", dest="t2star_us", type=float, help="quasi-static dephasing time")
    g.add_argument("--prep-epsilon", dest="prep_epsilon", type=float)
    g.add_argument("--amp-error", dest="amp_error", type=float)
    g.add_argument("--pulse-width-us", dest="pulse_width_us", type=float)
    g.add_argument("--distortion-us", dest="distortion_us", type=float)
    g.add_argument("--n-shots", dest="n_shots", type=int)

    t = common(sub.add_parser("train", help="fit a graybox model to a dataset"))
    t.add_argument("--dataset", type=Path)
    t.add_argument("--iterations", type=int)
    t.add_argument("--hidden", type=_csv_ints, help="hidden widths, e.g. 64,32,16")
    t.add_argument("--lr", type=float)
    t.add_argument("--split", type=float)
    t.add_argument("--loss-mode", dest="loss_mode", choices=("batch", "per_example"))
    t.add_argument("--eval-every", dest="eval_every", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--vz-form", dest="vz_form", choices=("observable", "hermitian"))

    e = common(sub.add_parser("estimate", help="Bayesian estimation on one frequency set"))
    estimator_flags(e)
    e.add_argument("--set-id", dest="set_id", type=int)
    e.add_argument("--provider", choices=("gb", "wb"))

    b = common(sub.add_parser("benchmark", help="compare providers over every frequency set"))
    estimator_flags(b)
    b.add_argument("--truth", type=Path)
    b.add_argument("--providers", type=_csv_names, help="comma list from {gb, wb}")
    b.add_argument("--tolerance-mhz", dest="tolerance_mhz", type=float)

    r = common(sub.add_parser("report", help="consolidate benchmark outputs into plot data"))
    r.add_argument("--input", type=Path, help="benchmark output directory")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config is not None:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise InvalidArgumentError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg) - {"seed"})
        if unknown:
            raise InvalidArgumentError(f"{args.config}: unknown keys {unknown}")
        cfg.update(loaded)
    cfg.setdefault("seed", 0)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise InvalidArgumentError("seed must be an unsigned 64-bit integer")
    for key, value in cfg.items():
        if isinstance(value, Path):
            cfg[key] = str(value)
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise InvalidArgumentError("missing required settings: " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _noise_config(cfg: dict) -> NoiseConfig:
    sigma_f = cfg["sigma_f"]
    if cfg["t2star_us"] is not None:
        sigma_f = NoiseConfig.for_t2_star(cfg["t2star_us"]).sigma_f
    return NoiseConfig(
        prep_epsilon=cfg["prep_epsilon"],
        sigma_f=sigma_f,
        ou_amplitude=cfg["ou_amplitude"],
        ou_tau_c=cfg["ou_tau_c"],
        pulse_width=cfg["pulse_width_us"],
        distortion_tau=cfg["distortion_us"],
        amp_error=cfg["amp_error"],
        calib_jitter=cfg["calib_jitter"],
    )


def cmd_generate(cfg: dict, out: Path) -> int:
    plan = DatasetPlan(
        n_frequency_sets=int(cfg["n_sets"]),
        taus_per_set=int(cfg["taus_per_set"]),
        f_range=(cfg["fmin_mhz"], cfg["fmax_mhz"]),
        tau_range=(cfg["tau_min_us"], cfg["tau_max_us"]),
        R=int(cfg["repetitions"]) or None,
        pi0=cfg["pi0"],
        pi1=cfg["pi1"],
        calib_spread=cfg["calib_spread"],
        n_shots=int(cfg["n_shots"]),
    )
    records = generate_dataset(plan, _noise_config(cfg), int(cfg["seed"]))
    write_dataset(records, out / "dataset.jsonl")
    truth = {str(k): v[0].truth_fB for k, v in group_by_set(records).items()}
    write_json({"fB_MHz": truth}, out / "truth.json")
    print(f"wrote {len(records)} records in {len(truth)} sets to {out / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_train(cfg: dict, out: Path) -> int:
    _require(cfg, "dataset")
    records = read_dataset(cfg["dataset"])
    if not records:
        raise InvalidArgumentError(f"{cfg['dataset']}: empty dataset")
    seed = int(cfg["seed"])
    gb = make_graybox(records, hidden=tuple(cfg["hidden"]), seed=seed, vz_form=cfg["vz_form"])

    def progress(it, loss, test):
        log.info("iteration %d train %.4f test %.4f", it, loss, test)

    try:
        gb, report = train(
            gb, records, split_ratio=cfg["split"], iterations=int(cfg["iterations"]), lr=cfg["lr"], seed=seed,
            eval_every=int(cfg["eval_every"]), batch_size=cfg["batch_size"], loss_mode=cfg["loss_mode"],
            progress=progress,
        )
    except TrainingDivergedError as exc:
        if exc.last_good is not None:
            save_checkpoint(exc.last_good, out / "checkpoint.json")
        if exc.report is not None:
            exc.report.write_csv(out / "train_loss.csv")
        raise
    save_checkpoint(gb, out / "checkpoint.json")
    report.write_csv(out / "train_loss.csv")
    write_json(
        {
            "iterations": report.iterations,
            "n_train": len(report.train_indices),
            "n_test": len(report.test_indices),
            "final_train_mse": report.final_train_mse,
            "final_test_mse": report.final_test_mse,
            "test_indices": report.test_indices,
        },
        out / "train_report.json",
    )
    print(f"final train MSE {report.final_train_mse:.6e}")
    print(f"final test MSE {report.final_test_mse:.6e}")
    return EXIT_OK


def _make_provider(name: str, cfg: dict, layout):
    if name == "gb":
        if cfg.get("checkpoint") is None:
            raise InvalidArgumentError("the gb provider needs --checkpoint")
        return GrayboxProvider(load_checkpoint(cfg["checkpoint"], expected_layout=layout))
    if name == "wb":
        if cfg.get("t2star_us") is None:
            raise InvalidArgumentError("the wb provider needs --t2star-us")
        return WhiteboxProvider(WhiteboxConfig(float(cfg["t2star_us"])))
    raise InvalidArgumentError(f"unknown provider {name!r}")


def _grid_args(cfg: dict) -> tuple[float, float, int]:
    _require(cfg, "fmin_mhz", "fmax_mhz")
    f_min, f_max, m = float(cfg["fmin_mhz"]), float(cfg["fmax_mhz"]), int(cfg["grid_m"])
    if not f_min < f_max:
        raise InvalidArgumentError("need --fmin-mhz < --fmax-mhz")
    return f_min, f_max, m


def _layout_of(records) -> tuple[str, ...]:
    return feature_layout(len(records[0].settings.chi))


def cmd_estimate(cfg: dict, out: Path) -> int:
    _require(cfg, "dataset", "provider")
    f_min, f_max, m = _grid_args(cfg)
    records = read_dataset(cfg["dataset"])
    groups = group_by_set(records)
    if not groups:
        raise InvalidArgumentError(f"{cfg['dataset']}: empty dataset")
    set_id = cfg["set_id"]
    if set_id is None:
        if len(groups) > 1:
            raise InvalidArgumentError(f"dataset holds {len(groups)} sets; choose one with --set-id")
        set_id = next(iter(groups))
    if set_id not in groups:
        raise InvalidArgumentError(f"unknown set_id {set_id}; available {sorted(groups)}")
    recs = groups[set_id]
    provider = _make_provider(cfg["provider"], cfg, _layout_of(recs))
    f_true = recs[0].truth_fB
    res = run_estimation(
        [MeasurementBatch.from_record(r) for r in recs], provider, f_min, f_max, m, int(cfg["orderings"]),
        seed=[int(cfg["seed"]), set_id], f_true=None if math.isnan(f_true) else f_true, mode=cfg["mode"],
    )
    res.mean_trace.write_csv(out / "trace.csv")
    write_json(
        {
            "provider": cfg["provider"],
            "set_id": set_id,
            "f_true_MHz": f_true,
            "iterations": len(res.mean_trace),
            "grid_spacing_MHz": (f_max - f_min) / m,
            "mean_final_fhat_MHz": res.mean_final_fhat,
            "mean_final_E_MHz2": res.mean_final_sq_error,
            "mean_final_V_MHz2": res.mean_final_variance,
            "final_fhat_MHz": distribution_summary(res.final_fhat),
            "final_E_MHz2": distribution_summary(res.final_sq_error),
            "final_V_MHz2": distribution_summary(res.final_variance),
            "skip_rate": float(res.mean_trace.skipped.mean()),
            "max_normalization_error": res.normalization_error,
        },
        out / "summary.json",
    )
    print(f"set {set_id} [{cfg['provider']}]: f_hat {res.mean_final_fhat:.6f} MHz, E {res.mean_final_sq_error:.3e} MHz^2")
    return EXIT_OK


def cmd_benchmark(cfg: dict, out: Path) -> int:
    _require(cfg, "dataset")
    f_min, f_max, m = _grid_args(cfg)
    truth_path = cfg["truth"] or str(Path(cfg["dataset"]).with_name("truth.json"))
    truth = read_truth(truth_path)
    records = read_dataset(cfg["dataset"])
    groups = group_by_set(records)
    if not groups:
        raise InvalidArgumentError(f"{cfg['dataset']}: empty dataset")
    layout = _layout_of(records)
    providers = {name: _make_provider(name, cfg, layout) for name in cfg["providers"]}
    tol = cfg["tolerance_mhz"] if cfg["tolerance_mhz"] is not None else default_tolerance(f_min, f_max, m)
    outcomes = benchmark_providers(
        groups, truth, providers, f_min, f_max, m, int(cfg["orderings"]), int(cfg["seed"]), cfg["mode"], tol
    )
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for o in outcomes:
        o.result.mean_trace.write_csv(traces / trace_name(o.provider, o.set_id))
    write_per_set_csv(outcomes, out / "per_set.csv")
    summary = summarize_outcomes(outcomes, tol)
    write_json(summary, out / "summary.json")
    for name, s in summary["providers"].items():
        print(
            f"{name}: median final E {s['final_E_MHz2']['median']:.3e} MHz^2, "
            f"converged {s['n_converged']}/{s['n_sets']}"
        )
    return EXIT_OK


def cmd_report(cfg: dict, out: Path) -> int:
    _require(cfg, "input")
    report = build_report(cfg["input"], out)
    print(f"report for providers {', '.join(report)} written to {out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(
            {"command": args.command, "seed": int(cfg["seed"]), "config": cfg, "version": __version__,
             "kernel_backend": kernels.BACKEND},
            out / "run_config.json",
        )
        return COMMANDS[args.command](cfg, out)
    except LayoutMismatchError as exc:
        print(f"error: provider mismatch: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except json.JSONDecodeError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

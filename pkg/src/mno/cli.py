"""Command-line entry point: ``mno generate|train|evaluate|diagnose|ablate``.

Exit codes: 0 success or passing verdict, 1 usage/config error, 2 numeric
failure, 3 failing diagnostic.
"""
from __future__ import annotations

import os

# BLAS pools are sized when numpy loads, so cap them before importing it
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, os.environ.get("MNO_THREADS", "1"))

import argparse  # noqa: E402
import dataclasses  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__, config, io  # noqa: E402
from .bundle import ResultBundle, write_csv  # noqa: E402
from .config import ConfigError  # noqa: E402
from .diagnostics import (  # noqa: E402
    MirrorSettings,
    RolloutDivergenceError,
    concat_datasets,
    mirror_experiment,
    run_ablation,
    run_head_separation,
    run_resolution_transfer,
    run_residual_centering,
    run_uncertainty_decomposition,
    train_on,
)
from .metrics import cov_frobenius_rel, ensemble_w2, exceedance_prob, mean_rmse, variance_rmse  # noqa: E402
from .operator import MomentPrediction, load_checkpoint, predict, save_checkpoint  # noqa: E402
from .stochsim import (  # noqa: E402
    BlowUpError,
    EnsembleDataset,
    NormStats,
    apply_normalization,
    normalize_dataset,
    simulate_fbm_marginals,
    simulate_logvol_ensemble,
    simulate_spde_ensemble,
    simulate_spde_snapshots,
    synth_head_separation,
)
from .training import DivergenceError, NonFiniteLossError, fit  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DIAGNOSTIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def make_dataset(cfg: dict, seed: int, n_ic: int | None = None, n_x: int | None = None,
                 n_ens: int | None = None) -> EnsembleDataset:
    data = cfg["data"]
    n_ic = int(n_ic or data["n_ic"])
    n_ens = int(n_ens or data["n_ens"])
    kind = data["kind"]
    if kind in ("burgers", "phi4", "ou"):
        return simulate_spde_ensemble(config.spde_spec(cfg, n_x), n_ic, n_ens, seed)
    if kind == "logvol":
        return simulate_logvol_ensemble(config.fbm_spec(cfg), n_ic, n_ens, seed)
    if kind == "fbm_marginal":
        return simulate_fbm_marginals(config.fbm_spec(cfg), n_ic, n_ens, seed, n_x=int(n_x or data["n_x"]))
    return synth_head_separation(data["case"], n_ic, n_ens, seed, n_x=int(n_x or data["n_x"]))


def _guard(path: Path, force: bool):
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _provenance(cfg: dict, **extra) -> dict:
    return {"config_hash": config.config_hash(cfg), "code_version": __version__, **extra}


def to_physical(pred: MomentPrediction, stats: NormStats) -> MomentPrediction:
    return MomentPrediction(mean=stats.denormalize(pred.mean), factor=pred.factor * stats.std[:, None],
                            gate=pred.gate, drift=None if pred.drift is None else pred.drift * stats.std[:, None])


def _default(path, cfg_key, cfg, out: Path, name: str) -> Path:
    return Path(path or cfg["paths"].get(cfg_key) or out / name)


# ----------------------------------------------------------------- commands

def cmd_generate(cfg, args) -> int:
    out = Path(cfg["out"])
    train_path, test_path = out / "train.mnods", out / "test.mnods"
    for p in (train_path, test_path):
        _guard(p, args.force)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"]
    h_train = io.write_dataset(train_path, make_dataset(cfg, seed))
    h_test = io.write_dataset(test_path, make_dataset(cfg, seed + int(cfg["data"]["test_seed_offset"]),
                                                      n_ic=cfg["data"]["test_n_ic"]))
    config.write_resolved(cfg, out)
    print(f"train {train_path} sha256 {h_train}")
    print(f"test {test_path} sha256 {h_test}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    out = Path(cfg["out"])
    ds_path = _default(args.dataset, "dataset", cfg, out, "train.mnods")
    ck_path = out / "model.mnock"
    if not args.resume:
        _guard(ck_path, args.force)
    raw = io.read_dataset(ds_path)
    ds_hash = io.file_hash(ds_path)
    out.mkdir(parents=True, exist_ok=True)
    tc = config.train_config(cfg)
    if args.resume:
        ck = load_checkpoint(args.resume)
        prov = ck.provenance
        if prov.get("dataset_hash") != ds_hash:
            raise ConfigError(f"checkpoint {args.resume} was trained on a different dataset")
        stats = NormStats.from_dict(prov["norm"])
        model, optimizer, start = ck.model, ck.optimizer, int(prov["epochs_done"])
        ds = apply_normalization(raw, stats)
    else:
        ds, stats = normalize_dataset(raw)
        model = config.model_settings(cfg).build(raw.channels, float(np.max(raw.t)), cfg["seed"])
        optimizer, start = None, 0
    if model.fno.modes > raw.n_x // 2 + 1:
        raise ConfigError(f"modes={model.fno.modes} do not fit the N={raw.n_x} training grid")
    config.write_resolved(cfg, out)
    prov = _provenance(cfg, dataset_hash=ds_hash, norm=stats.to_dict(), n_x=raw.n_x,
                       data_kind=raw.meta.get("kind"))
    try:
        res = fit(model, ds, dataclasses.replace(tc, seed=cfg["seed"]), config.loss_weights(cfg),
                  log_path=out / "train_log.jsonl", start_epoch=start, optimizer=optimizer,
                  failure_checkpoint=out / "last_good.mnock")
    except DivergenceError as exc:
        print(f"error: {exc}; last good checkpoint at {exc.checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    h = save_checkpoint(ck_path, res.model, res.optimizer, dict(prov, epochs_done=max(start, tc.epochs)))
    print(f"checkpoint {ck_path} sha256 {h}")
    return EXIT_OK


def _evaluate(pred_n, raw: EnsembleDataset, stats: NormStats, metrics, cfg, seed, bundle: ResultBundle, **tags):
    ev = cfg["evaluate"]
    pred = to_physical(pred_n, stats)
    n = raw.n_ic
    for name in metrics:
        if name == "mean_rmse":
            bundle.add_metric(name, mean_rmse(pred.mean, raw.ensemble_mean()), n, seed, **tags)
        elif name == "variance_rmse":
            bundle.add_metric(name, variance_rmse(pred.variance(), raw.ensemble_var()), n, seed, **tags)
        elif name == "empirical_w2":
            bundle.add_metric(name, ensemble_w2(pred, raw.uT, ev["n_samples"], seed), n, seed, **tags)
        elif name == "zero_variance_w2":
            zero = dataclasses.replace(pred, factor=np.zeros_like(pred.factor))
            bundle.add_metric(name, ensemble_w2(zero, raw.uT, ev["n_samples"], seed), n, seed, **tags)
        elif name == "cov_frobenius_rel":
            vals = [cov_frobenius_rel(pred.factor[i], raw.uT[i], seed=seed) for i in range(n)]
            bundle.add_metric(name, float(np.mean(vals)), n, seed, **tags)
        elif name == "exceedance":
            res = [exceedance_prob(pred[i], ev["threshold"]) for i in range(n)]
            bundle.add_metric("exceedance_union_bound", float(np.mean([r.union_bound for r in res])), n, seed,
                              threshold=ev["threshold"], **tags)
            bundle.add_metric("exceedance_max_point", float(np.mean([r.max_point for r in res])), n, seed,
                              threshold=ev["threshold"], **tags)
        elif name == "variance_slope":
            if raw.meta.get("kind") != "logvol":
                raise ConfigError("variance_slope needs a logvol dataset (field coordinate = time)")
            x = np.log(np.asarray(raw.meta["grid"]))
            for label, v in (("pred", pred.variance()), ("data", raw.ensemble_var())):
                slope = float(np.polyfit(x, np.log(v.mean(axis=(0, 1))), 1)[0])
                bundle.add_metric(f"variance_slope_{label}", slope, n, seed, analytic=2 * raw.meta["spec"]["hurst"],
                                  **tags)


def cmd_evaluate(cfg, args) -> int:
    out = Path(cfg["out"])
    ck_path = _default(args.checkpoint, "checkpoint", cfg, out, "model.mnock")
    ds_path = _default(args.dataset, "test_dataset", cfg, out, "test.mnods")
    metrics = args.metrics.split(",") if args.metrics else cfg["evaluate"]["metrics"]
    bad = set(metrics) - set(config.METRICS)
    if bad:
        raise ConfigError(f"unknown metric(s) {sorted(bad)}; valid names are {list(config.METRICS)}")
    role = args.role or cfg["evaluate"]["role"]
    stem = f"eval_{role}"
    _guard(out / f"{stem}.json", args.force)
    ck = load_checkpoint(ck_path)
    raw = io.read_dataset(ds_path)
    if raw.norm is not None:
        raise ConfigError(f"{ds_path} holds normalized fields; evaluate expects raw data")
    model = ck.model
    if model.fno.modes > raw.n_x // 2 + 1:
        raise ConfigError(f"modes={model.fno.modes} do not fit the N={raw.n_x} grid of {ds_path}")
    stats = NormStats.from_dict(ck.provenance["norm"])
    zero_shot = raw.n_x != ck.provenance.get("n_x")
    ds = apply_normalization(raw, stats)
    t0 = time.perf_counter()
    pred = predict(model, ds.u0, ds.t)
    infer_ms = 1000 * (time.perf_counter() - t0) / raw.n_ic
    bundle = ResultBundle(provenance=_provenance(
        cfg, dataset_hash=io.file_hash(ds_path), checkpoint_hash=io.file_hash(ck_path), role=role,
        zero_shot=bool(zero_shot), n_x=raw.n_x, trained_n_x=ck.provenance.get("n_x")))
    _evaluate(pred, raw, stats, [m for m in metrics if m != "inference_ms"], cfg, cfg["seed"], bundle,
              role=role, n_x=raw.n_x)
    if "inference_ms" in metrics:
        bundle.timings["inference_ms_per_condition"] = infer_ms
    bundle.tables["metrics"] = [m.to_dict() | m.aux for m in bundle.metrics]
    for row in bundle.tables["metrics"]:
        row.pop("aux")
    path = bundle.write(out, stem)
    config.write_resolved(cfg, out)
    print(f"bundle {path} content {bundle.content_hash()}")
    return EXIT_OK


def _diagnose(name: str, cfg: dict, args):
    d, seed = cfg["diagnose"], cfg["seed"]
    th = config.thresholds(cfg)
    if name == "head_separation":
        return run_head_separation(config.separation_settings(cfg), seed, th)
    if name == "uncertainty_decomposition":
        return run_uncertainty_decomposition(config.separation_settings(cfg), int(d["n_members"]), seed, th)
    if name == "martingale_mirror":
        spec = config.fbm_spec(cfg)
        if args.H is not None:
            spec = dataclasses.replace(spec, hurst=float(args.H))
        spec = dataclasses.replace(spec, n_t=int(d["n_ar_steps"]))
        settings = MirrorSettings(spec=spec, n_ic=d["mirror_n_ic"], n_ens=d["mirror_n_ens"], n_x=d["mirror_n_x"],
                                  n_paths=d["n_paths"], model=config.model_settings(cfg),
                                  train=config.train_config(cfg))
        return mirror_experiment(settings, seed, th)
    if name == "resolution_transfer":
        res = sorted(int(n) for n in d["resolutions"])
        trained = train_on(make_dataset(cfg, seed, n_x=res[0]), config.model_settings(cfg),
                           config.train_config(cfg), config.loss_weights(cfg), seed=seed)
        test_seed = seed + int(cfg["data"]["test_seed_offset"])
        sets = {n: apply_normalization(make_dataset(cfg, test_seed, n_ic=d["transfer_test_n_ic"], n_x=n),
                                       trained.stats) for n in res}
        return run_resolution_transfer(trained.predictor, sets, th, seed)
    if name == "residual_centering":
        if cfg["data"]["kind"] not in ("burgers", "phi4", "ou"):
            raise ConfigError("residual_centering needs an SPDE data kind (burgers, phi4, ou)")
        times = sorted(float(t) for t in d["times"])
        spec = dataclasses.replace(config.spde_spec(cfg), horizon=times[-1])
        data = cfg["data"]
        train = simulate_spde_snapshots(spec, times, data["n_ic"], data["n_ens"], seed)
        trained = train_on(concat_datasets(train), config.model_settings(cfg), config.train_config(cfg),
                           config.loss_weights(cfg), seed=seed, horizon=times[-1])
        test = simulate_spde_snapshots(spec, times, data["test_n_ic"], data["n_ens"],
                                       seed + int(data["test_seed_offset"]))
        snaps = [apply_normalization(s, trained.stats) for s in test]
        return run_residual_centering(trained.predictor, snaps, th, brownian=not spec.drift, seed=seed)
    raise UsageError(f"unknown diagnostic {name!r}; expected one of {config.DIAGNOSTICS}")


def cmd_diagnose(cfg, args) -> int:
    out = Path(cfg["out"])
    path = out / f"diagnose_{args.name}.json"
    _guard(path, args.force)
    report = _diagnose(args.name, cfg, args)
    bundle = ResultBundle(reports=[report], provenance=_provenance(cfg, diagnostic=args.name))
    bundle.tables["evidence"] = _flatten(report.evidence)
    bundle.write(out, f"diagnose_{args.name}")
    config.write_resolved(cfg, out)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{args.name}: {verdict} {report.checks}")
    return EXIT_OK if report.passed else EXIT_DIAGNOSTIC


def _flatten(ev: dict, prefix: str = "") -> list[dict]:
    rows = []
    for key, val in ev.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            rows.extend(_flatten(val, name + "."))
        elif isinstance(val, (list, tuple)):
            rows.extend({"quantity": f"{name}[{i}]", "value": v} for i, v in enumerate(val)
                        if not isinstance(v, (dict, list)))
        else:
            rows.append({"quantity": name, "value": val})
    return rows


def cmd_ablate(cfg, args) -> int:
    out = Path(cfg["out"])
    axis = args.axis
    stem = f"ablate_{axis}"
    _guard(out / f"{stem}.json", args.force)
    ab = cfg["ablate"]
    grid = args.grid.split(",") if args.grid else ab["grid"]
    if axis == "rank":
        try:
            grid = [int(g) for g in grid]
        except ValueError as exc:
            raise ConfigError(f"rank grid must be integers: {exc}") from exc
    n_seeds = int(args.seeds or ab["seeds"])
    seeds = [cfg["seed"] + k for k in range(n_seeds)]
    train = make_dataset(cfg, cfg["seed"])
    test = make_dataset(cfg, cfg["seed"] + int(cfg["data"]["test_seed_offset"]), n_ic=cfg["data"]["test_n_ic"])
    bundle = run_ablation(axis, grid, seeds, config.model_settings(cfg), config.train_config(cfg), train, test)
    bundle.provenance.update(_provenance(cfg))
    path = bundle.write(out, stem)
    config.write_resolved(cfg, out)
    print(f"bundle {path} content {bundle.content_hash()}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config (default: desk profile)")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p = _Parser(prog="mno", description="Martingale Neural Operator experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="simulate train and test ensembles")
    t = sub.add_parser("train", parents=[common], help="fit a model to a dataset")
    t.add_argument("--dataset")
    t.add_argument("--resume", help="checkpoint to continue from")
    e = sub.add_parser("evaluate", parents=[common], help="compute metrics for a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--metrics", help=f"comma list from {','.join(config.METRICS)}")
    e.add_argument("--role", help="tag for the bundle, e.g. train or test")
    d = sub.add_parser("diagnose", parents=[common], help="run one structural diagnostic")
    d.add_argument("name", help="|".join(config.DIAGNOSTICS))
    d.add_argument("--H", type=float, help="Hurst index for martingale_mirror")
    a = sub.add_parser("ablate", parents=[common], help="train an ablation grid")
    a.add_argument("axis", choices=["rank", "backbone", "loss"])
    a.add_argument("--grid", help="comma-separated cells")
    a.add_argument("--seeds", type=int, help="number of seeds")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "diagnose": cmd_diagnose, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: v for k, v in (("seed", args.seed), ("out", args.out)) if v is not None}
        cfg = config.load(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteLossError, BlowUpError, RolloutDivergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, io.FormatError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration: one JSON document, a ``profile`` picking defaults, per-key overrides.

Unknown keys anywhere are rejected so typos fail loudly instead of silently
falling back to a default.
"""
from __future__ import annotations

import copy
import dataclasses
import json
from pathlib import Path

from . import io
from .operator import FnoConfig
from .diagnostics import ModelSettings, SeparationSettings, Thresholds
from .stochsim import FbmSpec, SpdeSpec
from .training import LossWeights, TrainConfig

SCHEMA_VERSION = 1
DATA_KINDS = ("burgers", "phi4", "ou", "logvol", "fbm_marginal", "synthetic")
METRICS = ("mean_rmse", "variance_rmse", "empirical_w2", "zero_variance_w2", "cov_frobenius_rel",
           "exceedance", "variance_slope", "inference_ms")
DIAGNOSTICS = ("residual_centering", "martingale_mirror", "resolution_transfer", "head_separation",
               "uncertainty_decomposition")


class ConfigError(ValueError):
    pass


def _fields(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


PROFILES = {
    "desk": {
        "data": {"kind": "burgers", "n_ic": 64, "n_ens": 32, "n_x": 32, "test_n_ic": 32, "test_seed_offset": 1,
                 "spec": {}, "case": "C", "hurst": 0.1, "eta": 1.0, "n_t": 32},
        "model": {**_fields(ModelSettings), "width": 16, "modes": 8, "layers": 2, "rank": 8},
        "train": {**_fields(TrainConfig), "epochs": 60, "warmup_epochs": 10, "lr": 3e-3, "batch": 16},
        "loss": _fields(LossWeights),
        "evaluate": {"metrics": ["mean_rmse", "variance_rmse", "empirical_w2", "zero_variance_w2"],
                     "n_samples": 256, "threshold": 1.0, "role": "test"},
        "diagnose": {"times": [0.125, 0.25, 0.5], "resolutions": [32, 64, 128], "transfer_test_n_ic": 8,
                     "n_members": 3, "n_ar_steps": 32, "n_paths": 200, "mirror_n_ic": 256, "mirror_n_ens": 32,
                     "mirror_n_x": 16, "separation_n_ic": 48, "separation_n_ens": 16, "separation_n_x": 32,
                     "separation_epochs": 200, "separation_rank": 4},
        "ablate": {"axis": "rank", "grid": [1, 4, 16], "seeds": 3},
        "thresholds": _fields(Thresholds),
    },
}
# documented paper-scale hyperparameters; same keys as desk
PROFILES["paper"] = copy.deepcopy(PROFILES["desk"])
PROFILES["paper"]["data"].update(n_ic=1000, n_ens=192, n_x=64, test_n_ic=200)
PROFILES["paper"]["model"].update(_fields(ModelSettings))
PROFILES["paper"]["train"].update(_fields(TrainConfig))
PROFILES["paper"]["diagnose"].update(separation_epochs=200)
PROFILES["paper"]["ablate"].update(seeds=5)

TOP_LEVEL = {"profile", "schema_version", "seed", "out", "paths"} | set(PROFILES["desk"])
PATH_KEYS = {"dataset", "test_dataset", "checkpoint"}


def _merge(base: dict, over: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}{key!r}; expected one of {sorted(base)}")
        if isinstance(base[key], dict) and key != "spec":
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key} must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def resolve(doc: dict) -> dict:
    """Fill a user document from its profile; raises ConfigError on unknown keys or bad values."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(doc) - TOP_LEVEL
    if extra:
        raise ConfigError(f"unknown top-level key(s) {sorted(extra)}; expected {sorted(TOP_LEVEL)}")
    profile = doc.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {doc['schema_version']} is not supported (expected {SCHEMA_VERSION})")
    body = {k: v for k, v in doc.items() if k in PROFILES[profile]}
    cfg = _merge(PROFILES[profile], body, "")
    paths = doc.get("paths", {})
    if set(paths) - PATH_KEYS:
        raise ConfigError(f"unknown path key(s) {sorted(set(paths) - PATH_KEYS)}; expected {sorted(PATH_KEYS)}")
    cfg.update(profile=profile, schema_version=SCHEMA_VERSION, seed=int(doc.get("seed", 0)),
               out=str(doc.get("out", "mno_out")), paths=dict(paths))
    validate(cfg)
    return cfg


def validate(cfg: dict):
    data = cfg["data"]
    if data["kind"] not in DATA_KINDS:
        raise ConfigError(f"unknown data kind {data['kind']!r}; expected one of {DATA_KINDS}")
    for key in ("n_ic", "n_ens", "n_x", "test_n_ic"):
        if int(data[key]) < 1:
            raise ConfigError(f"data.{key} must be positive, got {data[key]}")
    bad = set(cfg["evaluate"]["metrics"]) - set(METRICS)
    if bad:
        raise ConfigError(f"unknown metric(s) {sorted(bad)}; valid names are {list(METRICS)}")
    try:
        train_config(cfg).validate()
        loss_weights(cfg).validate()
        m = model_settings(cfg)
        FnoConfig(m.width, m.modes, m.layers).validate()
        if m.rank < 1:
            raise ValueError(f"model.rank must be >= 1, got {m.rank}")
        if data["kind"] in ("burgers", "phi4", "ou"):
            spde_spec(cfg)
        if data["kind"] in ("logvol", "fbm_marginal"):
            fbm_spec(cfg).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path, overrides: dict | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text()) if path is not None else {}
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    doc.update(overrides or {})
    return resolve(doc)


def write_resolved(cfg: dict, out_dir) -> Path:
    path = Path(out_dir) / "config.resolved.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(io.dumps(cfg) + "\n")
    return path


def config_hash(cfg: dict) -> str:
    return io.sha256_bytes(io.dumps(cfg).encode())


# ------------------------------------------------------------- typed views

def model_settings(cfg) -> ModelSettings:
    return ModelSettings(**cfg["model"])


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def loss_weights(cfg) -> LossWeights:
    return LossWeights(**cfg["loss"])


def thresholds(cfg) -> Thresholds:
    return Thresholds(**cfg["thresholds"])


def spde_spec(cfg, n_x: int | None = None) -> SpdeSpec:
    data = cfg["data"]
    make = {"burgers": SpdeSpec.burgers, "phi4": SpdeSpec.phi4, "ou": SpdeSpec.ou}[data["kind"]]
    spec = make(**{"n_x": int(n_x or data["n_x"]), **data["spec"]})
    spec.steps()
    return spec


def fbm_spec(cfg) -> FbmSpec:
    data = cfg["data"]
    return FbmSpec(hurst=float(data["hurst"]), eta=float(data["eta"]), n_t=int(data["n_t"]), **data["spec"])


def separation_settings(cfg) -> SeparationSettings:
    """Tiny fixed architecture; only sizes, rank and epochs come from the config."""
    d, base = cfg["diagnose"], SeparationSettings()
    return dataclasses.replace(
        base, n_ic=d["separation_n_ic"], n_ens=d["separation_n_ens"], n_x=d["separation_n_x"],
        model=dataclasses.replace(base.model, rank=d["separation_rank"]),
        train=dataclasses.replace(base.train, epochs=d["separation_epochs"]),
    )

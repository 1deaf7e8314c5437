"""File formats: JSON model/checkpoint/config documents, CSV tables, manifests.

JSON floats are written with Python's shortest round-trip repr, so model and
checkpoint files reload bit-exactly. CSV floats use 17 significant digits.
Nothing written here carries a timestamp; identical inputs give identical
bytes.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .diffusion import diffusion_from_dict
from .errors import ConfigurationError
from .models import MODEL_KINDS, ModelPair, model_from_dict

FORMAT_VERSION = 1
CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "model_kind": "gaussian",
    "model_seed": 0,
    "seed": 0,
    "output_dir": "out",
    "dataset": {"n_train": 100_000, "n_test": 10_000},
    "mh": {"burn_in": 5000, "thinning": 10, "n_chains": 1000, "step_size": None},
    "statistics": ["kl", "fisher", "diffusion"],
    "diffusion": "checkpoint",
    "checkpoint": None,
    "norm_ratio_samples": 100_000,
    "train": {"lr": None, "alpha": 10.0, "l2": 1e-5, "epochs": 200, "batch_size": 512,
              "objective": "cpd", "hidden": 36, "output_scale": 0.1},
    "roc": {"batch_sizes": [1, 5, 10, 25, 50, 100], "n_batches": None},
    "arl_edd": {"thresholds": [0.5, 1, 2, 3, 4, 6, 8], "n_paths": None,
                "max_len_arl": None, "max_len_edd": 100_000, "calibrate": True,
                "calibration_samples": 10_000},
    "verify": {"n_paths": None, "identity_samples": 100_000},
}

STATISTIC_NAMES = ("kl", "fisher", "diffusion")
DIFFUSION_SOURCES = ("checkpoint", "identity", "optimal")


# -- JSON documents


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc


def save_model(path, model) -> Path:
    return write_json(path, {"format_version": FORMAT_VERSION, **model.to_dict()})


def load_model(path):
    return model_from_dict(read_json(path))


def save_pair(path, pair: ModelPair) -> Path:
    return write_json(path, {"format_version": FORMAT_VERSION,
                             "p_inf": pair.p_inf.to_dict(), "p_one": pair.p_one.to_dict()})


def load_pair(path) -> ModelPair:
    data = read_json(path)
    try:
        return ModelPair(model_from_dict(data["p_inf"]), model_from_dict(data["p_one"]))
    except KeyError as exc:
        raise ConfigurationError(f"{path}: missing {exc}") from exc


def save_checkpoint(path, m) -> Path:
    return write_json(path, {"format_version": FORMAT_VERSION, **m.to_dict()})


def load_checkpoint(path):
    data = read_json(path)
    try:
        return diffusion_from_dict(data)
    except ValueError as exc:
        raise ConfigurationError(f"corrupted checkpoint {path}: {exc}") from exc


# -- CSV


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_dataset(path, X) -> Path:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return write_csv(path, [f"x{i}" for i in range(X.shape[1])], X.tolist())


def read_dataset(path, d: int | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset not found: {path}")
    header, rows = read_csv(path)
    if header != [f"x{i}" for i in range(len(header))]:
        raise ConfigurationError(f"{path}: header must be x0..x{{d-1}}")
    if d is not None and len(header) != d:
        raise ConfigurationError(f"{path}: expected {d} columns, found {len(header)}")
    try:
        X = np.array(rows, dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric entry ({exc})") from exc
    return X


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- config


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def validate_config(cfg: dict) -> dict:
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {cfg['version']!r}")
    if cfg["model_kind"] not in MODEL_KINDS:
        raise ConfigurationError(f"model_kind must be one of {MODEL_KINDS}")
    bad = [s for s in cfg["statistics"] if s not in STATISTIC_NAMES]
    if bad or not cfg["statistics"]:
        raise ConfigurationError(f"statistics must be a non-empty subset of {STATISTIC_NAMES}")
    if cfg["diffusion"] not in DIFFUSION_SOURCES:
        raise ConfigurationError(f"diffusion must be one of {DIFFUSION_SOURCES}")
    if cfg["diffusion"] == "optimal" and cfg["model_kind"] != "gaussian":
        raise ConfigurationError("the optimal constant diffusion exists only for the gaussian pair")
    for key in ("n_train", "n_test"):
        if not isinstance(cfg["dataset"][key], int) or cfg["dataset"][key] < 1:
            raise ConfigurationError(f"dataset.{key} must be a positive integer")
    sizes = cfg["roc"]["batch_sizes"]
    if not sizes or any(not isinstance(n, int) or n < 1 for n in sizes):
        raise ConfigurationError("roc.batch_sizes must be positive integers")
    cs = cfg["arl_edd"]["thresholds"]
    if not cs or any(not isinstance(c, (int, float)) or not c > 0 for c in cs):
        raise ConfigurationError("arl_edd.thresholds must be positive numbers")
    for section, key in (("roc", "n_batches"), ("arl_edd", "n_paths"), ("verify", "n_paths")):
        v = cfg[section][key]
        if v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigurationError(f"{section}.{key} must be a positive integer or null")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        data = read_json(path)
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, command: str, cfg: dict, outputs, extra: dict | None = None
                   ) -> Path:
    """``manifest_<command>.json`` listing the config, its hash and output digests."""
    out_dir = Path(out_dir)
    entries = {}
    for p in outputs:
        p = Path(p)
        entries[os.path.relpath(p, out_dir)] = file_sha256(p)
    doc = {"command": command, "config_version": cfg["version"], "config_hash": config_hash(cfg),
           "config": cfg, "outputs": entries}
    if extra:
        doc.update(extra)
    return write_json(out_dir / f"manifest_{command.replace('-', '_')}.json", doc)

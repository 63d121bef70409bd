"""Run configuration: JSON schema, validation, fingerprints, CSV/JSON output.

A run config is a single JSON object with sections mirroring the library
types (dataset, schedule with a nested time_sampler, objective, trainer,
sampler, variance_scan) plus a seed and an output directory.  Command-line
flags override config keys; the fully resolved config is canonicalized
(sorted keys, compact separators) and hashed, and that fingerprint is
stamped into every output file.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources

import numpy as np

from . import datasets, kernels


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def canonical_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path_or_name: str) -> dict:
    """Load a config from a path, or from the bundled set by bare name."""
    text = None
    name = str(path_or_name)
    if not name.endswith(".json"):
        ref = resources.files("stf_lab").joinpath(f"configs/{name}.json")
        if ref.is_file():
            text = ref.read_text()
    if text is None:
        try:
            with open(name) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {name!r}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{name}: top level must be a JSON object")
    return cfg


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return section[key]


def _known_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)!r}")


def build_dataset(cfg: dict):
    sec = _require(cfg, "dataset", "config")
    kind = _require(sec, "kind", "dataset")
    try:
        if kind == "two_gaussians":
            _known_keys(sec, {"kind", "dim", "offset", "sigma_hat"}, "dataset")
            return datasets.make_two_gaussians(int(sec.get("dim", 64)),
                                               float(sec.get("offset", 0.1)),
                                               float(sec.get("sigma_hat", 1e-4)))
        if kind == "ring":
            _known_keys(sec, {"kind", "modes", "radius", "sigma_hat"}, "dataset")
            return datasets.make_ring(int(sec.get("modes", 8)),
                                      float(sec.get("radius", 2.0)),
                                      float(sec.get("sigma_hat", 0.05)))
        if kind == "file":
            _known_keys(sec, {"kind", "path"}, "dataset")
            return datasets.load_points(_require(sec, "path", "dataset"))
        if kind == "points":
            _known_keys(sec, {"kind", "points"}, "dataset")
            return datasets.EmpiricalSet(np.asarray(_require(sec, "points", "dataset"), dtype=float))
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"dataset: {exc}") from exc
    raise ConfigError(f"dataset.kind: unknown kind {kind!r}")


def build_schedule(cfg: dict) -> kernels.NoiseSchedule:
    sec = _require(cfg, "schedule", "config")
    _known_keys(sec, {"kind", "sigma_min", "sigma_max", "beta_min", "beta_max", "rho",
                      "time_sampler"}, "schedule")
    kind = _require(sec, "kind", "schedule")
    try:
        if kind == "ve":
            return kernels.ve(float(sec.get("sigma_min", 0.01)), float(sec.get("sigma_max", 50.0)))
        if kind == "vp":
            return kernels.vp(float(sec.get("beta_min", 0.1)), float(sec.get("beta_max", 20.0)))
        if kind == "edm":
            return kernels.edm(float(sec.get("sigma_min", 0.002)), float(sec.get("sigma_max", 80.0)),
                               float(sec.get("rho", 7.0)))
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    raise ConfigError(f"schedule.kind: unknown kind {kind!r}")


def build_time_sampler(cfg: dict) -> kernels.TimeSampler:
    sec = cfg.get("schedule", {}).get("time_sampler", {})
    _known_keys(sec, {"kind", "t_min", "log_mean", "log_std"}, "schedule.time_sampler")
    try:
        return kernels.TimeSampler(
            kind=sec.get("kind", "uniform"),
            t_min=float(sec.get("t_min", 1e-5)),
            log_mean=float(sec.get("log_mean", -1.2)),
            log_std=float(sec.get("log_std", 1.2)),
        )
    except ValueError as exc:
        raise ConfigError(f"schedule.time_sampler: {exc}") from exc


def resolve(cfg: dict, overrides: dict = None) -> dict:
    """Apply CLI overrides (seed/out/threads) and fill the top-level defaults."""
    out = json.loads(json.dumps(cfg))  # deep copy, JSON-clean
    for key, val in (overrides or {}).items():
        if val is not None:
            out[key] = val
    out.setdefault("seed", 0)
    out.setdefault("out", "runs/out")
    out.setdefault("threads", 1)
    if not isinstance(out["seed"], int):
        raise ConfigError("seed: must be an integer")
    if not (isinstance(out["threads"], int) and out["threads"] >= 1):
        raise ConfigError("threads: must be a positive integer")
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, names, rows, fingerprint: str = "") -> None:
    """Deterministic CSV with the config fingerprint on a comment line."""
    with open(path, "w") as fh:
        fh.write(f"# config_fingerprint={fingerprint}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv_fingerprint(path) -> str:
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith("# config_fingerprint="):
        raise ValueError(f"{path}: missing fingerprint line")
    return first.split("=", 1)[1]


def write_sidecar(path, config: dict, fingerprint: str, extra: dict = None) -> None:
    payload = {"config": config, "config_fingerprint": fingerprint}
    payload.update(extra or {})
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")

"""Flat `key = value` config files, run manifests, weights and metrics files.

Config keys match the dataclass field names of SceneConfig, DecoderConfig and
RunConfig exactly; an unknown key is an error. The scene seed is not a file
key: per-episode scene seeds are always derived from the run seed. Every
output is deterministic text (17 significant digits), so identical runs
produce byte-identical files.
"""
from __future__ import annotations

from dataclasses import fields, replace
from typing import Dict, List, Tuple

import numpy as np

import bevrope
from bevrope.decoder import DecoderConfig
from bevrope.harness import MetricsReport, RunConfig
from bevrope.kernels import BACKEND
from bevrope.numerics import ConfigurationError
from bevrope.scenes import SceneConfig

METRICS_HEADER = ("variant,seed,center_mae,velocity_mae,precision,recall,"
                  "matched,predictions,gt_count")


def _field_types(cls) -> Dict[str, type]:
    mapping = {"int": int, "float": float, "str": str}
    return {f.name: mapping[f.type] for f in fields(cls)
            if f.type in mapping}


_SCENE_FIELDS = _field_types(SceneConfig)
_SCENE_FIELDS.pop("seed")  # the run seed owns all seeding
_DECODER_FIELDS = _field_types(DecoderConfig)
_RUN_FIELDS = _field_types(RunConfig)


def parse_config_text(text: str) -> Dict[str, str]:
    """Flat key = value lines; blank lines and #-comments allowed."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno} is not key = value: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigurationError(f"duplicate config key {key!r}")
        out[key] = value
    return out


def build_configs(pairs: Dict[str, str]) -> Tuple[SceneConfig, DecoderConfig, RunConfig]:
    """Route flat keys to the owning config; unknown keys are an error."""
    scene_kw, dec_kw, run_kw = {}, {}, {}
    for key, value in pairs.items():
        if key in _SCENE_FIELDS:
            scene_kw[key] = _coerce(key, value, _SCENE_FIELDS[key])
        elif key in _DECODER_FIELDS:
            dec_kw[key] = _coerce(key, value, _DECODER_FIELDS[key])
        elif key in _RUN_FIELDS:
            run_kw[key] = _coerce(key, value, _RUN_FIELDS[key])
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    return SceneConfig(**scene_kw), DecoderConfig(**dec_kw), RunConfig(**run_kw)


def _coerce(key: str, value: str, typ: type):
    try:
        return typ(value)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: {exc}") from None


def load_configs(path) -> Tuple[SceneConfig, DecoderConfig, RunConfig]:
    with open(path) as fh:
        return build_configs(parse_config_text(fh.read()))


def resolve_scene(scene: SceneConfig, dec: DecoderConfig) -> SceneConfig:
    """Scene tokens must be model_dim wide; keep them in lockstep."""
    if scene.token_feature_dim != dec.model_dim:
        return replace(scene, token_feature_dim=dec.model_dim)
    return scene


# ---------------------------------------------------------------------------
# manifest

def _fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def manifest_lines(scene: SceneConfig, dec: DecoderConfig, run: RunConfig,
                   extra: Dict[str, str] | None = None) -> List[str]:
    """Every resolved hyperparameter plus the code-version string."""
    lines = [f"code_version = {bevrope.__version__}",
             f"kernel_backend = {BACKEND}"]
    for prefix, cfg in (("scene", scene), ("decoder", dec), ("run", run)):
        for f in fields(cfg):
            if prefix == "scene" and f.name == "seed":
                continue
            lines.append(f"{prefix}.{f.name} = {_fmt_value(getattr(cfg, f.name))}")
    part = dec.partition
    lines.append(f"decoder.resolved_partition = {part.pairs_t},{part.pairs_x},{part.pairs_y}")
    for key in sorted(extra or {}):
        lines.append(f"{key} = {extra[key]}")
    return lines


def write_manifest(path, scene, dec, run, extra=None) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(manifest_lines(scene, dec, run, extra)) + "\n")


# ---------------------------------------------------------------------------
# weights

def save_weights(path, params: Dict[str, np.ndarray]) -> None:
    """Deterministic text format: `name rows cols` then row-major values."""
    lines = ["bevrope-weights 1"]
    for name in sorted(params):
        arr = params[name]
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        lines.append(" ".join(f"{v:.17g}" for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(path) -> Dict[str, np.ndarray]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("bevrope-weights"):
        raise ConfigurationError(f"{path} is not a weights file")
    params: Dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        name, rows, cols = lines[i].split()
        values = np.array(lines[i + 1].split(), dtype=np.float64)
        params[name] = np.ascontiguousarray(values.reshape(int(rows), int(cols)))
        i += 2
    return params


# ---------------------------------------------------------------------------
# metrics tables

def metrics_csv_lines(rows: List[MetricsReport]) -> List[str]:
    lines = [METRICS_HEADER]
    for r in rows:
        lines.append(",".join([
            r.variant, r.seed,
            f"{r.center_mae:.17g}", f"{r.velocity_mae:.17g}",
            f"{r.precision:.17g}", f"{r.recall:.17g}",
            str(r.matched), str(r.predictions), str(r.gt_count),
        ]))
    return lines


def write_metrics_csv(path, rows: List[MetricsReport]) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(metrics_csv_lines(rows)) + "\n")


def read_metrics_csv(path) -> List[MetricsReport]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ConfigurationError(f"{path} is not a metrics table")
    rows = []
    for line in lines[1:]:
        v = line.split(",")
        rows.append(MetricsReport(v[0], v[1], float(v[2]), float(v[3]),
                                  float(v[4]), float(v[5]), int(v[6]),
                                  int(v[7]), int(v[8])))
    return rows

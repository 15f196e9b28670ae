"""Flat ``key = value`` run configuration.

Keys mirror the input-deck names of the reference code; an optional
``warpx.``/``amr.``/``algo.``/``particles.`` prefix is stripped. Lines starting
with ``#`` are comments. Unknown keys are rejected so typos never pass
silently.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .domain import GridSpec, WorkloadConfig, WorkloadKind
from .errors import ConfigError
from .gpma import DEFAULT_GAP_RATIO, DEFAULT_MIN_GAP
from .resort import SortPolicy
from .shape import ShapeOrder

_PREFIXES = ("warpx.", "amr.", "algo.", "particles.")

_ALIASES = {
    "particle_shape": "shape_order",
    "max_step": "steps",
    "num_particles_per_cell_each_dim": "ppc_each_dim",
    "sort_trigger_rebuild_count": "trigger_rebuild_count",
    "sort_trigger_empty_ratio": "trigger_empty_ratio",
    "sort_trigger_full_ratio": "trigger_full_ratio",
    "sort_trigger_perf_enable": "perf_enable",
    "sort_trigger_perf_degrad": "perf_degrad",
}

_POLICY_KEYS = ("sort_interval", "min_sort_interval", "trigger_rebuild_count",
                "trigger_empty_ratio", "trigger_full_ratio", "perf_enable", "perf_degrad")

_KNOWN = {"n_cell", "cell_size", "dx", "dy", "dz", "origin", "ppc", "ppc_each_dim",
          "shape_order", "seed", "steps", "dt", "workload_kind", "thermal_speed",
          "drift_velocity", "drift_gradient", "charge", "weight", "gap_ratio", "min_gap",
          *_POLICY_KEYS}


@dataclass
class RunConfig:
    workload: WorkloadConfig
    order: ShapeOrder = ShapeOrder.CIC
    policy: SortPolicy = field(default_factory=SortPolicy)
    gap_ratio: float = DEFAULT_GAP_RATIO
    min_gap: int = DEFAULT_MIN_GAP

    @property
    def grid(self) -> GridSpec:
        return self.workload.grid


def _vector(text: str, n: int, kind=float) -> list:
    parts = [p for p in re.split(r"[\s,x×]+", text.strip()) if p]
    if len(parts) == 1:
        parts = parts * n
    if len(parts) != n:
        raise ConfigError(f"expected {n} values, got {text!r}")
    try:
        return [kind(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad numeric value in {text!r}") from None


def _scalar(text: str, kind):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r}") from None


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def parse_pairs(text: str) -> dict:
    """Raw ``{canonical_key: value_string}`` from config text."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        for prefix in _PREFIXES:
            if key.startswith(prefix):
                key = key[len(prefix):]
                break
        key = _ALIASES.get(key, key)
        if key not in _KNOWN:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(pairs: dict) -> RunConfig:
    if "n_cell" not in pairs:
        raise ConfigError("n_cell is required")
    nx, ny, nz = _vector(pairs["n_cell"], 3, int)
    spacing = _vector(pairs.get("cell_size", "1"), 3)
    for i, name in enumerate(("dx", "dy", "dz")):
        if name in pairs:
            spacing[i] = _scalar(pairs[name], float)
    origin = tuple(_vector(pairs["origin"], 3)) if "origin" in pairs else (0.0, 0.0, 0.0)
    grid = GridSpec(nx, ny, nz, *spacing, origin=origin)

    if "ppc" in pairs and "ppc_each_dim" in pairs:
        raise ConfigError("give either ppc or num_particles_per_cell_each_dim, not both")
    ppc = 8
    if "ppc" in pairs:
        ppc = _scalar(pairs["ppc"], int)
    elif "ppc_each_dim" in pairs:
        a, b, c = _vector(pairs["ppc_each_dim"], 3, int)
        ppc = a * b * c

    drift = tuple(_vector(pairs["drift_velocity"], 3)) if "drift_velocity" in pairs else None
    kwargs = {}
    for key, kind in (("thermal_speed", float), ("drift_gradient", float), ("seed", int),
                      ("steps", int), ("dt", float), ("charge", float), ("weight", float)):
        if key in pairs:
            kwargs[key] = _scalar(pairs[key], kind)
    workload = WorkloadConfig(
        grid, ppc=ppc,
        kind=WorkloadKind.parse(pairs.get("workload_kind", "uniform")),
        drift_velocity=drift, **kwargs)

    policy_kwargs = {}
    for key in _POLICY_KEYS:
        if key in pairs:
            kind = {"perf_enable": _bool, "sort_interval": int, "min_sort_interval": int,
                    "trigger_rebuild_count": int}.get(key, float)
            policy_kwargs[key] = kind(pairs[key]) if kind is _bool else _scalar(pairs[key], kind)

    order = ShapeOrder.CIC
    if "shape_order" in pairs:
        try:
            order = ShapeOrder.parse(pairs["shape_order"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    gap_ratio = _scalar(pairs.get("gap_ratio", str(DEFAULT_GAP_RATIO)), float)
    min_gap = _scalar(pairs.get("min_gap", str(DEFAULT_MIN_GAP)), int)
    if not 0 <= gap_ratio < 1:
        raise ConfigError("gap_ratio must lie in [0, 1)")
    if min_gap < 0:
        raise ConfigError("min_gap must be >= 0")
    return RunConfig(workload, order, SortPolicy(**policy_kwargs), gap_ratio, min_gap)


def loads(text: str) -> RunConfig:
    return build_config(parse_pairs(text))


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)

"""Scripted studies: one-dimension sweeps and the per-layer sensitivity
scan, emitted as CSV tables.

A sweep varies exactly one knob across a list of values and runs the
full pipeline per value. Cells fail independently: an error is recorded
in the row and the sweep continues. Tables are deterministic for fixed
config and seed except for the wall-clock column.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .errors import BlockpruneError, ConfigError
from .model import build_model
from .numerics import make_rng
from .pruner import PruneEntry, PruneSpec
from .trainer import TrainConfig, run_pipeline

VARY_DIMS = (
    "num_blocks",
    "retrain_epochs",
    "lambda_max",
    "seed",
    "compression_rate",
    "layer",
)


@dataclass(frozen=True)
class SweepSpec:
    name: str
    base: TrainConfig
    vary: str
    values: tuple

    def __post_init__(self):
        if self.vary not in VARY_DIMS:
            raise ConfigError(
                f"sweep vary dimension must be one of {VARY_DIMS}, "
                f"got {self.vary!r}"
            )
        if not self.values:
            raise ConfigError(f"sweep {self.name!r} has no values")


def steps_per_epoch(config: TrainConfig) -> int:
    return math.ceil(config.train_samples / config.batch_size)


def apply_value(base: TrainConfig, vary: str, value) -> TrainConfig:
    """Base config with one dimension changed; everything else fixed."""
    if vary == "seed":
        return replace(base, seed=int(value))
    if vary == "lambda_max":
        return replace(base, lambda_max=float(value))
    if vary == "retrain_epochs":
        return replace(base, t2=int(value) * steps_per_epoch(base))
    if vary == "num_blocks":
        entries = tuple(
            replace(e, num_blocks=int(value)) for e in base.prune_spec.entries
        )
        return replace(base, prune_spec=PruneSpec(entries=entries))
    if vary == "compression_rate":
        rate = float(value)
        if rate < 1.0:
            raise ConfigError(f"compression rate must be >= 1, got {rate}")
        target = 1.0 - 1.0 / rate
        entries = tuple(
            replace(e, mode="percentile", value=target)
            for e in base.prune_spec.entries
        )
        return replace(base, prune_spec=PruneSpec(entries=entries))
    if vary == "layer":
        if base.prune_spec.entries:
            template = base.prune_spec.entries[0]
        else:
            template = PruneEntry(
                layer_name="", axis="row", num_blocks=8,
                mode="percentile", value=0.5,
            )
        entry = replace(template, layer_name=str(value))
        return replace(base, prune_spec=PruneSpec(entries=(entry,)))
    raise ConfigError(f"unknown sweep vary dimension {vary!r}")


def _run_cell(config: TrainConfig, value) -> dict:
    try:
        result = run_pipeline(config)
        return {
            "value": value,
            "accuracy": result.final_accuracy,
            "compression": result.compression,
            "wall_clock_seconds": result.wall_clock,
            "status": "ok",
        }
    except BlockpruneError as exc:
        return {
            "value": value,
            "accuracy": "",
            "compression": "",
            "wall_clock_seconds": "",
            "status": f"error: {exc}",
        }


def sweep(spec: SweepSpec, workers: int = 1) -> list[dict]:
    """One pipeline run per value, rows sorted by value."""
    values = sorted(spec.values)
    configs = [apply_value(spec.base, spec.vary, v) for v in values]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_cell, c, v) for c, v in zip(configs, values)
            ]
            return [f.result() for f in futures]
    return [_run_cell(c, v) for c, v in zip(configs, values)]


def sensitivity_scan(
    config: TrainConfig, ratio: float, include_nonprunable: bool = False,
    workers: int = 1,
) -> list[dict]:
    """Prune one layer at a time at the given ratio, full pipeline each.

    Rows follow model registry order. With include_nonprunable, the
    embedding and classifier get a prunable override for their own row.
    """
    if not 0 < ratio < 1:
        raise ConfigError(f"sensitivity ratio must be in (0, 1), got {ratio}")
    probe = build_model(config.arch, make_rng(0))
    layers = []
    for name in probe.names():
        if probe.tensor(name).prunable:
            layers.append((name, False))
        elif include_nonprunable:
            layers.append((name, True))

    def cell_config(name: str, needs_override: bool) -> TrainConfig:
        cfg = apply_value(config, "layer", name)
        entry = replace(cfg.prune_spec.entries[0], mode="percentile", value=ratio)
        cfg = replace(cfg, prune_spec=PruneSpec(entries=(entry,)))
        if needs_override:
            overrides = dict(cfg.prunable_overrides)
            overrides[name] = True
            cfg = replace(cfg, prunable_overrides=overrides)
        return cfg

    cells = [(cell_config(n, ov), n) for n, ov in layers]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, c, n) for c, n in cells]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_cell(c, n) for c, n in cells]
    for row in rows:
        row["layer"] = row.pop("value")
    return rows


def save_table(rows: list[dict], columns: list[str], path: str,
               meta: dict | None = None) -> None:
    """Comma-separated table with a header row; commas in cells become ';'."""
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(",".join(columns))
    for row in rows:
        cells = []
        for col in columns:
            value = row.get(col, "")
            text = repr(value) if isinstance(value, float) else str(value)
            cells.append(text.replace(",", ";").replace("\n", " "))
        lines.append(",".join(cells))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")

"""One-axis ablation sweeps: a training run per (value, seed), scored on held-out samples."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..losses import LossConfig
from ..model import MODES, MeritConfig
from ..numerics.ops import RESIZE_MODES
from ..cascade_decoder import AGGREGATIONS
from .data import HELDOUT_OFFSET, SynthSpec, make_dataset
from .train import TrainConfig, config_hash, evaluate, train

log = logging.getLogger(__name__)

AXES = {
    "mode": MODES,
    "mutation": ("on", "off"),
    "decoder": ("cascade", "plain"),
    "aggregation": AGGREGATIONS,
    "interpolation": RESIZE_MODES,
    "lambda1": None,          # any float in [0, 1]
}
DEFAULT_VALUES = {
    "mode": ("cascaded", "parallel", "single"),
    "mutation": ("on", "off"),
    "decoder": ("cascade", "plain"),
    "aggregation": AGGREGATIONS,
    "interpolation": RESIZE_MODES,
    "lambda1": (0.0, 0.3, 0.5, 0.7, 1.0),
}
RUN_FIELDS = ("axis", "value", "seed", "mean_dsc", "mean_hd95", "final_loss", "steps", "config_hash")
SUMMARY_FIELDS = ("axis", "value", "runs", "dsc_mean", "dsc_std", "hd95_mean", "hd95_std")


def apply_axis(axis: str, value, cfg: MeritConfig, tc: TrainConfig) -> tuple[MeritConfig, TrainConfig]:
    """Return copies of the configs with exactly the swept field changed."""
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    if axis == "lambda1":
        try:
            lam = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"lambda1 value must be a number, got {value!r}") from None
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda1 must lie in [0, 1], got {lam}")
        return cfg, replace(tc, loss=LossConfig.from_lambda1(lam, tc.loss.smoothing))
    if value not in AXES[axis]:
        raise ValueError(f"invalid value {value!r} for axis {axis!r}; choose from {AXES[axis]}")
    if axis == "mode":
        return cfg.with_(mode=value), tc
    if axis == "mutation":
        return cfg, replace(tc, use_mutation=value == "on")
    if axis == "decoder":
        return cfg.with_(use_cascade_decoder=value == "cascade"), tc
    if axis == "aggregation":
        return cfg.with_(aggregation=value), tc
    return cfg.with_(interpolation=value), tc


@dataclass
class SweepResult:
    runs: list[dict]
    summary: list[dict]

    def summary_for(self, value) -> dict:
        for row in self.summary:
            if row["value"] == str(value):
                return row
        raise KeyError(value)


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def summarize_runs(axis: str, values: Sequence, runs: list[dict]) -> list[dict]:
    rows = []
    for v in values:
        sel = [r for r in runs if r["value"] == str(v)]
        dm, ds = _mean_std([r["mean_dsc"] for r in sel])
        hm, hs = _mean_std([r["mean_hd95"] for r in sel])
        rows.append({"axis": axis, "value": str(v), "runs": len(sel), "dsc_mean": dm, "dsc_std": ds,
                     "hd95_mean": hm, "hd95_std": hs})
    return rows


def sweep(axis: str, values: Sequence | None, cfg: MeritConfig, tc: TrainConfig, spec: SynthSpec,
          seeds: Sequence[int] = (0, 1, 2), heldout_size: int = 16, out_dir=None) -> SweepResult:
    """Train one model per (value, seed) and score each on a fixed held-out set."""
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    values = tuple(DEFAULT_VALUES[axis] if values is None else values)
    if not values or not seeds:
        raise ValueError("a sweep needs at least one value and one seed")
    configs = [(v, *apply_axis(axis, v, cfg, tc)) for v in values]   # validates before any training
    held_x, held_y = make_dataset(spec, heldout_size, first_index=HELDOUT_OFFSET)
    runs = []
    for v, c, t in configs:
        for seed in seeds:
            t_seed = replace(t, seed=seed)
            model, record = train(c, t_seed, spec)
            rep = evaluate(model, held_x, held_y)
            runs.append({
                "axis": axis, "value": str(v), "seed": seed, "mean_dsc": rep.mean_dsc,
                "mean_hd95": rep.mean_hd95, "final_loss": record.losses[-1] if record.losses else None,
                "steps": record.steps, "config_hash": config_hash(c, t_seed, spec),
            })
            log.info("sweep %s=%s seed %d: DSC %.2f", axis, v, seed, rep.mean_dsc)
    result = SweepResult(runs, summarize_runs(axis, values, runs))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / f"sweep_{axis}_runs.csv", RUN_FIELDS, result.runs)
        write_rows(out / f"sweep_{axis}_summary.csv", SUMMARY_FIELDS, result.summary)
    return result


def write_rows(path, fields: Sequence[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r[k] for k in fields})

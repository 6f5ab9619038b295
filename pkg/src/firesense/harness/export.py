"""Writers for run outputs.

Every deterministic file (``metrics.csv``, ``run.json``, ``trajectories.json``,
map snapshots) depends only on the config and the seed. Wall-clock timings go
to ``timing.json`` so they never break byte-for-byte comparisons.

``metrics.csv`` columns, in order:

* ``kind``: ``step`` for per-step rows, ``summary`` for the per-trial row
* ``trial``, ``controller``, ``step`` (blank on summary rows)
* ``residual``: summed ``Tr(S)`` over uncovered spots at this step
* ``cumulative_residual``: running sum; on summary rows the trial total
* ``coverage``: covered spots / total spots; on summary rows the trial mean
* ``n_covered``, ``consensus_error``, ``connected`` (0/1)
* ``uav<i>_x``, ``uav<i>_y``, ``uav<i>_z`` for every UAV
* ``si_<h>``, ``level_<h>``, ``min_distance_<h>`` for every human

The step-0 initialization row of each trial is stored in ``run.json``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import scipy
import yaml

from .. import __version__
from ..uncertainty_map import GridMap, write_pgm
from .config import ScenarioConfig, config_to_dict
from .simulation import StepRecord, TrialMetrics

SCHEMA_VERSION = "1.0"


class ExportError(OSError):
    pass


def _num(v: float) -> str:
    return repr(float(v))


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if hasattr(v, "value"):
        return v.value
    return v


def _dump_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from None


def versions() -> dict[str, str]:
    return {
        "firesense": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def csv_header(n_uavs: int, human_ids: Sequence[int]) -> list[str]:
    cols = ["kind", "trial", "controller", "step", "residual", "cumulative_residual",
            "coverage", "n_covered", "consensus_error", "connected"]
    for i in range(n_uavs):
        cols += [f"uav{i}_x", f"uav{i}_y", f"uav{i}_z"]
    for h in human_ids:
        cols += [f"si_{h}", f"level_{h}", f"min_distance_{h}"]
    return cols


def _step_row(m: TrialMetrics, r: StepRecord, n_uavs: int, human_ids: Sequence[int]) -> list[str]:
    row = ["step", str(m.trial), m.controller, str(r.step), _num(r.residual),
           _num(r.cumulative_residual), _num(r.coverage), str(r.n_covered),
           _num(r.consensus_error), str(int(r.connected))]
    for i in range(n_uavs):
        row += [_num(v) for v in r.uav_positions[i]]
    by_id = {s.human_id: s for s in r.safety}
    for h in human_ids:
        s = by_id[h]
        row += [_num(s.si_value), s.level.value, _num(s.min_distance)]
    return row


def _summary_row(m: TrialMetrics, n_cols: int) -> list[str]:
    row = ["summary", str(m.trial), m.controller, "", "", _num(m.summed_residual),
           _num(m.mean_coverage), "", "", str(int(all(s.connected for s in m.steps)))]
    return row + [""] * (n_cols - len(row))


def metrics_csv(metrics: Sequence[TrialMetrics], n_uavs: int, human_ids: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = csv_header(n_uavs, human_ids)
    w.writerow(header)
    for m in metrics:
        for r in m.steps:
            w.writerow(_step_row(m, r, n_uavs, human_ids))
        w.writerow(_summary_row(m, len(header)))
    return buf.getvalue()


def _initial_summary(r: StepRecord) -> dict:
    return {
        "residual": r.residual,
        "coverage": r.coverage,
        "n_covered": r.n_covered,
        "consensus_error": r.consensus_error,
        "connected": r.connected,
        "uav_positions": r.uav_positions,
        "safety": [{"human_id": s.human_id, "si": s.si_value, "level": s.level.value,
                    "min_distance": s.min_distance} for s in r.safety],
    }


def trial_summary(m: TrialMetrics) -> dict:
    return {
        "trial": m.trial,
        "controller": m.controller,
        "seed": m.seed,
        "steps": len(m.steps),
        "rendezvous_steps": m.rendezvous_steps,
        "summed_residual": m.summed_residual,
        "mean_coverage": m.mean_coverage,
        "min_coverage": min((s.coverage for s in m.steps), default=m.initial.coverage),
        "always_connected": all(s.connected for s in m.steps),
        "flags": list(m.flags),
        "initial": _initial_summary(m.initial),
    }


def run_document(cfg: ScenarioConfig, metrics: Sequence[TrialMetrics]) -> dict:
    sums = [m.summed_residual for m in metrics]
    return {
        "schema_version": SCHEMA_VERSION,
        "versions": versions(),
        "config": config_to_dict(cfg),
        "aggregate": {
            "trials": len(metrics),
            "mean_summed_residual": float(np.mean(sums)) if sums else 0.0,
            "std_summed_residual": float(np.std(sums)) if sums else 0.0,
            "mean_coverage": float(np.mean([m.mean_coverage for m in metrics])) if metrics else 0.0,
        },
        "trials": [trial_summary(m) for m in metrics],
    }


def trajectory_document(metrics: Sequence[TrialMetrics]) -> dict:
    def step(r: StepRecord) -> dict:
        return {"step": r.step, "uav_positions": r.uav_positions,
                "virtual_targets": r.virtual_targets, "controls": r.controls,
                "filters": r.filters}
    return {
        "schema_version": SCHEMA_VERSION,
        "trials": [{"trial": m.trial, "controller": m.controller,
                    "steps": [step(m.initial)] + [step(r) for r in m.steps]}
                   for m in metrics],
    }


def map_path(out: str | Path, trial: int, step: int) -> Path:
    return Path(out) / "maps" / f"trial_{trial}" / f"step_{step}.pgm"


def export_map(out: str | Path, trial: int, step: int, grid: GridMap) -> Path:
    path = map_path(out, trial, step)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(grid, path)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from None
    return path


def export(cfg: ScenarioConfig, metrics: Sequence[TrialMetrics], out: str | Path,
           formats: Iterable[str] = ("csv", "json", "trajectories")) -> list[Path]:
    """Write the requested outputs into ``out``; returns the written paths.

    Args:
        cfg: Scenario the metrics came from (echoed into ``run.json``).
        metrics: One entry per trial, in trial order.
        out: Output directory, created if missing.
        formats: Any of ``csv``, ``json``, ``trajectories``, ``timing``.
    """
    out = Path(out)
    formats = set(formats)
    n_uavs = len(cfg.fleet.uavs)
    human_ids = [h.id for h in cfg.humans]
    written = []
    if "csv" in formats:
        written.append(out / "metrics.csv")
        _write(written[-1], metrics_csv(metrics, n_uavs, human_ids))
    if "json" in formats:
        written.append(out / "run.json")
        _write(written[-1], _dump_json(run_document(cfg, metrics)))
    if "trajectories" in formats:
        written.append(out / "trajectories.json")
        _write(written[-1], _dump_json(trajectory_document(metrics)))
    if "timing" in formats:
        written.append(out / "timing.json")
        _write(written[-1], _dump_json({"wall_time_s": {str(m.trial): m.wall_time for m in metrics}}))
    return written

"""CSV, metadata and figure outputs for finished runs."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .experiment import Aggregate, Reference, RunConfig, RunResult, aggregate

CSV_HEADER = ("episode", "opt_regret_mean", "opt_regret_min", "opt_regret_max",
              "cons_regret_mean", "cons_regret_min", "cons_regret_max", "used_baseline_frac")


class OutputError(OSError):
    pass


def preflight(out_dir) -> Path:
    """Create ``out_dir`` and make sure it is writable before any run starts."""
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _num(x: float) -> str:
    return format(float(x), ".12g")


def write_csv(agg: Aggregate, path) -> Path:
    path = Path(path)
    columns = (agg.episode, agg.opt_mean, agg.opt_min, agg.opt_max,
               agg.cons_mean, agg.cons_min, agg.cons_max, agg.used_baseline_frac)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in zip(*columns):
            writer.writerow([str(int(row[0]))] + [_num(v) for v in row[1:]])
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def run_metadata(config: RunConfig, ref: Reference, results: Mapping[str, list[RunResult]],
                 extra: Optional[dict] = None) -> dict:
    model = ref.model
    S, A, H = model.dims
    meta = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
        "model": {"name": model.name, "num_states": S, "num_actions": A, "horizon": H,
                  "budget": model.budget, "initial_state": model.initial_state, **model.metadata},
        "reference": {"optimal_value": ref.optimum, "unconstrained_optimal_value": ref.unconstrained_optimum,
                      "unconstrained_constraint_value": ref.unconstrained_cost,
                      "baseline_target": ref.baseline_target, "baseline_constraint_value": ref.baseline_value,
                      "baseline_objective_value": ref.baseline_objective},
        "runs": {
            agent: [{"seed": r.seed, "episodes": r.episodes, "switch_episode": r.switch_episode,
                     "first_violation": r.first_violation,
                     "final_opt_regret": float(r.cum_opt_regret[-1]),
                     "final_cons_regret": float(r.cum_cons_regret[-1])} for r in runs]
            for agent, runs in results.items()
        },
    }
    if extra:
        meta.update(extra)
    return meta


def emit_outputs(results: Mapping[str, list[RunResult]], config: RunConfig, ref: Reference,
                 out_dir=None, prefix: str = "", extra_meta: Optional[dict] = None) -> list[Path]:
    """Write one CSV per agent, the run metadata, and plots when requested."""
    out = preflight(out_dir if out_dir is not None else config.out_dir)
    written = []
    aggregates = {}
    for agent, runs in results.items():
        agg = aggregate(runs)
        aggregates[agent] = agg
        written.append(write_csv(agg, out / f"{prefix}{agent}.csv"))
        if agent == "ucrl":
            written.append(write_csv(aggregate(runs, "unconstrained"), out / f"{prefix}{agent}_vs_unconstrained.csv"))
    meta_path = out / f"{prefix}run_metadata.json"
    with open(meta_path, "w") as fh:
        json.dump(run_metadata(config, ref, results, extra_meta), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    written.append(meta_path)
    if config.emit_plots:
        from .plotting import plot_regret_curves
        written.extend(plot_regret_curves(aggregates, out, prefix=prefix, title=ref.model.name))
    return written


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def list_outputs(paths: Iterable[Path]) -> str:
    return "\n".join(str(p) for p in paths)

"""End-to-end experiment runner: config JSON in, run.csv and summary.json out.

Experiment config schema::

    {
      "model": {"gridworld": {...GridworldSpec...}}
             | {"path": "model.json"}
             | {"random": {"seed": 0, "n_states": 5, "n_actions": 2, "gamma": 0.9, "b": 1.0}},
      "cup": {...CupConfig fields...},
      "iters": 300,
      "seed": 1
    }

Relative model paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .cmdp import CmdpModel, atomic_write_text, load_model
from .envs import GridworldSpec, build_gridworld, random_cmdp
from .errors import ConfigurationError, CupError, NumericalError
from .optimizer import CupConfig, reports_to_csv, run_cup

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


@dataclass(frozen=True, eq=False)
class Experiment:
    model: CmdpModel
    config: CupConfig
    iters: int
    seed: int


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc


def model_from_spec(spec: dict, base_dir: Path) -> CmdpModel:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigurationError("model must be an object with exactly one of 'gridworld', 'path', 'random'")
    (kind, body), = spec.items()
    if kind == "gridworld":
        return build_gridworld(GridworldSpec.from_dict(body))
    if kind == "path":
        p = Path(body)
        return load_model(p if p.is_absolute() else base_dir / p)
    if kind == "random":
        try:
            return random_cmdp(**body)
        except TypeError as exc:
            raise ConfigurationError(f"model.random: {exc}") from exc
    raise ConfigurationError(f"unknown model kind {kind!r}")


def load_experiment(path) -> Experiment:
    path = Path(path)
    data = read_json(path)
    missing = [k for k in ("model", "cup", "iters") if k not in data]
    if missing:
        raise ConfigurationError(f"{path}: missing field(s) {', '.join(missing)}")
    unknown = sorted(set(data) - {"model", "cup", "iters", "seed"})
    if unknown:
        raise ConfigurationError(f"{path}: unknown field(s) {', '.join(unknown)}")
    iters = data["iters"]
    if not isinstance(iters, int) or iters < 0:
        raise ConfigurationError(f"iters must be a non-negative integer, got {iters!r}")
    return Experiment(
        model=model_from_spec(data["model"], path.parent),
        config=CupConfig.from_dict(data["cup"]),
        iters=iters,
        seed=int(data.get("seed", 0)),
    )


def output_paths(out) -> tuple[Path, Path, Path]:
    """(run.csv, summary.json, plot_data.csv) for a directory or an explicit .csv path."""
    out = Path(out)
    if out.suffix == ".csv":
        d = out.parent
        return out, d / "summary.json", d / "plot_data.csv"
    return out / "run.csv", out / "summary.json", out / "plot_data.csv"


def plot_data_csv(reports) -> str:
    """Tidy long format: iter,metric,value."""
    lines = ["iter,metric,value"]
    for r in reports:
        for name, v in (("j_reward_exact", r.j_reward), ("j_cost_exact", r.j_cost), ("nu", r.nu),
                        ("kl_step1", r.kl_step1), ("surrogate", r.surrogate_value)):
            lines.append(f"{r.iter},{name},{v:.10e}")
    return "\n".join(lines) + "\n"


def execute(exp: Experiment, out, emit_plot_data: bool = False) -> dict:
    t0 = time.perf_counter()
    _, reports = run_cup(exp.model, exp.config, exp.iters, exp.seed)
    wall = time.perf_counter() - t0
    csv_path, summary_path, plot_path = output_paths(out)
    atomic_write_text(csv_path, reports_to_csv(reports))
    first, last = reports[0], reports[-1]
    summary = {
        "seed": exp.seed,
        "iters": exp.iters,
        "cost_limit": exp.model.cost_limit,
        "initial_j_reward": first.j_reward,
        "initial_j_cost": first.j_cost,
        "final_j_reward": last.j_reward,
        "final_j_cost": last.j_cost,
        "final_nu": last.nu,
        "feasible": bool(last.feasible),
        "wall_time_s": wall,
        "config": exp.config.to_dict(),
    }
    atomic_write_text(summary_path, json.dumps(summary, indent=2) + "\n")
    if emit_plot_data:
        atomic_write_text(plot_path, plot_data_csv(reports))
    return summary


def run_experiment(config_path, out=".", seed: Optional[int] = None, iters: Optional[int] = None,
                   overrides: Optional[dict] = None, emit_plot_data: bool = False) -> int:
    """Run one experiment and return a process exit code (0 ok, 2 bad config or I/O error, 3 numerical failure)."""
    try:
        exp = load_experiment(config_path)
        exp = apply_overrides(exp, seed, iters, overrides)
        execute(exp, out, emit_plot_data)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def apply_overrides(exp: Experiment, seed=None, iters=None, overrides=None) -> Experiment:
    config = exp.config
    if overrides:
        config = CupConfig.from_dict({**config.to_dict(), **overrides})
    return Experiment(
        exp.model, config,
        exp.iters if iters is None else int(iters),
        exp.seed if seed is None else int(seed),
    )

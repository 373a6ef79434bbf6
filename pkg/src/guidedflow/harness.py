"""Experiment orchestration: delay sweeps, grid searches, persistence.

Every (method x delay x variant x seed) cell runs one closed-loop episode
with replan step s = max(d, 1).  Seeds are derived from (seed_base, delay,
variant, episode index) only, so all methods consume identical environment
and denoising noise streams and comparisons are paired.

Outputs are a one-row-per-episode CSV (fixed header) plus a JSON summary
holding per-method delay-1-5 means of all six metrics, percentage deltas vs
the rtc row, and a worst-case block (per-variant delay means, maximum across
variants).  Delay-0 rows are recorded but excluded from aggregates: with
replanning every step there is no intra-chunk switching to measure.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .chunking import DEFAULT_MASK_DECAY, ChunkExecutor
from .envs import TaskVariant, default_variants, make_env, make_field
from .errors import ConfigError
from .guidance import GuidanceConfig, GuidanceMethod
from .metrics import aggregate_weighted, episode_metrics, worst_case

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "SweepResult",
    "load_config",
    "run_cell_episode",
    "run_sweep",
    "summarize",
    "grid_search_sigma",
    "grid_search_rho",
    "write_rows",
    "read_rows",
    "ROW_HEADER",
    "SIGMA_GRID_HEADER",
    "RHO_GRID_HEADER",
    "DEFAULT_SIGMA_GRID",
    "DEFAULT_RHO_GRID",
]

ROW_HEADER = [
    "method", "delay", "suite", "seed", "success",
    "env_steps", "l2_mean", "l2_max", "max_acc", "max_jerk",
]
SIGMA_GRID_HEADER = ["sigma_d", "success", "steps", "l2_m", "l2_M", "acc", "jerk"]
RHO_GRID_HEADER = ["rho", "success", "steps", "l2_m", "l2_M", "acc", "jerk"]
DEFAULT_SIGMA_GRID = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_RHO_GRID = (0.10, 0.25, 0.50, 0.75, 1.00)

_METHOD_NAMES = tuple(m.value for m in GuidanceMethod)
_VARIANT_REGISTRY = {v.name: v for v in default_variants()}

SMOOTHNESS_METRICS = ("l2_mean", "l2_max", "max_acc", "max_jerk")
ALL_METRICS = ("success", "env_steps") + SMOOTHNESS_METRICS


@dataclass
class ExperimentConfig:
    """Everything one benchmark run depends on; all fields are file/flag addressable."""

    methods: tuple[str, ...] = _METHOD_NAMES
    delays: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    episodes_per_cell: int = 50
    seed_base: int = 0
    # guidance
    sigma_d: float = 0.4
    rho: float = 2.0
    beta: Optional[float] = None  # None -> n_steps, the protocol's beta = n rule
    n_steps: int = 10
    epsilon: float = 1e-8
    guide_first_step: bool = False
    mask_decay: float = DEFAULT_MASK_DECAY
    # environment and oracle policy
    horizon: int = 10
    max_steps: int = 60
    goal_tolerance: float = 0.15
    dynamics_gain: float = 0.1
    action_noise_std: float = 0.02
    sigma_cond: float = 0.4
    ctrl_frac: float = 0.35
    clearance: float = 0.04
    variants: tuple[tuple[str, int], ...] = (("unimodal", 1), ("bimodal", 9))
    output_dir: str = "results"
    overrun_fail_fraction: float = 0.25

    def __post_init__(self) -> None:
        self.methods = tuple(str(m).lower() for m in self.methods)
        for m in self.methods:
            if m not in _METHOD_NAMES:
                raise ConfigError(f"unknown method {m!r}; choose from {_METHOD_NAMES}")
        if len(self.methods) == 0:
            raise ConfigError("at least one method is required")
        self.delays = tuple(int(d) for d in self.delays)
        for d in self.delays:
            if not (0 <= d < self.horizon):
                raise ConfigError(f"delay {d} must satisfy 0 <= d < horizon={self.horizon}")
        if self.episodes_per_cell < 1:
            raise ConfigError("episodes_per_cell must be >= 1")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("beta must be positive when set")
        if len(self.variants) == 0:
            raise ConfigError("at least one variant is required")
        names = [v[0] for v in self.variants]
        if len(set(names)) != len(names):
            raise ConfigError("variant names must be unique")
        for name, weight in self.variants:
            if name not in _VARIANT_REGISTRY:
                raise ConfigError(
                    f"unknown variant {name!r}; choose from {sorted(_VARIANT_REGISTRY)}"
                )
            if int(weight) < 1:
                raise ConfigError("variant weights must be >= 1")
        self.variants = tuple((str(n), int(w)) for n, w in self.variants)

    @property
    def resolved_beta(self) -> float:
        return float(self.n_steps) if self.beta is None else float(self.beta)

    def guidance_for(self, method: str) -> GuidanceConfig:
        return GuidanceConfig(
            method=GuidanceMethod(method),
            sigma_d=self.sigma_d,
            rho=self.rho,
            beta=self.resolved_beta,
            n_steps=self.n_steps,
            epsilon=self.epsilon,
            guide_first_step=self.guide_first_step,
        )

    def variant_objects(self) -> list[tuple[TaskVariant, int]]:
        out = []
        for name, weight in self.variants:
            base = _VARIANT_REGISTRY[name]
            out.append((replace(base, weight=weight), weight))
        return out


@dataclass
class ResultRow:
    method: str
    delay: int
    suite: str
    seed: int
    success: bool
    env_steps: int
    l2_mean: float
    l2_max: float
    max_acc: float
    max_jerk: float

    @property
    def excluded_from_aggregate(self) -> bool:
        # Delay 0 has no intra-chunk switching; its L2 numbers are recorded
        # but never aggregated.
        return self.delay == 0

    def sort_key(self):
        return (self.method, self.delay, self.suite, self.seed)


@dataclass
class SweepResult:
    rows: list[ResultRow]
    summary: dict
    overrun_count: int
    rows_path: Optional[Path] = None
    summary_path: Optional[Path] = None


def _episode_seeds(config: ExperimentConfig, delay: int, variant_index: int, episode: int):
    # Method-independent by construction: paired comparisons share noise.
    root = np.random.SeedSequence(
        entropy=(int(config.seed_base), int(delay), int(variant_index), int(episode))
    )
    env_seed, noise_seed = root.spawn(2)
    return np.random.default_rng(env_seed), np.random.default_rng(noise_seed)


def run_cell_episode(
    config: ExperimentConfig,
    method: str,
    delay: int,
    variant: TaskVariant,
    variant_index: int,
    episode: int,
    replan_every: Optional[int] = None,
    record_requests: bool = False,
):
    """Run one episode of one cell; returns (ResultRow, EpisodeTrace)."""
    env_rng, noise_rng = _episode_seeds(config, delay, variant_index, episode)
    env = make_env(
        variant,
        rng=env_rng,
        max_steps=config.max_steps,
        goal_tolerance=config.goal_tolerance,
        dynamics_gain=config.dynamics_gain,
        action_noise_std=config.action_noise_std,
    )
    field_ = make_field(
        variant,
        horizon=config.horizon,
        sigma_cond=config.sigma_cond,
        gain=config.dynamics_gain,
        ctrl_frac=config.ctrl_frac,
        clearance=config.clearance,
    )
    executor = ChunkExecutor(
        env,
        field_,
        config.guidance_for(method),
        delay=delay,
        horizon=config.horizon,
        replan_every=replan_every,
        mask_decay=config.mask_decay,
        rng=noise_rng,
        record_requests=record_requests,
    )
    trace = executor.run()
    m = episode_metrics(trace)
    row = ResultRow(
        method=method,
        delay=delay,
        suite=variant.name,
        seed=episode,
        success=m.success,
        env_steps=m.env_steps,
        l2_mean=m.l2_mean,
        l2_max=m.l2_max,
        max_acc=m.max_acc,
        max_jerk=m.max_jerk,
    )
    return row, trace


def run_sweep(config: ExperimentConfig, write: bool = True) -> SweepResult:
    """Run the full delay-sweep protocol and (optionally) persist results."""
    out_dir = Path(config.output_dir)
    if write:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            probe = out_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as err:
            raise OSError(f"output directory {out_dir} is not writable: {err}") from err
    rows: list[ResultRow] = []
    overruns = 0
    variant_objs = config.variant_objects()
    for method in config.methods:
        for delay in config.delays:
            for v_index, (variant, _) in enumerate(variant_objs):
                for episode in range(config.episodes_per_cell):
                    row, trace = run_cell_episode(
                        config, method, delay, variant, v_index, episode
                    )
                    if trace.schedule_overrun:
                        overruns += 1
                    rows.append(row)
    rows.sort(key=ResultRow.sort_key)
    summary = summarize(rows, dict(config.variants))
    rows_path = summary_path = None
    if write:
        rows_path = out_dir / "rows.csv"
        summary_path = out_dir / "summary.json"
        write_rows(rows, rows_path)
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return SweepResult(rows, summary, overruns, rows_path, summary_path)


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def _cell_means(rows: Sequence[ResultRow]) -> dict:
    """Per-cell metric means; env_steps averages successful episodes only."""
    succ_steps = [r.env_steps for r in rows if r.success]
    return {
        "success": _mean([1.0 if r.success else 0.0 for r in rows]),
        "env_steps": _mean(succ_steps),
        "l2_mean": _mean([r.l2_mean for r in rows]),
        "l2_max": _mean([r.l2_max for r in rows]),
        "max_acc": _mean([r.max_acc for r in rows]),
        "max_jerk": _mean([r.max_jerk for r in rows]),
    }


def _suite_delay_means(rows: Sequence[ResultRow], suite: str, delays: Sequence[int]) -> dict:
    """Arithmetic mean over delays of per-delay cell means for one suite."""
    per_delay = [
        _cell_means([r for r in rows if r.suite == suite and r.delay == d]) for d in delays
    ]
    out = {}
    for metric in ALL_METRICS:
        vals = [c[metric] for c in per_delay if not math.isnan(c[metric])]
        out[metric] = _mean(vals)
    return out


def _clean(x: float) -> Optional[float]:
    return None if (isinstance(x, float) and math.isnan(x)) else x


def summarize(rows: Sequence[ResultRow], variant_weights: dict[str, int]) -> dict:
    """Per-method delay-1-5 aggregate, vs-rtc deltas, and worst-case block."""
    if len(rows) == 0:
        raise ConfigError("summarize requires at least one result row")
    methods = sorted({r.method for r in rows})
    agg_delays = sorted({r.delay for r in rows if r.delay != 0})
    suites = sorted({r.suite for r in rows})
    for s in suites:
        if s not in variant_weights:
            raise ConfigError(f"no weight given for suite {s!r}")
    summary: dict = {
        "aggregated_delays": agg_delays,
        "suite_weights": {s: int(variant_weights[s]) for s in suites},
        "methods": {},
        "worst_case": {},
        "per_delay": {},
    }
    for method in methods:
        m_rows = [r for r in rows if r.method == method]
        per_suite = {s: _suite_delay_means(m_rows, s, agg_delays) for s in suites}
        method_block = {}
        for metric in ALL_METRICS:
            pairs = [
                (variant_weights[s], per_suite[s][metric])
                for s in suites
                if not math.isnan(per_suite[s][metric])
            ]
            method_block[metric] = _clean(aggregate_weighted(pairs)) if pairs else None
        summary["methods"][method] = method_block
        summary["worst_case"][method] = {
            f"worst_{metric}": _clean(
                worst_case(
                    [per_suite[s][metric] for s in suites if not math.isnan(per_suite[s][metric])]
                )
            )
            if any(not math.isnan(per_suite[s][metric]) for s in suites)
            else None
            for metric in SMOOTHNESS_METRICS
        }
        per_delay_block = {}
        for d in agg_delays:
            pairs_by_metric = {}
            for metric in ALL_METRICS:
                cells = {
                    s: _cell_means([r for r in m_rows if r.suite == s and r.delay == d])
                    for s in suites
                }
                pairs = [
                    (variant_weights[s], cells[s][metric])
                    for s in suites
                    if not math.isnan(cells[s][metric])
                ]
                pairs_by_metric[metric] = _clean(aggregate_weighted(pairs)) if pairs else None
            per_delay_block[str(d)] = pairs_by_metric
        summary["per_delay"][method] = per_delay_block
    if "rtc" in summary["methods"]:
        deltas = {}
        rtc_block = summary["methods"]["rtc"]
        for method in methods:
            if method == "rtc":
                continue
            block = {}
            for metric in ALL_METRICS:
                base, val = rtc_block[metric], summary["methods"][method][metric]
                if base in (None, 0) or val is None:
                    block[metric] = None
                else:
                    block[metric] = 100.0 * (val - base) / base
            deltas[method] = block
        summary["vs_rtc"] = deltas
    else:
        warnings.warn("no rtc rows present; vs-rtc delta block omitted", stacklevel=2)
    return summary


def _single_delay_aggregate(
    rows: Sequence[ResultRow], variant_weights: dict[str, int], delay: int
) -> dict:
    suites = sorted({r.suite for r in rows})
    out = {}
    for metric in ALL_METRICS:
        pairs = []
        for s in suites:
            cell = _cell_means([r for r in rows if r.suite == s and r.delay == delay])
            if not math.isnan(cell[metric]):
                pairs.append((variant_weights[s], cell[metric]))
        out[metric] = aggregate_weighted(pairs) if pairs else math.nan
    return out


def _run_grid_cells(
    config: ExperimentConfig, method: str, delay: int
) -> list[ResultRow]:
    rows = []
    for v_index, (variant, _) in enumerate(config.variant_objects()):
        for episode in range(config.episodes_per_cell):
            row, _ = run_cell_episode(config, method, delay, variant, v_index, episode)
            rows.append(row)
    rows.sort(key=ResultRow.sort_key)
    return rows


def grid_search_sigma(
    config: ExperimentConfig,
    grid: Sequence[float] = DEFAULT_SIGMA_GRID,
    delay: int = 3,
    write: bool = True,
) -> list[dict]:
    """Grid search over sigma_d with the prior-corrected weight alone (no OTR)."""
    if len(grid) == 0:
        raise ConfigError("sigma_d grid must be nonempty")
    weights = dict(config.variants)
    table = []
    for sigma in grid:
        cfg = replace(config, sigma_d=float(sigma))
        rows = _run_grid_cells(cfg, "pc", delay)
        agg = _single_delay_aggregate(rows, weights, delay)
        table.append(_grid_row("sigma_d", float(sigma), agg))
    if write:
        _write_table(table, SIGMA_GRID_HEADER, Path(config.output_dir) / "grid_sigma.csv")
    return table


def grid_search_rho(
    config: ExperimentConfig,
    grid: Sequence[float] = DEFAULT_RHO_GRID,
    delay: int = 3,
    write: bool = True,
) -> list[dict]:
    """Grid search over the trust-region radius ratio rho with the full method."""
    if len(grid) == 0:
        raise ConfigError("rho grid must be nonempty")
    weights = dict(config.variants)
    table = []
    for rho in grid:
        cfg = replace(config, rho=float(rho))
        rows = _run_grid_cells(cfg, "potr", delay)
        agg = _single_delay_aggregate(rows, weights, delay)
        table.append(_grid_row("rho", float(rho), agg))
    if write:
        _write_table(table, RHO_GRID_HEADER, Path(config.output_dir) / "grid_rho.csv")
    return table


def _grid_row(param_name: str, param: float, agg: dict) -> dict:
    return {
        param_name: param,
        "success": agg["success"],
        "steps": agg["env_steps"],
        "l2_m": agg["l2_mean"],
        "l2_M": agg["l2_max"],
        "acc": agg["max_acc"],
        "jerk": agg["max_jerk"],
    }


def _write_table(table: list[dict], header: list[str], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table:
            writer.writerow([repr(float(row[h])) for h in header])


def write_rows(rows: Sequence[ResultRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROW_HEADER)
        for r in sorted(rows, key=ResultRow.sort_key):
            writer.writerow(
                [
                    r.method,
                    r.delay,
                    r.suite,
                    r.seed,
                    int(r.success),
                    r.env_steps,
                    repr(r.l2_mean),
                    repr(r.l2_max),
                    repr(r.max_acc),
                    repr(r.max_jerk),
                ]
            )


def read_rows(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ROW_HEADER:
            raise ConfigError(f"unexpected row-file header {header}")
        for rec in reader:
            rows.append(
                ResultRow(
                    method=rec[0],
                    delay=int(rec[1]),
                    suite=rec[2],
                    seed=int(rec[3]),
                    success=bool(int(rec[4])),
                    env_steps=int(rec[5]),
                    l2_mean=float(rec[6]),
                    l2_max=float(rec[7]),
                    max_acc=float(rec[8]),
                    max_jerk=float(rec[9]),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Plain-text key=value configuration files


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {text!r}")


def _parse_methods(text: str) -> tuple[str, ...]:
    return tuple(tok.strip().lower() for tok in text.split(",") if tok.strip())


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as err:
        raise ConfigError(f"cannot parse integer list from {text!r}") from err


def _parse_variants(text: str) -> tuple[tuple[str, int], ...]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" in tok:
            name, weight = tok.split(":", 1)
            out.append((name.strip(), int(weight)))
        else:
            out.append((tok, 1))
    return tuple(out)


def _parse_float(text: str) -> float:
    try:
        return float(text)  # accepts 'inf'
    except ValueError as err:
        raise ConfigError(f"cannot parse float from {text!r}") from err


def _parse_optional_float(text: str) -> Optional[float]:
    if text.strip().lower() in ("none", ""):
        return None
    return _parse_float(text)


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as err:
        raise ConfigError(f"cannot parse integer from {text!r}") from err


_FIELD_PARSERS = {
    "methods": _parse_methods,
    "delays": _parse_ints,
    "episodes_per_cell": _parse_int,
    "seed_base": _parse_int,
    "sigma_d": _parse_float,
    "rho": _parse_float,
    "beta": _parse_optional_float,
    "n_steps": _parse_int,
    "epsilon": _parse_float,
    "guide_first_step": _parse_bool,
    "mask_decay": _parse_float,
    "horizon": _parse_int,
    "max_steps": _parse_int,
    "goal_tolerance": _parse_float,
    "dynamics_gain": _parse_float,
    "action_noise_std": _parse_float,
    "sigma_cond": _parse_float,
    "ctrl_frac": _parse_float,
    "clearance": _parse_float,
    "variants": _parse_variants,
    "output_dir": str,
    "overrun_fail_fraction": _parse_float,
}

assert set(_FIELD_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a key = value config file; unknown keys are errors, '#' comments ignored."""
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            values[key] = _FIELD_PARSERS[key](value)
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in _FIELD_PARSERS:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _FIELD_PARSERS[key](value) if isinstance(value, str) else value
    try:
        return ExperimentConfig(**values)
    except TypeError as err:
        raise ConfigError(str(err)) from err

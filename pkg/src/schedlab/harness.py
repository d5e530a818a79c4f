"""Scenario execution shared by the CLI and the acceptance suite.

A scenario couples one schedule, one sampler configuration and a model
triple (unconditional / source / optional target) with an explicit seed
list.  Round-trip runs invert a data draw and reconstruct it under the
source condition; edit runs additionally regenerate under the target
condition, both free-running and pinned to the stored inversion path.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Sequence

import numpy as np

from .calculus import logsnr_linearity_fit
from .errors import ValidationError
from .metrics import RunReport, edit_drift, mse, psnr
from .models import AnalyticModel, data_range, sample_x0
from .sampler import (
    SamplerConfig,
    Trajectory,
    pinned_reconstruction,
    run_inversion,
    run_reverse,
    time_grid,
)
from .schedules import ScheduleSpec, ScheduleTable, build_table


@dataclasses.dataclass(frozen=True)
class ScenarioConfig:
    name: str
    schedule: ScheduleSpec
    sampler: SamplerConfig
    uncond: AnalyticModel
    source: AnalyticModel
    target: AnalyticModel | None
    seeds: tuple[int, ...]
    edit_direction: tuple[float, ...] | None = None
    psnr_max_val: float | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("scenario needs a non-empty name")
        if not self.seeds:
            raise ValidationError("scenario needs at least one seed")
        if self.psnr_max_val is not None and not self.psnr_max_val > 0.0:
            raise ValidationError("psnr_max_val must be > 0")


def scenario_table(scenario: ScenarioConfig) -> ScheduleTable:
    return build_table(
        scenario.schedule, time_grid(scenario.sampler, scenario.schedule.T)
    )


def scenario_max_val(scenario: ScenarioConfig) -> float:
    """PSNR max value: explicit override, else the testbed's data range
    scaled by the input scale."""
    if scenario.psnr_max_val is not None:
        return scenario.psnr_max_val
    return scenario.sampler.input_scale_b * data_range(scenario.source)


def derive_edit_direction(scenario: ScenarioConfig) -> np.ndarray:
    if scenario.edit_direction is not None:
        return np.asarray(scenario.edit_direction, dtype=float)
    if scenario.target is None:
        raise ValidationError("edit run needs a target model")

    def mixture_mean(model: AnalyticModel) -> np.ndarray:
        w = np.array([c.weight for c in model.components])
        mu = np.array([c.mean for c in model.components])
        return w @ mu

    d = mixture_mean(scenario.target) - mixture_mean(scenario.source)
    if np.linalg.norm(d) == 0.0:
        raise ValidationError(
            "edit direction cannot be derived (equal model means); set it explicitly"
        )
    return d


def local_errors(inversion: Trajectory, reverse: Trajectory) -> list[float]:
    """Per-grid-point distance between the two trajectories, ordered by t."""
    n = inversion.states.shape[0] - 1
    return [
        float(np.linalg.norm(inversion.states[g + 1] - reverse.states[n - 1 - g]))
        for g in range(n)
    ]


@dataclasses.dataclass
class RoundtripResult:
    seed: int
    roundtrip_mse: float
    roundtrip_psnr: float
    local_errors: list[float]
    inversion: Trajectory
    reverse: Trajectory


def roundtrip_once(
    scenario: ScenarioConfig, table: ScheduleTable, seed: int
) -> RoundtripResult:
    x0 = sample_x0(scenario.source, seed, 1)[0]
    pair = (scenario.uncond, scenario.source)
    inv = run_inversion(pair, x0, table, scenario.sampler, seed)
    rev = run_reverse(pair, inv.states[-1], table, scenario.sampler, seed)
    max_val = scenario_max_val(scenario)
    m = mse(inv.states[0], rev.states[-1])
    return RoundtripResult(
        seed=seed,
        roundtrip_mse=m,
        roundtrip_psnr=psnr(inv.states[0], rev.states[-1], max_val),
        local_errors=local_errors(inv, rev),
        inversion=inv,
        reverse=rev,
    )


@dataclasses.dataclass
class EditResult:
    seed: int
    roundtrip_mse: float
    edit_drift: float
    pinned_edit_drift: float
    local_errors: list[float]
    edited: np.ndarray
    edited_pinned: np.ndarray
    inversion: Trajectory


def edit_once(
    scenario: ScenarioConfig,
    table: ScheduleTable,
    seed: int,
    direction: np.ndarray,
) -> EditResult:
    if scenario.target is None:
        raise ValidationError("edit run needs a target model")
    x0 = sample_x0(scenario.source, seed, 1)[0]
    src_pair = (scenario.uncond, scenario.source)
    tgt_pair = (scenario.uncond, scenario.target)
    inv = run_inversion(src_pair, x0, table, scenario.sampler, seed)
    recon = run_reverse(src_pair, inv.states[-1], table, scenario.sampler, seed)
    edited = run_reverse(tgt_pair, inv.states[-1], table, scenario.sampler, seed)
    pinned = pinned_reconstruction(
        inv, src_pair, tgt_pair, table, scenario.sampler, seed
    )
    return EditResult(
        seed=seed,
        roundtrip_mse=mse(inv.states[0], recon.states[-1]),
        edit_drift=edit_drift(inv.states[0], edited.states[-1], direction),
        pinned_edit_drift=edit_drift(inv.states[0], pinned.states[-1], direction),
        local_errors=local_errors(inv, recon),
        edited=edited.states[-1],
        edited_pinned=pinned.states[-1],
        inversion=inv,
    )


def _mean_psnr(mean_mse: float, max_val: float) -> float:
    if mean_mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mean_mse)


def _base_report(
    scenario: ScenarioConfig, table: ScheduleTable, wall: float
) -> dict:
    slope, intercept, r2 = logsnr_linearity_fit(table)
    del slope, intercept
    return {
        "scenario_id": scenario.name,
        "schedule_family": scenario.schedule.family.value,
        "n_steps": scenario.sampler.n_steps,
        "terminal_logsnr": table.logsnr[-1],
        "linearity_r2": r2,
        "wall_time_seconds": wall,
        "psnr_max_val": scenario_max_val(scenario),
    }


def run_roundtrip_scenario(
    scenario: ScenarioConfig,
) -> tuple[RunReport, list[RoundtripResult]]:
    start = time.perf_counter()
    table = scenario_table(scenario)
    results = [roundtrip_once(scenario, table, s) for s in scenario.seeds]
    wall = time.perf_counter() - start

    mean_mse = float(np.mean([r.roundtrip_mse for r in results]))
    mean_local = np.mean([r.local_errors for r in results], axis=0)
    report = RunReport(
        local_errors=tuple(float(v) for v in mean_local),
        roundtrip_mse=mean_mse,
        roundtrip_psnr=_mean_psnr(mean_mse, scenario_max_val(scenario)),
        edit_drift=None,
        start_clamped=results[0].inversion.start_clamped,
        **_base_report(scenario, table, wall),
    )
    return report, results


def run_edit_scenario(
    scenario: ScenarioConfig,
) -> tuple[RunReport, list[EditResult]]:
    start = time.perf_counter()
    table = scenario_table(scenario)
    direction = derive_edit_direction(scenario)
    results = [edit_once(scenario, table, s, direction) for s in scenario.seeds]
    wall = time.perf_counter() - start

    mean_mse = float(np.mean([r.roundtrip_mse for r in results]))
    mean_local = np.mean([r.local_errors for r in results], axis=0)
    report = RunReport(
        local_errors=tuple(float(v) for v in mean_local),
        roundtrip_mse=mean_mse,
        roundtrip_psnr=_mean_psnr(mean_mse, scenario_max_val(scenario)),
        edit_drift=float(np.mean([r.edit_drift for r in results])),
        pinned_edit_drift=float(np.mean([r.pinned_edit_drift for r in results])),
        start_clamped=results[0].inversion.start_clamped,
        **_base_report(scenario, table, wall),
    )
    return report, results


def sign_test_pvalue(wins: int, trials: int) -> float:
    """One-sided binomial tail P[Bin(trials, 1/2) >= wins]."""
    if not 0 <= wins <= trials:
        raise ValidationError(f"need 0 <= wins <= trials, got {wins}/{trials}")
    total = sum(math.comb(trials, k) for k in range(wins, trials + 1))
    return total / 2.0**trials


def paired_comparison(
    values_a: Sequence[float], values_b: Sequence[float]
) -> tuple[int, float]:
    """Wins of a < b per pair (ties dropped) and the sign-test p-value."""
    if len(values_a) != len(values_b):
        raise ValidationError("paired comparison needs equal-length sequences")
    wins = sum(1 for a, b in zip(values_a, values_b) if a < b)
    trials = sum(1 for a, b in zip(values_a, values_b) if a != b)
    return wins, sign_test_pvalue(wins, trials)

"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
"""

import json
import math
import time

import numpy as np
import pytest

from schedlab import (
    Family,
    SamplerConfig,
    ScheduleSpec,
    alpha_bar_continuous,
    build_table,
    convergence_order_fit,
    d_alpha_bar_dt,
    ddim_invert_step,
    ddim_reverse_step,
    dx_dt_coefficients,
    eval_alpha_bar,
    logsnr_linearity_fit,
    paired_comparison,
    pinned_reconstruction,
    run_inversion,
    sample_x0,
    scaled_linear_beta,
    time_grid,
)
from schedlab.cli import main
from schedlab.harness import ScenarioConfig, run_edit_scenario, run_roundtrip_scenario
from schedlab.presets import logistic_spec, mixture_testbed
from schedlab.schedules import integer_grid

SINGULAR_FAMILIES = (Family.SCALED_LINEAR, Family.COSINE, Family.SIGMOID)
SWEEP_N = (25, 50, 100, 200, 400)


def finish(num: int, start: float, limit: float, detail: str = "") -> None:
    elapsed = time.perf_counter() - start
    print(f"[acceptance] criterion {num}: PASS in {elapsed:.2f}s (limit {limit:g}s)"
          + (f" -- {detail}" if detail else ""))
    assert elapsed < limit, f"criterion {num} runtime {elapsed:.2f}s exceeds {limit}s"


def mixture_scenario(family: Family, n_steps: int, seeds, name: str) -> ScenarioConfig:
    bed = mixture_testbed(dim=8)
    return ScenarioConfig(
        name=name,
        schedule=ScheduleSpec(family=family, T=1000),
        sampler=SamplerConfig(n_steps=n_steps, eta=0.0),
        uncond=bed.uncond,
        source=bed.source,
        target=bed.target,
        seeds=tuple(seeds),
    )


def test_criterion_1_schedule_correctness():
    start = time.perf_counter()
    for T in (100, 1000):
        spec = ScheduleSpec(family=Family.SCALED_LINEAR, T=T)
        assert abs(scaled_linear_beta(spec, 0) - 0.1 / T) <= 1e-12
        assert abs(scaled_linear_beta(spec, T - 1) - 20.0 / T) <= 1e-12
        cosine = ScheduleSpec(family=Family.COSINE, T=T)
        assert abs(eval_alpha_bar(cosine, 0.0) - 1.0) <= 1e-12
        table = build_table(cosine, integer_grid(T - 1))
        assert all(b <= 0.999 for b in table.beta)
    logistic = ScheduleSpec(family=Family.LOGISTIC, T=100)
    assert abs(eval_alpha_bar(logistic, logistic.t0) - 0.5) <= 1e-12
    finish(1, start, 1.0, "beta endpoints, cosine clamp, logistic midpoint")


def test_criterion_2_derivative_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    T = 100
    h = 1e-6 * T
    worst = 0.0
    for family in Family:
        spec = ScheduleSpec(family=family, T=T)
        for t in rng.uniform(0.01 * T, 0.99 * T, 1000):
            analytic = d_alpha_bar_dt(spec, t)
            fd = (
                alpha_bar_continuous(spec, t + h) - alpha_bar_continuous(spec, t - h)
            ) / (2.0 * h)
            rel = abs(analytic - fd) / abs(fd)
            worst = max(worst, rel)
            assert rel <= 1e-6, (family, t, rel)
    finish(2, start, 5.0, f"worst relative error {worst:.2e}")


def test_criterion_3_singularity_dichotomy():
    start = time.perf_counter()
    for family in SINGULAR_FAMILIES:
        spec = ScheduleSpec(family=family, T=100)
        assert not dx_dt_coefficients(spec, 0.0).finite, family
        ratio = abs(dx_dt_coefficients(spec, 1e-6).coeff_eps) / abs(
            dx_dt_coefficients(spec, 1e-2).coeff_eps
        )
        assert ratio > 10.0, (family, ratio)

    spec = ScheduleSpec(family=Family.LOGISTIC, T=100)
    c = dx_dt_coefficients(spec, 0.0)
    assert c.finite
    h = 1e-6 * spec.T
    f0 = alpha_bar_continuous(spec, 0.0)
    da_fd = (
        -3.0 * f0
        + 4.0 * alpha_bar_continuous(spec, h)
        - alpha_bar_continuous(spec, 2.0 * h)
    ) / (2.0 * h)
    assert c.coeff_x0 == pytest.approx(da_fd / (2.0 * math.sqrt(f0)), rel=1e-6)
    assert c.coeff_eps == pytest.approx(-da_fd / (2.0 * math.sqrt(1.0 - f0)), rel=1e-6)
    finish(3, start, 1.0, "divergence ratio > 10 for singular families; logistic finite")


def test_criterion_4_exact_inverse_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10_000):
        a_prev, a_t = rng.uniform(0.001, 0.999, 2)
        x = rng.standard_normal(4)
        eps = rng.standard_normal(4)
        x_t = ddim_invert_step(x, eps, a_prev, a_t)
        back = ddim_reverse_step(x_t, eps, a_t, a_prev, eta=0.0)
        worst = max(worst, float(np.max(np.abs(back - x))))
    assert worst <= 1e-10
    finish(4, start, 5.0, f"worst round-trip deviation {worst:.2e} over 1e4 draws")


def test_criterion_5_roundtrip_convergence_order():
    start = time.perf_counter()
    seeds = range(16)
    details = []
    for family in Family:
        points = []
        for n in SWEEP_N:
            scenario = mixture_scenario(family, n, seeds, f"c5-{family.value}-{n}")
            report, _ = run_roundtrip_scenario(scenario)
            points.append((n, report.roundtrip_mse))
        order, r2 = convergence_order_fit(points)
        assert order >= 0.8, (family, order)
        assert r2 >= 0.95, (family, r2)
        details.append(f"{family.value}: order {order:.2f}, r2 {r2:.4f}")
    finish(5, start, 60.0, "; ".join(details))


def test_criterion_6_schedule_effect_inequality():
    start = time.perf_counter()
    seeds = range(100)
    stats = {}
    for family in (Family.LOGISTIC, Family.SCALED_LINEAR):
        scenario = mixture_scenario(family, 50, seeds, f"c6-{family.value}")
        _, rt = run_roundtrip_scenario(scenario)
        _, ed = run_edit_scenario(scenario)
        stats[family] = (
            [r.roundtrip_mse for r in rt],
            [r.edit_drift for r in ed],
        )
    log_mse, log_drift = stats[Family.LOGISTIC]
    lin_mse, lin_drift = stats[Family.SCALED_LINEAR]

    assert np.mean(log_mse) < np.mean(lin_mse)
    assert np.mean(log_drift) < np.mean(lin_drift)
    wins_mse, p_mse = paired_comparison(log_mse, lin_mse)
    wins_drift, p_drift = paired_comparison(log_drift, lin_drift)
    assert p_mse < 0.01, (wins_mse, p_mse)
    assert p_drift < 0.01, (wins_drift, p_drift)
    finish(
        6,
        start,
        120.0,
        f"mse wins {wins_mse}/100 (p={p_mse:.2e}), drift wins {wins_drift}/100 (p={p_drift:.2e})",
    )


def test_criterion_7_logsnr_linearity():
    start = time.perf_counter()
    r2 = {}
    for family in (Family.LOGISTIC, Family.COSINE, Family.SCALED_LINEAR):
        spec = ScheduleSpec(family=family, T=100)
        table = build_table(spec, integer_grid(100))
        r2[family] = logsnr_linearity_fit(table)[2]
    assert r2[Family.LOGISTIC] > r2[Family.COSINE]
    assert r2[Family.LOGISTIC] > r2[Family.SCALED_LINEAR]
    finish(
        7,
        start,
        1.0,
        f"r2 logistic {r2[Family.LOGISTIC]:.6f} > cosine {r2[Family.COSINE]:.6f}, "
        f"scaled_linear {r2[Family.SCALED_LINEAR]:.6f}",
    )


def test_criterion_8_pinned_reconstruction():
    start = time.perf_counter()
    bed = mixture_testbed(dim=8)
    spec = logistic_spec(T=1000)
    cfg = SamplerConfig(n_steps=50)
    table = build_table(spec, time_grid(cfg, spec.T))
    src = (bed.uncond, bed.source)

    # source-condition pinning is exact by construction
    for seed in range(10):
        x0 = sample_x0(bed.source, seed, 1)[0]
        inv = run_inversion(src, x0, table, cfg, seed)
        pinned = pinned_reconstruction(inv, src, src, table, cfg, seed)
        assert float(np.max(np.abs(pinned.states[-1] - inv.states[0]))) <= 1e-9

    # target-condition pinning does not drift more than the free-running edit
    scenario = mixture_scenario(Family.LOGISTIC, 50, range(100), "c8")
    _, results = run_edit_scenario(scenario)
    mean_pinned = float(np.mean([r.pinned_edit_drift for r in results]))
    mean_unpinned = float(np.mean([r.edit_drift for r in results]))
    assert mean_pinned <= mean_unpinned
    finish(
        8,
        start,
        60.0,
        f"pinned drift {mean_pinned:.2e} <= unpinned {mean_unpinned:.2e}",
    )


def test_criterion_9_byte_identical_reruns(tmp_path):
    start = time.perf_counter()

    def config(payload, name):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(payload))
        return str(path)

    models = {
        "uncond": "mixture8.uncond",
        "source": "mixture8.source",
        "target": "mixture8.target",
    }
    configs = {
        "nsweep": (
            "sweep",
            config(
                {
                    "version": 1,
                    "name": "nsweep",
                    "schedule": {"family": "logistic", "T": 1000},
                    "sampler": {"n_steps": 50},
                    "models": models,
                    "seeds": list(range(4)),
                    "sweep": {
                        "axis": "n_steps",
                        "values": list(SWEEP_N),
                        "command": "roundtrip",
                    },
                },
                "nsweep",
            ),
            ("nsweep_sweep.csv", "nsweep_sweep_reports.json"),
        ),
        "edit": (
            "edit-sim",
            config(
                {
                    "version": 1,
                    "name": "edit",
                    "schedule": {"family": "logistic", "T": 1000},
                    "sampler": {"n_steps": 50},
                    "models": models,
                    "seeds": list(range(100)),
                },
                "edit",
            ),
            ("edit_edit.csv", "edit_report.json"),
        ),
        "sched": (
            "schedule-dump",
            config(
                {
                    "version": 1,
                    "name": "sched",
                    "schedule": {"family": "logistic", "T": 100},
                    "grid": {"start": 0, "stop": 100},
                },
                "sched",
            ),
            ("sched_schedule.csv",),
        ),
        "scan": (
            "singularity-scan",
            config(
                {
                    "version": 1,
                    "name": "scan",
                    "schedule": {"family": "scaled_linear", "T": 100},
                    "scan": {"t_min": 1e-6, "t_max": 1.0, "n": 64},
                },
                "scan",
            ),
            ("scan_scan.csv",),
        ),
    }

    checked = 0
    for command, cfg_path, artifacts in configs.values():
        out1 = tmp_path / f"run1_{command}"
        out2 = tmp_path / f"run2_{command}"
        assert main([command, "--config", cfg_path, "--out", str(out1)]) == 0
        assert main([command, "--config", cfg_path, "--out", str(out2)]) == 0
        for artifact in artifacts:
            b1 = (out1 / artifact).read_bytes()
            b2 = (out2 / artifact).read_bytes()
            assert b1 == b2, f"{artifact} differs between reruns"
            checked += 1
    finish(9, start, 120.0, f"{checked} artifacts byte-identical across reruns")

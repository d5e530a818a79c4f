"""Forward closed form, DDIM reverse/inversion steps, and trajectory loops.

Step algebra (all alphas are cumulative alpha_bar values):

    reverse  (t -> prev):  pred_x0 = (x_t - sqrt(1-a_t) eps) / sqrt(a_t)
                           x_prev  = sqrt(a_prev) pred_x0
                                     + sqrt(1 - a_prev - sigma^2) eps + sigma z
    inversion (prev -> t): x_t = sqrt(a_t/a_prev) x_prev
                                 + sqrt(a_t) (sqrt(1/a_t - 1) - sqrt(1/a_prev - 1)) eps

For a fixed eps the two updates are exact mutual inverses (eta = 0).  During
an inversion run the predictor is evaluated at the earlier state and earlier
time, which is the local linearization the deterministic inverse relies on.

Timestep grid convention: t_i = i*(T/N) + step_offset for i = 0..N-1 (with
T=1000, N=50, offset=1 the final step lands at 981).  Schedules whose
alpha_bar(0) is exactly 1 have no usable predictor at t=0; for those the
run anchors the clean state at the grid's first timestep instead
(``start_clamped``), and the reverse run mirrors that convention at its final
step.  The logistic family keeps alpha_bar(0) < 1, so both endpoints are
genuine steps there.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .calculus import d_alpha_bar_dt
from .errors import DomainError, ValidationError
from .models import AnalyticModel, data_variance, exact_eps, guided_eps
from .schedules import (
    ScheduleTable,
    alpha_bar_continuous,
    eval_alpha_bar,
    format_float,
)

ModelPair = tuple[AnalyticModel, AnalyticModel | None]

TRAJECTORY_MAGIC = b"SCHDTRAJ"


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    """Knobs for one inversion/reverse run.

    ``eta`` scales the DDPM posterior standard deviation (0 keeps the run
    deterministic).  ``w_invert``/``w_reverse`` are the guidance weights for
    the two directions.  ``input_scale_b`` multiplies the clean input;
    ``variance_normalize`` rescales predictor inputs to unit variance.
    """

    n_steps: int
    eta: float = 0.0
    step_offset: int = 1
    w_invert: float = 3.5
    w_reverse: float = 7.5
    input_scale_b: float = 1.0
    variance_normalize: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.n_steps, int) or self.n_steps < 1:
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps}")
        if self.eta < 0.0:
            raise ValidationError(f"eta must be >= 0, got {self.eta}")
        if not isinstance(self.step_offset, int) or self.step_offset < 0:
            raise ValidationError(f"step_offset must be an integer >= 0, got {self.step_offset}")
        if not self.input_scale_b > 0.0:
            raise ValidationError(f"input_scale_b must be > 0, got {self.input_scale_b}")


def time_grid(config: SamplerConfig, T: int) -> tuple[float, ...]:
    """Grid t_i = i*(T/N) + step_offset, i = 0..N-1; every t_i must be <= T."""
    if config.n_steps > T:
        raise ValidationError(f"n_steps={config.n_steps} exceeds T={T}")
    step = T / config.n_steps
    ts = tuple(i * step + config.step_offset for i in range(config.n_steps))
    if ts[-1] > T:
        raise ValidationError(
            f"grid exceeds T: last timestep {ts[-1]} > {T} (step_offset too large)"
        )
    return ts


@dataclasses.dataclass
class Trajectory:
    """Ordered (t, state, predicted noise) records of one run.

    Holds n_steps + 1 records including the t=0 anchor; timesteps increase
    for inversion runs and decrease for reverse runs.  ``alpha_bars`` are the
    per-record conventional noise levels (the anchor uses the clamped level
    when ``start_clamped``).
    """

    direction: str  # "inversion" | "reverse"
    timesteps: tuple[float, ...]
    alpha_bars: tuple[float, ...]
    states: np.ndarray  # (n_steps + 1, dim)
    eps_hats: np.ndarray  # (n_steps + 1, dim)
    config: SamplerConfig
    start_clamped: bool


# ---------------------------------------------------------------------------
# single steps

def forward_closed_form(
    x0: Sequence[float],
    eps: Sequence[float],
    alpha_bar: float,
    b: float = 1.0,
    normalize: bool = False,
    sigma0_sq: float = 1.0,
) -> np.ndarray:
    """x_t = sqrt(a) * b * x0 + sqrt(1-a) * eps, optionally variance-normalised.

    With ``normalize`` the result is divided by sqrt(a*b^2*sigma0_sq + 1-a),
    which restores unit variance when the data variance is sigma0_sq.
    """
    if not b > 0.0:
        raise ValidationError(f"input scale b must be > 0, got {b}")
    if not 0.0 < alpha_bar <= 1.0:
        raise DomainError(f"alpha_bar must be in (0, 1], got {alpha_bar}")
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValidationError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    x = math.sqrt(alpha_bar) * b * x0 + math.sqrt(1.0 - alpha_bar) * eps
    if normalize:
        x = x / math.sqrt(alpha_bar * b * b * sigma0_sq + 1.0 - alpha_bar)
    return x


def ddpm_sigma(alpha_bar_t: float, alpha_bar_prev: float) -> float:
    """Posterior std sqrt((1-a_prev)/(1-a_t)) * sqrt(1 - a_t/a_prev)."""
    return math.sqrt((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t)) * math.sqrt(
        1.0 - alpha_bar_t / alpha_bar_prev
    )


def ddim_reverse_step(
    x_t: Sequence[float],
    eps_hat: Sequence[float],
    alpha_bar_t: float,
    alpha_bar_prev: float,
    eta: float = 0.0,
    noise: Sequence[float] | None = None,
) -> np.ndarray:
    """One generation step from noise level a_t down to a_prev.

    ``eta`` spans the deterministic-to-DDPM family: sigma = eta * sigma_ddpm.
    a_prev may be exactly 1 at the final step (result collapses to pred_x0).
    """
    if not 0.0 < alpha_bar_t < 1.0:
        raise DomainError(f"alpha_bar_t must be in (0, 1), got {alpha_bar_t}")
    if not 0.0 < alpha_bar_prev <= 1.0:
        raise DomainError(f"alpha_bar_prev must be in (0, 1], got {alpha_bar_prev}")
    x_t = np.asarray(x_t, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)

    sigma = 0.0
    if eta > 0.0:
        if alpha_bar_prev < alpha_bar_t:
            raise DomainError("stochastic step needs alpha_bar_prev >= alpha_bar_t")
        sigma = eta * ddpm_sigma(alpha_bar_t, alpha_bar_prev)
    rad = 1.0 - alpha_bar_prev - sigma * sigma
    if rad < -1e-12:
        raise DomainError(
            f"eta={eta} invalid for this step pair: 1 - a_prev - sigma^2 = {rad}"
        )
    rad = max(rad, 0.0)

    pred_x0 = (x_t - math.sqrt(1.0 - alpha_bar_t) * eps_hat) / math.sqrt(alpha_bar_t)
    out = math.sqrt(alpha_bar_prev) * pred_x0 + math.sqrt(rad) * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ValidationError("eta > 0 requires a noise vector")
        out = out + sigma * np.asarray(noise, dtype=float)
    return out


def ddim_invert_step(
    x_prev: Sequence[float],
    eps_hat: Sequence[float],
    alpha_bar_prev: float,
    alpha_bar_t: float,
) -> np.ndarray:
    """One inversion step from noise level a_prev up to a_t.

    Exact algebraic inverse of the eta=0 reverse step when the same eps_hat
    is supplied.  a_prev may be exactly 1 at the first step.
    """
    if not 0.0 < alpha_bar_t < 1.0:
        raise DomainError(f"alpha_bar_t must be in (0, 1), got {alpha_bar_t}")
    if not 0.0 < alpha_bar_prev <= 1.0:
        raise DomainError(f"alpha_bar_prev must be in (0, 1], got {alpha_bar_prev}")
    x_prev = np.asarray(x_prev, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    scale = math.sqrt(alpha_bar_t / alpha_bar_prev)
    drift = math.sqrt(alpha_bar_t) * (
        math.sqrt(1.0 / alpha_bar_t - 1.0) - math.sqrt(1.0 / alpha_bar_prev - 1.0)
    )
    return scale * x_prev + drift * eps_hat


# ---------------------------------------------------------------------------
# trajectory runs

def _as_pair(models: AnalyticModel | ModelPair) -> ModelPair:
    if isinstance(models, AnalyticModel):
        return (models, None)
    uncond, cond = models
    return (uncond, cond)


def _predict(
    models: ModelPair,
    x: np.ndarray,
    alpha_bar: float,
    w: float,
    config: SamplerConfig,
    sigma0_sq: float,
) -> np.ndarray:
    uncond, cond = models
    if config.variance_normalize:
        b = config.input_scale_b
        x = x / math.sqrt(alpha_bar * b * b * sigma0_sq + 1.0 - alpha_bar)
    if cond is None:
        return exact_eps(uncond, x, alpha_bar)
    return guided_eps(uncond, cond, x, alpha_bar, w)


def _grid_and_alphas(
    table: ScheduleTable, config: SamplerConfig
) -> tuple[tuple[float, ...], tuple[float, ...], float, bool]:
    grid = time_grid(config, table.spec.T)
    if grid != table.timesteps:
        raise ValidationError(
            "table grid does not match sampler config grid "
            f"(table has {len(table.timesteps)} steps from {table.timesteps[0]})"
        )
    a0 = eval_alpha_bar(table.spec, 0.0)
    start_clamped = a0 >= 1.0
    return grid, table.alpha_bar, a0, start_clamped


def run_inversion(
    models: AnalyticModel | ModelPair,
    x0: Sequence[float],
    table: ScheduleTable,
    config: SamplerConfig,
    seed: int = 0,
) -> Trajectory:
    """Deterministic inversion of b*x0 up the grid, guided at w_invert.

    The predictor for the step leaving t_{j-1} is evaluated at the stored
    state and noise level of t_{j-1}.  ``seed`` is accepted for interface
    symmetry; inversion itself draws no noise.
    """
    del seed
    models = _as_pair(models)
    grid, alphas, a0, clamped = _grid_and_alphas(table, config)
    sigma0_sq = data_variance(models[0])
    n = config.n_steps

    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (models[0].dim,):
        raise ValidationError(f"x0 shape {x0.shape} != ({models[0].dim},)")

    states = np.empty((n + 1, x0.shape[0]))
    eps_hats = np.empty_like(states)
    states[0] = config.input_scale_b * x0
    anchor_alpha = alphas[0] if clamped else a0

    eps_hats[0] = _predict(models, states[0], anchor_alpha, config.w_invert, config, sigma0_sq)
    if clamped:
        states[1] = states[0]
    else:
        states[1] = ddim_invert_step(states[0], eps_hats[0], a0, alphas[0])
    for j in range(1, n):
        eps_hats[j] = _predict(
            models, states[j], alphas[j - 1], config.w_invert, config, sigma0_sq
        )
        states[j + 1] = ddim_invert_step(states[j], eps_hats[j], alphas[j - 1], alphas[j])
    eps_hats[n] = _predict(models, states[n], alphas[-1], config.w_invert, config, sigma0_sq)

    return Trajectory(
        direction="inversion",
        timesteps=(0.0,) + grid,
        alpha_bars=(anchor_alpha,) + alphas,
        states=states,
        eps_hats=eps_hats,
        config=config,
        start_clamped=clamped,
    )


def run_reverse(
    models: AnalyticModel | ModelPair,
    x_T: Sequence[float],
    table: ScheduleTable,
    config: SamplerConfig,
    seed: int = 0,
) -> Trajectory:
    """Generation run from the grid's last timestep down to the t=0 anchor.

    Deterministic for eta=0; otherwise noise comes from a Philox stream keyed
    by ``seed``.  The final step mirrors the inversion start convention.
    """
    models = _as_pair(models)
    grid, alphas, a0, clamped = _grid_and_alphas(table, config)
    sigma0_sq = data_variance(models[0])
    n = config.n_steps
    rng = np.random.Generator(np.random.Philox(key=int(seed)))

    x_T = np.asarray(x_T, dtype=float)
    if x_T.shape != (models[0].dim,):
        raise ValidationError(f"x_T shape {x_T.shape} != ({models[0].dim},)")

    states = np.empty((n + 1, x_T.shape[0]))
    eps_hats = np.empty_like(states)
    states[0] = x_T

    k = 0
    for j in range(n - 1, 0, -1):
        eps_hats[k] = _predict(models, states[k], alphas[j], config.w_reverse, config, sigma0_sq)
        noise = rng.standard_normal(x_T.shape[0]) if config.eta > 0.0 else None
        states[k + 1] = ddim_reverse_step(
            states[k], eps_hats[k], alphas[j], alphas[j - 1], config.eta, noise
        )
        k += 1
    eps_hats[k] = _predict(models, states[k], alphas[0], config.w_reverse, config, sigma0_sq)
    if clamped:
        states[k + 1] = states[k]
    else:
        noise = rng.standard_normal(x_T.shape[0]) if config.eta > 0.0 else None
        states[k + 1] = ddim_reverse_step(
            states[k], eps_hats[k], alphas[0], a0, config.eta, noise
        )
    anchor_alpha = alphas[0] if clamped else a0
    eps_hats[n] = _predict(models, states[n], anchor_alpha, config.w_reverse, config, sigma0_sq)

    return Trajectory(
        direction="reverse",
        timesteps=tuple(reversed(grid)) + (0.0,),
        alpha_bars=tuple(reversed(alphas)) + (anchor_alpha,),
        states=states,
        eps_hats=eps_hats,
        config=config,
        start_clamped=clamped,
    )


def pinned_reconstruction(
    inversion: Trajectory,
    source_models: AnalyticModel | ModelPair,
    target_models: AnalyticModel | ModelPair,
    table: ScheduleTable,
    config: SamplerConfig,
    seed: int = 0,
) -> Trajectory:
    """Reverse pass pinned to the stored inversion trajectory.

    At each step the source-condition reverse prediction is made from the
    stored inversion state, and the residual against the stored previous
    state is added to the running (target-condition) state.  With target ==
    source the residuals cancel exactly and the run reproduces the inversion
    path; under a different target the corrections are carried unchanged.
    """
    source_models = _as_pair(source_models)
    target_models = _as_pair(target_models)
    grid, alphas, a0, clamped = _grid_and_alphas(table, config)
    n = config.n_steps
    if inversion.direction != "inversion":
        raise ValidationError("pinned reconstruction needs an inversion trajectory")
    if inversion.states.shape[0] != n + 1 or inversion.timesteps != (0.0,) + grid:
        raise ValidationError("inversion trajectory does not cover the sampler grid")

    sigma0_src = data_variance(source_models[0])
    sigma0_tgt = data_variance(target_models[0])
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    dim = inversion.states.shape[1]

    states = np.empty((n + 1, dim))
    eps_hats = np.empty_like(states)
    states[0] = inversion.states[n]

    k = 0
    for j in range(n - 1, 0, -1):
        # inversion.states[j + 1] sits at grid[j]; states[k] is the target branch there
        noise = rng.standard_normal(dim) if config.eta > 0.0 else None
        eps_src = _predict(
            source_models, inversion.states[j + 1], alphas[j], config.w_reverse, config, sigma0_src
        )
        src_pred = ddim_reverse_step(
            inversion.states[j + 1], eps_src, alphas[j], alphas[j - 1], config.eta, noise
        )
        correction = inversion.states[j] - src_pred
        eps_hats[k] = _predict(
            target_models, states[k], alphas[j], config.w_reverse, config, sigma0_tgt
        )
        states[k + 1] = (
            ddim_reverse_step(states[k], eps_hats[k], alphas[j], alphas[j - 1], config.eta, noise)
            + correction
        )
        k += 1

    eps_hats[k] = _predict(
        target_models, states[k], alphas[0], config.w_reverse, config, sigma0_tgt
    )
    if clamped:
        correction = inversion.states[0] - inversion.states[1]
        states[k + 1] = states[k] + correction
    else:
        noise = rng.standard_normal(dim) if config.eta > 0.0 else None
        eps_src = _predict(
            source_models, inversion.states[1], alphas[0], config.w_reverse, config, sigma0_src
        )
        src_pred = ddim_reverse_step(
            inversion.states[1], eps_src, alphas[0], a0, config.eta, noise
        )
        correction = inversion.states[0] - src_pred
        states[k + 1] = (
            ddim_reverse_step(states[k], eps_hats[k], alphas[0], a0, config.eta, noise)
            + correction
        )
    anchor_alpha = alphas[0] if clamped else a0
    eps_hats[n] = _predict(
        target_models, states[n], anchor_alpha, config.w_reverse, config, sigma0_tgt
    )

    return Trajectory(
        direction="reverse",
        timesteps=tuple(reversed(grid)) + (0.0,),
        alpha_bars=tuple(reversed(alphas)) + (anchor_alpha,),
        states=states,
        eps_hats=eps_hats,
        config=config,
        start_clamped=clamped,
    )


# ---------------------------------------------------------------------------
# reference ODE integrator (internal oracle)

@dataclasses.dataclass(frozen=True)
class OdeResult:
    x_end: np.ndarray
    t_start: float
    t_end: float
    n_fine: int
    start_clamped: bool


def ode_velocity(model: AnalyticModel, spec, t: float, x: np.ndarray) -> np.ndarray:
    """dx/dt of the deterministic flow with the exact score substituted.

    dx/dt = 0.5 * dlog(a)/dt * (x - eps_hat(x, a) / sqrt(1 - a)), evaluated on
    the smooth alpha_bar form.
    """
    a = alpha_bar_continuous(spec, t)
    dlog = d_alpha_bar_dt(spec, t) / a
    eps = exact_eps(model, x, a)
    return 0.5 * dlog * (x - eps / math.sqrt(1.0 - a))


def ode_solve(
    model: AnalyticModel,
    x_start: Sequence[float],
    spec,
    t_from: float,
    t_to: float,
    n_fine: int,
) -> np.ndarray:
    """Classical fixed-step RK4 integration of the flow from t_from to t_to."""
    if n_fine < 1:
        raise ValidationError(f"n_fine must be >= 1, got {n_fine}")
    x = np.array(x_start, dtype=float)
    if t_from == t_to:
        return x
    h = (t_to - t_from) / n_fine
    t = t_from
    for _ in range(n_fine):
        k1 = ode_velocity(model, spec, t, x)
        k2 = ode_velocity(model, spec, t + 0.5 * h, x + 0.5 * h * k1)
        k3 = ode_velocity(model, spec, t + 0.5 * h, x + 0.5 * h * k2)
        k4 = ode_velocity(model, spec, t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return x


def ode_reference_solve(
    model: AnalyticModel,
    x_start: Sequence[float],
    table: ScheduleTable,
    direction: str = "inversion",
    n_fine: int = 1000,
) -> OdeResult:
    """High-accuracy reference solve over the table's span.

    For schedules singular at t=0 the span is clamped to start at the grid's
    first positive timestep, reported via ``start_clamped``.  A zero-length
    span returns x_start unchanged.
    """
    if direction not in ("inversion", "reverse"):
        raise ValidationError(f"direction must be inversion|reverse, got {direction!r}")
    spec = table.spec
    a0 = eval_alpha_bar(spec, 0.0)
    clamped = a0 >= 1.0
    lo = table.timesteps[0] if clamped else 0.0
    hi = table.timesteps[-1]
    t_from, t_to = (lo, hi) if direction == "inversion" else (hi, lo)
    x_end = ode_solve(model, x_start, spec, t_from, t_to, n_fine)
    return OdeResult(
        x_end=x_end, t_start=t_from, t_end=t_to, n_fine=n_fine, start_clamped=clamped
    )


# ---------------------------------------------------------------------------
# trajectory dumps

TRAJECTORY_CSV_HEADER = ("step", "t", "alpha_bar", "x_norm", "eps_norm")


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_CSV_HEADER)
        for i, (t, a) in enumerate(zip(traj.timesteps, traj.alpha_bars)):
            w.writerow(
                [
                    str(i),
                    format_float(t),
                    format_float(a),
                    format_float(float(np.linalg.norm(traj.states[i]))),
                    format_float(float(np.linalg.norm(traj.eps_hats[i]))),
                ]
            )


def write_trajectory_bin(traj: Trajectory, path: str | Path) -> None:
    """Full-state dump: 8-byte magic, dim and length as u64 LE, then
    row-major little-endian float64 states."""
    states = np.ascontiguousarray(traj.states, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(struct.pack("<QQ", states.shape[1], states.shape[0]))
        fh.write(states.tobytes(order="C"))


def read_trajectory_bin(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != TRAJECTORY_MAGIC:
            raise ValidationError(f"bad trajectory magic: {magic!r}")
        dim, length = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != dim * length:
        raise ValidationError("trajectory dump truncated")
    return data.reshape(length, dim).copy()

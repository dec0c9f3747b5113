"""Forward-noising schedule and the single reverse denoising step.

The schedule is the standard variance-preserving one: per-step noise
variances beta_t rise linearly. The endpoints 1e-4 and 2e-2 are defined
at a reference length of 1000 steps and scaled by 1000/T for other
lengths, so a short schedule still reaches (almost) pure noise at t=T:
alpha_bar_T stays essentially independent of T.

Indexing: t runs from 0 (clean) to T (fully noised). betas()[t-1] is the
variance added going from t-1 to t; alpha_bar(0) == 1 exactly.

Step arithmetic runs in float64 and results are cast to float32, the
grid storage dtype. This keeps the degenerate cases exact: at t=1 the
reverse step returns the predicted clean grid bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .latents import LatentGrid, ShapeMismatchError

BETA_START = 1e-4
BETA_END = 2e-2
REFERENCE_STEPS = 1000


class BadStepCountError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed schedule tables, all length T+1 and indexed by t.

    Index 0 is the identity point: beta[0] = 0, alpha_bar[0] = 1. The
    posterior coefficient tables used by ddpm_step are cached here too.
    """

    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_x0_coef: np.ndarray = field(repr=False)
    posterior_zt_coef: np.ndarray = field(repr=False)
    posterior_sigma: np.ndarray = field(repr=False)


def make_schedule(steps: int) -> NoiseSchedule:
    """Build a linear schedule with T = steps."""
    if not isinstance(steps, int) or isinstance(steps, bool) or steps < 1:
        raise BadStepCountError(f"steps must be a positive integer, got {steps!r}")
    scale = REFERENCE_STEPS / steps
    ramp = np.linspace(BETA_START * scale, BETA_END * scale, steps, dtype=np.float64)
    if ramp[-1] >= 1.0:
        raise BadStepCountError(f"steps={steps} pushes beta to {ramp[-1]:.3f} (must stay < 1)")
    beta = np.concatenate(([0.0], ramp))
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # Posterior q(z_{t-1} | z_t, x0) coefficients, index t in 1..T.
    t = np.arange(1, steps + 1)
    denom = 1.0 - alpha_bar[t]
    x0_coef = np.zeros(steps + 1)
    zt_coef = np.zeros(steps + 1)
    sigma = np.zeros(steps + 1)
    x0_coef[1:] = np.sqrt(alpha_bar[t - 1]) * beta[t] / denom
    zt_coef[1:] = np.sqrt(alpha[t]) * (1.0 - alpha_bar[t - 1]) / denom
    sigma[1:] = np.sqrt((1.0 - alpha_bar[t - 1]) / denom * beta[t])
    for arr in (beta, alpha, alpha_bar, x0_coef, zt_coef, sigma):
        arr.flags.writeable = False
    return NoiseSchedule(
        steps=steps,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_x0_coef=x0_coef,
        posterior_zt_coef=zt_coef,
        posterior_sigma=sigma,
    )


def _check_t(schedule: NoiseSchedule, t: int, lowest: int) -> None:
    if not isinstance(t, (int, np.integer)) or isinstance(t, bool):
        raise BadStepCountError(f"t must be an integer, got {t!r}")
    if t < lowest or t > schedule.steps:
        raise BadStepCountError(f"t={t} outside [{lowest}, {schedule.steps}]")


def q_sample(x0: LatentGrid, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> LatentGrid:
    """Forward-noise a clean grid to level t.

    z_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise. At t=0
    this returns x0 (alpha_bar_0 is exactly 1).
    """
    _check_t(schedule, t, lowest=0)
    noise = np.asarray(noise)
    if noise.shape != x0.data.shape:
        raise ShapeMismatchError(f"noise shape {noise.shape} != latent shape {x0.data.shape}")
    ab = schedule.alpha_bar[t]
    out = np.sqrt(ab) * x0.data.astype(np.float64) + np.sqrt(1.0 - ab) * noise.astype(np.float64)
    return LatentGrid(out.astype(np.float32))


def ddpm_step_array(
    z_t: np.ndarray,
    t: int,
    x0_pred: np.ndarray,
    schedule: NoiseSchedule,
    noise: np.ndarray | None,
) -> np.ndarray:
    """Raw-array reverse step; see ddpm_step for the contract."""
    mean = (
        schedule.posterior_x0_coef[t] * x0_pred.astype(np.float64, copy=False)
        + schedule.posterior_zt_coef[t] * z_t.astype(np.float64, copy=False)
    )
    if t > 1:
        if noise is None:
            raise ValueError("noise is required for t > 1")
        mean += schedule.posterior_sigma[t] * np.asarray(noise).astype(np.float64, copy=False)
    return mean.astype(np.float32)


def ddpm_step(
    z_t: LatentGrid,
    t: int,
    x0_pred: LatentGrid,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> LatentGrid:
    """One reverse step: sample z_{t-1} from the posterior given x0_pred.

    The posterior mean combines the clean prediction and the current
    grid; posterior noise is added for t > 1 and omitted at t=1, where
    the posterior variance is zero and the step returns x0_pred exactly.
    Callers may pass the noise array explicitly (several branches of one
    step share a single draw); otherwise it is drawn from rng.
    """
    _check_t(schedule, t, lowest=1)
    if x0_pred.data.shape != z_t.data.shape:
        raise ShapeMismatchError(
            f"x0 prediction shape {x0_pred.data.shape} != grid shape {z_t.data.shape}"
        )
    if t > 1 and noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required for t > 1")
        noise = rng.standard_normal(z_t.data.shape, dtype=np.float32)
    return LatentGrid(ddpm_step_array(z_t.data, t, x0_pred.data, schedule, noise))

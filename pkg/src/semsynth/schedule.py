"""Diffusion noise schedules and per-timestep coefficients.

The cumulative signal fraction is stored with one extra leading slot
(index 0 is the clean-data convention value 1), so posterior formulas
index cleanly for t = 1. All arithmetic is double precision; downcast
happens only at the network boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

COSINE_OFFSET = 0.008
BETA_CLIP = 0.999
KINDS = ("cosine", "linear")


@dataclass(frozen=True)
class Coefficients:
    """All per-timestep quantities the sampler and loss need."""

    beta_t: float
    alpha_t: float
    alpha_bar_t: float
    sqrt_alpha_bar_t: float
    sqrt_one_minus_alpha_bar_t: float
    posterior_variance_t: float


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    beta: np.ndarray              # beta[t-1] is the step-t noise variance
    alpha_bar: np.ndarray         # length T+1, alpha_bar[0] == 1
    posterior_variance: np.ndarray
    s: float = COSINE_OFFSET
    beta_clip: float = BETA_CLIP

    def coefficients_at(self, t: int) -> Coefficients:
        """Coefficients for timestep t, 1 <= t <= T."""
        if not 1 <= t <= self.T:
            raise PreconditionError(f"timestep {t} outside [1, {self.T}]")
        ab = self.alpha_bar[t]
        return Coefficients(
            beta_t=float(self.beta[t - 1]),
            alpha_t=float(1.0 - self.beta[t - 1]),
            alpha_bar_t=float(ab),
            sqrt_alpha_bar_t=float(math.sqrt(ab)),
            sqrt_one_minus_alpha_bar_t=float(math.sqrt(1.0 - ab)),
            posterior_variance_t=float(self.posterior_variance[t - 1]),
        )


def _cosine_alpha_bar(T: int, s: float) -> np.ndarray:
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * (math.pi / 2.0)) ** 2
    return f / f[0]


def build_schedule(
    kind: str,
    T: int,
    *,
    s: float = COSINE_OFFSET,
    beta_clip: float = BETA_CLIP,
) -> NoiseSchedule:
    """Construct a schedule of the given family with T timesteps."""
    if T < 1:
        raise PreconditionError(f"T must be >= 1, got {T}")
    if kind == "cosine":
        raw = _cosine_alpha_bar(T, s)
        beta = 1.0 - raw[1:] / raw[:-1]
        beta = np.clip(beta, 1e-12, beta_clip)
    elif kind == "linear":
        # DDPM linear range, rescaled so total noising is T-independent
        scale = 1000.0 / T
        beta = np.linspace(scale * 1e-4, scale * 2e-2, T, dtype=np.float64)
        beta = np.clip(beta, 1e-12, beta_clip)
    else:
        raise PreconditionError(f"unknown schedule kind {kind!r}")

    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - beta)

    posterior_variance = beta * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return NoiseSchedule(
        kind=kind,
        T=T,
        beta=beta,
        alpha_bar=alpha_bar,
        posterior_variance=posterior_variance,
        s=s,
        beta_clip=beta_clip,
    )

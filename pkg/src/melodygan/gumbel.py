"""Differentiable relaxation of categorical sampling.

A relaxed sample is softmax(beta * (logits + g)) with i.i.d. standard Gumbel
noise g = -log(-log U). The inverse temperature beta sharpens the relaxation:
beta = 1 is a soft distribution, large beta approaches a one-hot vector while
keeping gradients defined. `TemperatureSchedule` ramps beta exponentially
from 1 to beta_max over the adversarial phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ConfigurationError, NumericError

# uniforms are clamped into [UNIFORM_EPS, 1 - UNIFORM_EPS] before the double log
UNIFORM_EPS = 1e-10


def gumbel_from_uniform(u: Tensor) -> Tensor:
    """Map uniform draws through -log(-log u)."""
    return -torch.log(-torch.log(u))


def sample_gumbel_noise(shape, generator: torch.Generator, *, dtype=torch.float32) -> Tensor:
    """I.i.d. standard Gumbel noise of the given shape."""
    if isinstance(shape, int):
        shape = (shape,)
    u = torch.empty(*shape, dtype=dtype)
    u.uniform_(0.0, 1.0, generator=generator)
    u.clamp_(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return gumbel_from_uniform(u)


def gumbel_softmax(logits: Tensor, beta: float, generator: torch.Generator | None = None,
                   *, noise: Tensor | None = None) -> Tensor:
    """Relaxed categorical sample over the last axis: softmax(beta * (logits + g)).

    Exactly one noise source must be supplied: a torch.Generator to draw
    fresh Gumbel noise, or an explicit `noise` tensor (useful for tests and
    gradient checks, where the noise must be held fixed).
    """
    if beta <= 0.0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    if not bool(torch.isfinite(logits).all()):
        raise NumericError("gumbel_softmax received non-finite logits")
    if noise is None:
        if generator is None:
            raise ConfigurationError("gumbel_softmax needs a generator or explicit noise")
        noise = sample_gumbel_noise(tuple(logits.shape), generator, dtype=logits.dtype)
    elif generator is not None:
        raise ConfigurationError("gumbel_softmax takes a generator or explicit noise, not both")
    elif tuple(noise.shape) != tuple(logits.shape):
        raise ConfigurationError(
            f"noise shape {tuple(noise.shape)} must match logits shape {tuple(logits.shape)}")
    return torch.softmax(beta * (logits + noise), dim=-1)


def categorical_sample(logits: Tensor, generator: torch.Generator) -> Tensor:
    """Exact draw from softmax(logits) along the last axis; returns index tensor."""
    if not bool(torch.isfinite(logits).all()):
        raise NumericError("categorical_sample received non-finite logits")
    probs = torch.softmax(logits.detach().double(), dim=-1)
    flat = probs.reshape(-1, probs.shape[-1])
    idx = torch.multinomial(flat, 1, generator=generator).squeeze(-1)
    return idx.reshape(probs.shape[:-1])


@dataclass(frozen=True)
class TemperatureSchedule:
    """Exponential inverse-temperature ramp: beta(s) = beta_max ** (s / total)."""

    beta_max: float
    total_steps: int
    shape: str = "exponential"

    def __post_init__(self):
        if self.shape != "exponential":
            raise ConfigurationError(f"unsupported schedule shape {self.shape!r}")
        if not self.beta_max >= 1.0:
            raise ConfigurationError(f"beta_max must be at least 1, got {self.beta_max}")
        if not isinstance(self.total_steps, int) or self.total_steps < 1:
            raise ConfigurationError(f"total_steps must be a positive integer, got {self.total_steps!r}")


def beta_at(schedule: TemperatureSchedule, step: int) -> float:
    """Inverse temperature at a step; beta(0) = 1 and beta(total) = beta_max."""
    if not 0 <= step <= schedule.total_steps:
        raise ConfigurationError(
            f"step {step} outside schedule range [0, {schedule.total_steps}]")
    return float(schedule.beta_max ** (step / schedule.total_steps))

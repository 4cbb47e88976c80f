"""Sequence critic over melody triplets plus the relativistic loss pair.

The discriminator embeds all three attribute vectors, concatenates them with
the syllable embedding, and runs the fused feature through a relational
memory core; a linear head emits one score per step and the sequence score is
the mean over steps. Losses compare mean real and fake scores through a
sigmoid of their difference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import data
from .errors import ConfigurationError
from .generator import MelodyTriplet
from .relmem import RelationalMemoryCell, RmcConfig, reset_linear_parameters_
from .seeding import derive_seed


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Shapes for the critic."""

    pitch_vocab: int = data.PITCH_VOCAB
    duration_vocab: int = data.DURATION_VOCAB
    rest_vocab: int = data.REST_VOCAB
    pitch_embed: int = 32
    duration_embed: int = 16
    rest_embed: int = 8
    fc_units: int = 64
    rmc: RmcConfig = RmcConfig(1, 64, 2, 2, 64)
    syllable_dim: int = data.SYLLABLE_DIM
    sequence_length: int = data.SEQUENCE_LENGTH

    def __post_init__(self):
        for field_name in ("pitch_vocab", "duration_vocab", "rest_vocab", "pitch_embed",
                           "duration_embed", "rest_embed", "fc_units", "syllable_dim",
                           "sequence_length"):
            value = getattr(self, field_name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(
                    f"DiscriminatorConfig.{field_name} must be a positive integer, got {value!r}")
        if self.rmc.input_dim != self.fc_units:
            raise ConfigurationError(
                f"rmc.input_dim ({self.rmc.input_dim}) must equal fc_units ({self.fc_units})")

    @property
    def fused_dim(self) -> int:
        return self.pitch_embed + self.duration_embed + self.rest_embed + self.syllable_dim


def canonical_discriminator_config() -> DiscriminatorConfig:
    return DiscriminatorConfig()


def small_discriminator_config() -> DiscriminatorConfig:
    """Desk-scale profile: embeddings and hidden sizes quartered."""
    return DiscriminatorConfig(pitch_embed=8, duration_embed=4, rest_embed=2,
                               fc_units=16, rmc=RmcConfig(1, 16, 2, 2, 16))


class CriticScores(NamedTuple):
    per_step: Tensor  # (batch, T)
    mean: Tensor      # (batch,)


class TripletDiscriminator(nn.Module):
    """Scores melody/syllable pairs; higher means more real-looking."""

    def __init__(self, config: DiscriminatorConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config if config is not None else canonical_discriminator_config()
        cfg = self.config
        self.embed_pitch = nn.Linear(cfg.pitch_vocab, cfg.pitch_embed)
        self.embed_duration = nn.Linear(cfg.duration_vocab, cfg.duration_embed)
        self.embed_rest = nn.Linear(cfg.rest_vocab, cfg.rest_embed)
        self.fc = nn.Linear(cfg.fused_dim, cfg.fc_units)
        self.cell = RelationalMemoryCell(cfg.rmc)
        self.out = nn.Linear(cfg.rmc.slot_width, 1)
        self.reset_parameters(derive_seed(seed, "discriminator"))

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        reset_linear_parameters_(self, gen)
        self.cell.reset_state_defaults_()

    def _check_inputs(self, melody: MelodyTriplet, syllables: Tensor) -> None:
        cfg = self.config
        if melody.form != "relaxed":
            raise ConfigurationError("score_sequence expects float (one-hot or relaxed) melodies")
        shapes = {
            "pitch": (melody.pitch, cfg.pitch_vocab),
            "duration": (melody.duration, cfg.duration_vocab),
            "rest": (melody.rest, cfg.rest_vocab),
        }
        if syllables.dim() != 3 or syllables.shape[2] != cfg.syllable_dim:
            raise ConfigurationError(
                f"syllables must have shape (batch, T, {cfg.syllable_dim}), got {tuple(syllables.shape)}")
        if syllables.shape[1] != cfg.sequence_length:
            raise ConfigurationError(
                f"critic scores sequences of length {cfg.sequence_length}, got {syllables.shape[1]}")
        batch, steps = syllables.shape[0], syllables.shape[1]
        for name, (tensor, vocab) in shapes.items():
            if tensor.dim() != 3 or tuple(tensor.shape) != (batch, steps, vocab):
                raise ConfigurationError(
                    f"{name} must have shape ({batch}, {steps}, {vocab}), got {tuple(tensor.shape)}")

    def score_sequence(self, melody: MelodyTriplet, syllables: Tensor) -> CriticScores:
        """Per-step scores and their mean over the sequence."""
        self._check_inputs(melody, syllables)
        batch, steps = syllables.shape[0], syllables.shape[1]
        memory = self.cell.expand_initial_memory(batch)
        step_scores = []
        for t in range(steps):
            fused = torch.cat([
                self.embed_pitch(melody.pitch[:, t, :]),
                self.embed_duration(melody.duration[:, t, :]),
                self.embed_rest(melody.rest[:, t, :]),
                syllables[:, t, :],
            ], dim=-1)
            hidden = torch.relu(self.fc(fused))
            cell_out, memory = self.cell(memory, hidden)
            step_scores.append(self.out(cell_out).squeeze(-1))
        per_step = torch.stack(step_scores, dim=1)
        return CriticScores(per_step=per_step, mean=per_step.mean(dim=1))


def _as_pair(real_mean, fake_mean):
    scalar_inputs = not isinstance(real_mean, Tensor) and not isinstance(fake_mean, Tensor)
    if scalar_inputs:
        real = torch.as_tensor(float(real_mean), dtype=torch.float64)
        fake = torch.as_tensor(float(fake_mean), dtype=torch.float64)
    else:
        real = torch.as_tensor(real_mean)
        fake = torch.as_tensor(fake_mean)
    return real, fake, scalar_inputs


def d_loss(real_mean, fake_mean):
    """Critic loss -log sigmoid(real - fake), computed as softplus(fake - real).

    Elementwise over tensors; plain numbers come back as a float (computed in
    double precision). The softplus form stays finite for score gaps far
    beyond the sigmoid's saturation range.
    """
    real, fake, scalar_inputs = _as_pair(real_mean, fake_mean)
    loss = F.softplus(fake - real)
    return float(loss) if scalar_inputs else loss


def g_loss(real_mean, fake_mean):
    """Generator loss: exactly the negation of d_loss on the same scores."""
    loss = d_loss(real_mean, fake_mean)
    return -loss

"""Autoregressive melody generator: three independent relational-memory
streams (pitch, duration, rest), each conditioned on the syllable embedding
of the current position.

Per stream and step: the previous output vector (a relaxed sample, a one-hot,
or at t=0 a normalized uniform draw) is linearly embedded, concatenated with
the 20-dim syllable embedding, passed through a ReLU layer, then a relational
memory step; a final linear layer produces vocabulary logits. Training-time
sampling relaxes the logits with Gumbel-Softmax so gradients reach every
parameter; inference decodes argmax or exact categorical indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import data
from .errors import ConfigurationError, NumericError
from .gumbel import categorical_sample, gumbel_softmax
from .relmem import RelationalMemoryCell, RmcConfig, reset_linear_parameters_
from .seeding import derive_seed

ATTRIBUTE_NAMES = ("pitch", "duration", "rest")


@dataclass(frozen=True)
class AttributeSpec:
    """Shapes for one attribute stream."""

    name: str
    vocab_size: int
    embed_dim: int
    fc_units: int
    rmc: RmcConfig

    def __post_init__(self):
        if self.name not in ATTRIBUTE_NAMES:
            raise ConfigurationError(f"attribute name must be one of {ATTRIBUTE_NAMES}, got {self.name!r}")
        for field_name in ("vocab_size", "embed_dim", "fc_units"):
            value = getattr(self, field_name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"AttributeSpec.{field_name} must be a positive integer, got {value!r}")
        if self.rmc.input_dim != self.fc_units:
            raise ConfigurationError(
                f"rmc.input_dim ({self.rmc.input_dim}) must equal fc_units ({self.fc_units})")


def canonical_attribute_specs():
    """Full-scale stream shapes: pitch 100/32/64, duration 12/16/32, rest 7/8/16."""
    return (
        AttributeSpec("pitch", data.PITCH_VOCAB, 32, 64, RmcConfig(1, 64, 2, 2, 64)),
        AttributeSpec("duration", data.DURATION_VOCAB, 16, 32, RmcConfig(1, 32, 2, 2, 32)),
        AttributeSpec("rest", data.REST_VOCAB, 8, 16, RmcConfig(1, 16, 2, 2, 16)),
    )


def small_attribute_specs():
    """Desk-scale profile: vocabularies kept, hidden sizes quartered."""
    return (
        AttributeSpec("pitch", data.PITCH_VOCAB, 8, 16, RmcConfig(1, 16, 2, 2, 16)),
        AttributeSpec("duration", data.DURATION_VOCAB, 4, 8, RmcConfig(1, 8, 2, 2, 8)),
        AttributeSpec("rest", data.REST_VOCAB, 2, 4, RmcConfig(1, 4, 2, 2, 4)),
    )


class MelodyTriplet(NamedTuple):
    """The three attribute streams of a melody batch.

    Relaxed/one-hot form: float tensors (batch, T, vocab) on the simplex.
    Index form: integer tensors (batch, T).
    """

    pitch: Tensor
    duration: Tensor
    rest: Tensor

    @property
    def form(self) -> str:
        return "relaxed" if self.pitch.is_floating_point() else "index"

    def detached(self) -> "MelodyTriplet":
        return MelodyTriplet(self.pitch.detach(), self.duration.detach(), self.rest.detach())

    def by_name(self, name: str) -> Tensor:
        if name not in ATTRIBUTE_NAMES:
            raise ConfigurationError(f"unknown attribute {name!r}")
        return getattr(self, name)


class AttributeSubNetwork(nn.Module):
    """One generator stream: embed previous output, condition, recur, project."""

    def __init__(self, spec: AttributeSpec, syllable_dim: int = data.SYLLABLE_DIM):
        super().__init__()
        self.spec = spec
        self.syllable_dim = syllable_dim
        self.embed = nn.Linear(spec.vocab_size, spec.embed_dim)
        self.fc = nn.Linear(spec.embed_dim + syllable_dim, spec.fc_units)
        self.cell = RelationalMemoryCell(spec.rmc)
        self.out = nn.Linear(spec.rmc.slot_width, spec.vocab_size)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        reset_linear_parameters_(self, gen)
        self.cell.reset_state_defaults_()

    def initial_memory(self, batch: int) -> Tensor:
        return self.cell.expand_initial_memory(batch)

    def initial_input(self, batch: int, generator: torch.Generator, dtype=torch.float32) -> Tensor:
        """First-step stand-in for the previous output: normalized uniform noise."""
        u = torch.empty(batch, self.spec.vocab_size, dtype=dtype)
        u.uniform_(0.0, 1.0, generator=generator)
        return u / u.sum(dim=-1, keepdim=True)

    def center_input(self, batch: int, dtype=torch.float32) -> Tensor:
        """Deterministic first-step stand-in: the simplex center, which is the
        expectation of the random stand-in used during training."""
        v = self.spec.vocab_size
        return torch.full((batch, v), 1.0 / v, dtype=dtype)

    def _check_step_inputs(self, prev: Tensor, syllable: Tensor) -> None:
        if prev.dim() != 2 or prev.shape[1] != self.spec.vocab_size:
            raise ConfigurationError(
                f"{self.spec.name}: prev must have shape (batch, {self.spec.vocab_size}), got {tuple(prev.shape)}")
        if syllable.dim() != 2 or syllable.shape[1] != self.syllable_dim:
            raise ConfigurationError(
                f"{self.spec.name}: syllable must have shape (batch, {self.syllable_dim}), got {tuple(syllable.shape)}")
        if prev.shape[0] != syllable.shape[0]:
            raise ConfigurationError(
                f"{self.spec.name}: batch mismatch between prev ({prev.shape[0]}) and syllable ({syllable.shape[0]})")

    def step_logits(self, prev: Tensor, syllable: Tensor, memory: Tensor):
        """One recurrence without sampling. Returns (logits, new_memory)."""
        self._check_step_inputs(prev, syllable)
        dense = self.embed(prev)
        hidden = torch.relu(self.fc(torch.cat([dense, syllable], dim=-1)))
        cell_out, new_memory = self.cell(memory, hidden)
        return self.out(cell_out), new_memory

    def step(self, prev: Tensor, syllable: Tensor, memory: Tensor, beta: float,
             generator: torch.Generator):
        """One recurrence plus a relaxed sample. Returns (sample, logits, new_memory)."""
        logits, new_memory = self.step_logits(prev, syllable, memory)
        sample = gumbel_softmax(logits, beta, generator)
        return sample, logits, new_memory


class MelodyGenerator(nn.Module):
    """Three independent attribute streams sharing only the syllable input."""

    def __init__(self, specs=None, seed: int = 0, syllable_dim: int = data.SYLLABLE_DIM):
        super().__init__()
        if specs is None:
            specs = canonical_attribute_specs()
        names = tuple(spec.name for spec in specs)
        if names != ATTRIBUTE_NAMES:
            raise ConfigurationError(f"specs must be (pitch, duration, rest) in order, got {names}")
        self.seed = seed
        self.syllable_dim = syllable_dim
        self.pitch = AttributeSubNetwork(specs[0], syllable_dim)
        self.duration = AttributeSubNetwork(specs[1], syllable_dim)
        self.rest = AttributeSubNetwork(specs[2], syllable_dim)
        for name, net in self.streams().items():
            net.reset_parameters(derive_seed(seed, "generator", name))

    def streams(self) -> dict:
        return {"pitch": self.pitch, "duration": self.duration, "rest": self.rest}

    def _check_syllables(self, syllables: Tensor) -> None:
        if syllables.dim() != 3 or syllables.shape[2] != self.syllable_dim:
            raise ConfigurationError(
                f"syllables must have shape (batch, T, {self.syllable_dim}), got {tuple(syllables.shape)}")
        if not bool(torch.isfinite(syllables).all()):
            raise NumericError("syllable embeddings contain non-finite values")

    def _param_dtype(self) -> torch.dtype:
        return self.pitch.embed.weight.dtype

    def generate_relaxed(self, syllables: Tensor, beta: float, seed: int) -> MelodyTriplet:
        """Roll every stream for T steps with Gumbel-Softmax sampling.

        Each stream consumes its own noise generator derived from (seed,
        stream name), so perturbing one stream's parameters cannot shift
        another stream's noise. Gradients flow through every step.
        """
        self._check_syllables(syllables)
        dtype = self._param_dtype()
        outputs = {}
        for name, net in self.streams().items():
            gen = torch.Generator().manual_seed(derive_seed(seed, "stream", name))
            batch, steps = syllables.shape[0], syllables.shape[1]
            memory = net.initial_memory(batch)
            prev = net.initial_input(batch, gen, dtype)
            samples = []
            for t in range(steps):
                try:
                    prev, _, memory = net.step(prev, syllables[:, t, :], memory, beta, gen)
                except NumericError as exc:
                    raise NumericError(f"{name} stream failed at step {t}: {exc}") from exc
                samples.append(prev)
            outputs[name] = torch.stack(samples, dim=1)
        return MelodyTriplet(**outputs)

    @torch.no_grad()
    def generate_index(self, syllables: Tensor, mode: str = "argmax", seed: int = 0) -> MelodyTriplet:
        """Decode index sequences; `mode` is `argmax` or `sample` (exact categorical).

        Argmax decoding is fully deterministic — the first-step stand-in is
        the simplex center and no noise enters at any step — so it ignores
        `seed`. Sample mode draws the stand-in and every categorical draw
        from a generator derived from (seed, stream name).
        """
        if mode not in ("argmax", "sample"):
            raise ConfigurationError(f"mode must be 'argmax' or 'sample', got {mode!r}")
        self._check_syllables(syllables)
        dtype = self._param_dtype()
        outputs = {}
        for name, net in self.streams().items():
            gen = torch.Generator().manual_seed(derive_seed(seed, "stream", name))
            batch, steps = syllables.shape[0], syllables.shape[1]
            memory = net.initial_memory(batch)
            if mode == "argmax":
                prev = net.center_input(batch, dtype)
            else:
                prev = net.initial_input(batch, gen, dtype)
            indices = []
            for t in range(steps):
                logits, memory = net.step_logits(prev, syllables[:, t, :], memory)
                if mode == "argmax":
                    idx = logits.argmax(dim=-1)
                else:
                    idx = categorical_sample(logits, gen)
                prev = F.one_hot(idx, net.spec.vocab_size).to(dtype)
                indices.append(idx)
            outputs[name] = torch.stack(indices, dim=1)
        return MelodyTriplet(**outputs)

    def teacher_logits(self, syllables: Tensor, targets: MelodyTriplet) -> MelodyTriplet:
        """Teacher-forced logits for each stream (batch, T, vocab).

        The pass is fully deterministic: ground-truth one-hots drive every
        step after the first, the first step's previous-output stand-in is
        the simplex center, and no relaxation noise is drawn anywhere.
        """
        self._check_syllables(syllables)
        if targets.form != "index":
            raise ConfigurationError("teacher_logits expects index-form targets")
        dtype = self._param_dtype()
        batch, steps = syllables.shape[0], syllables.shape[1]
        outputs = {}
        for name, net in self.streams().items():
            target = targets.by_name(name)
            if tuple(target.shape) != (batch, steps):
                raise ConfigurationError(
                    f"{name} targets must have shape ({batch}, {steps}), got {tuple(target.shape)}")
            one_hots = F.one_hot(target, net.spec.vocab_size).to(dtype)
            memory = net.initial_memory(batch)
            prev = net.center_input(batch, dtype)
            logits_steps = []
            for t in range(steps):
                logits, memory = net.step_logits(prev, syllables[:, t, :], memory)
                logits_steps.append(logits)
                prev = one_hots[:, t, :]
            outputs[name] = torch.stack(logits_steps, dim=1)
        return MelodyTriplet(**outputs)

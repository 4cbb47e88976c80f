"""Relational memory cell: a recurrent core whose state is a small matrix of
memory slots updated by multi-head dot-product attention.

Per step: the input vector is projected to slot width and appended as an
extra row, each memory slot attends over [memory; input row], and the
attended result passes through a residual MLP (this attend+MLP block repeats
`num_blocks` times with shared weights). Scalar input/forget gates computed
from the pre-block memory and the projected input then blend the block
output into the carried state. The step output is the slot-mean of the block
result after a second residual MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ConfigurationError, NumericError
from .seeding import derive_seed


@dataclass(frozen=True)
class RmcConfig:
    """Shape of one relational memory cell."""

    num_slots: int
    head_size: int
    num_heads: int
    num_blocks: int
    input_dim: int

    def __post_init__(self):
        for name in ("num_slots", "head_size", "num_heads", "num_blocks", "input_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"RmcConfig.{name} must be a positive integer, got {value!r}")

    @property
    def slot_width(self) -> int:
        """Width of one memory row: num_heads * head_size."""
        return self.num_heads * self.head_size


def init_memory(config: RmcConfig) -> Tensor:
    """Initial memory (num_slots, slot_width), uniform in [-0.1, 0.1].

    Deterministic given the config alone: the seed is derived from the shape
    fields, so two cells with the same config start from identical memory.
    """
    seed = derive_seed("rmc-initial-memory", config.num_slots, config.head_size,
                       config.num_heads, config.num_blocks, config.input_dim)
    gen = torch.Generator().manual_seed(seed)
    memory = torch.empty(config.num_slots, config.slot_width)
    memory.uniform_(-0.1, 0.1, generator=gen)
    return memory


def reset_linear_parameters_(module: nn.Module, generator: torch.Generator) -> None:
    """Re-draw every nn.Linear in `module` from U(-1/sqrt(fan_in), +1/sqrt(fan_in)).

    Walks submodules in registration order, so the draw sequence (and hence
    the init) is reproducible from the generator's seed.
    """
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.Linear):
                bound = 1.0 / math.sqrt(sub.in_features)
                sub.weight.uniform_(-bound, bound, generator=generator)
                if sub.bias is not None:
                    sub.bias.uniform_(-bound, bound, generator=generator)


class RelationalMemoryCell(nn.Module):
    """One recurrent step over a (batch, num_slots, slot_width) memory."""

    def __init__(self, config: RmcConfig):
        super().__init__()
        self.config = config
        width = config.slot_width
        self.input_proj = nn.Linear(config.input_dim, width)
        self.query_proj = nn.Linear(width, width, bias=False)
        self.key_proj = nn.Linear(width, width, bias=False)
        self.value_proj = nn.Linear(width, width, bias=False)
        self.update_mlp = nn.Sequential(nn.Linear(width, width), nn.ReLU(), nn.Linear(width, width))
        self.output_mlp = nn.Sequential(nn.Linear(width, width), nn.ReLU(), nn.Linear(width, width))
        # per-slot scalar gates: column 0 input gate, column 1 forget gate
        self.gate_proj = nn.Linear(2 * width, 2)
        self.initial_memory = nn.Parameter(init_memory(config))
        self.reset_state_defaults_()

    def reset_state_defaults_(self) -> None:
        """Restore the non-random defaults: gate biases and initial memory.

        The forget bias starts at +1 so early steps keep most of their state;
        the input bias starts at 0.
        """
        with torch.no_grad():
            self.gate_proj.bias.copy_(torch.tensor([0.0, 1.0], dtype=self.gate_proj.bias.dtype))
            self.initial_memory.copy_(init_memory(self.config).to(self.initial_memory.dtype))

    def reset_parameters(self, generator: torch.Generator) -> None:
        reset_linear_parameters_(self, generator)
        self.reset_state_defaults_()

    def expand_initial_memory(self, batch: int) -> Tensor:
        """Initial memory broadcast over a batch; gradients flow to the parameter."""
        return self.initial_memory.unsqueeze(0).expand(batch, -1, -1)

    def _check_shapes(self, memory: Tensor, inputs: Tensor) -> None:
        cfg = self.config
        if memory.dim() != 3 or memory.shape[1] != cfg.num_slots or memory.shape[2] != cfg.slot_width:
            raise ConfigurationError(
                f"memory must have shape (batch, {cfg.num_slots}, {cfg.slot_width}), got {tuple(memory.shape)}")
        if inputs.dim() != 2 or inputs.shape[1] != cfg.input_dim:
            raise ConfigurationError(
                f"inputs must have shape (batch, {cfg.input_dim}), got {tuple(inputs.shape)}")
        if inputs.shape[0] != memory.shape[0]:
            raise ConfigurationError(
                f"batch mismatch: memory batch {memory.shape[0]} vs input batch {inputs.shape[0]}")

    def _attend(self, memory: Tensor, input_row: Tensor):
        """Multi-head attention of each slot over [memory; input row].

        Queries come from the memory only; keys and values from the memory
        with the input row appended. Head outputs are concatenated along the
        feature axis. Returns (proposed_memory, attention_weights).
        """
        cfg = self.config
        batch = memory.shape[0]
        rows = torch.cat([memory, input_row.unsqueeze(1)], dim=1)
        heads, depth = cfg.num_heads, cfg.head_size
        q = self.query_proj(memory).view(batch, cfg.num_slots, heads, depth).transpose(1, 2)
        k = self.key_proj(rows).view(batch, cfg.num_slots + 1, heads, depth).transpose(1, 2)
        v = self.value_proj(rows).view(batch, cfg.num_slots + 1, heads, depth).transpose(1, 2)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(depth), dim=-1)
        attended = weights @ v
        proposed = attended.transpose(1, 2).reshape(batch, cfg.num_slots, cfg.slot_width)
        return proposed, weights

    def attend(self, memory: Tensor, inputs: Tensor) -> Tensor:
        """One attention pass; returns the proposed memory (batch, slots, width)."""
        self._check_shapes(memory, inputs)
        proposed, _ = self._attend(memory, self.input_proj(inputs))
        return proposed

    def attention_weights(self, memory: Tensor, inputs: Tensor) -> Tensor:
        """Attention distributions (batch, heads, slots, slots + 1); rows sum to 1."""
        self._check_shapes(memory, inputs)
        _, weights = self._attend(memory, self.input_proj(inputs))
        return weights

    def forward(self, memory: Tensor, inputs: Tensor):
        """One step. Returns (output (batch, slot_width), new_memory like memory)."""
        self._check_shapes(memory, inputs)
        input_row = self.input_proj(inputs)

        blocks = memory
        for _ in range(self.config.num_blocks):
            proposed, _ = self._attend(blocks, input_row)
            blocks = blocks + proposed
            blocks = blocks + self.update_mlp(blocks)

        gate_in = torch.cat([memory, input_row.unsqueeze(1).expand(-1, self.config.num_slots, -1)], dim=-1)
        gates = self.gate_proj(gate_in)
        input_gate = torch.sigmoid(gates[..., 0:1])
        forget_gate = torch.sigmoid(gates[..., 1:2])
        new_memory = forget_gate * memory + input_gate * torch.tanh(blocks)

        output_rows = blocks + self.output_mlp(blocks)
        output = output_rows.mean(dim=1)

        if not bool(torch.isfinite(new_memory).all()) or not bool(torch.isfinite(output).all()):
            raise NumericError("rmc_step produced non-finite values")
        return output, new_memory

"""Two-phase optimization: teacher-forced pretraining, then adversarial
fine-tuning with a sharpening Gumbel-Softmax relaxation.

Every random stream (shuffles, teacher-forcing noise, relaxation noise) is
derived from (config seed, phase, epoch[, batch]) so that resuming from a
checkpoint at an epoch boundary reproduces the uninterrupted run bit for
bit. Checkpoints are versioned torch containers carrying both state dicts,
both optimizer states, and a digest of the config that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import data, metrics
from .data import AlignedRecord, ValueTables
from .discriminator import (TripletDiscriminator, canonical_discriminator_config, d_loss,
                            g_loss, small_discriminator_config)
from .errors import ConfigurationError, DataValidationError, NumericError
from .generator import (ATTRIBUTE_NAMES, MelodyGenerator, MelodyTriplet,
                        canonical_attribute_specs, small_attribute_specs)
from .gumbel import TemperatureSchedule, beta_at
from .seeding import derive_seed

CHECKPOINT_VERSION = 1

METRICS_LOG_COLUMNS = ("epoch", "phase", "self_bleu", "mmd_pitch", "mmd_duration",
                       "mmd_rest", "mmd_overall", "d_loss", "g_loss")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; the defaults are the full-scale configuration."""

    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_epsilon: float = 1e-8
    pretrain_epochs: int = 40
    adversarial_epochs: int = 120
    batch_size: int = 512
    clip_norm: float = 5.0
    beta_max: float = 1000.0
    seed: int = 0
    eval_every: int = 5
    profile: str = "full"

    def __post_init__(self):
        if self.profile not in ("full", "small"):
            raise ConfigurationError(f"profile must be 'full' or 'small', got {self.profile!r}")
        for name in ("learning_rate", "clip_norm", "adam_epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"TrainConfig.{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"TrainConfig.{name} must lie in [0, 1)")
        if not self.beta_max >= 1.0:
            raise ConfigurationError("TrainConfig.beta_max must be at least 1")
        for name in ("batch_size", "eval_every"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"TrainConfig.{name} must be a positive integer")
        for name in ("pretrain_epochs", "adversarial_epochs"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigurationError(f"TrainConfig.{name} must be a nonnegative integer")

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.adversarial_epochs


def small_train_config(**overrides) -> TrainConfig:
    """Desk-scale profile: batch 32, short phases, quarter-size networks."""
    base = dict(batch_size=32, pretrain_epochs=5, adversarial_epochs=10, profile="small")
    base.update(overrides)
    return TrainConfig(**base)


def config_digest(config: TrainConfig) -> str:
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def attribute_specs_for(profile: str):
    return canonical_attribute_specs() if profile == "full" else small_attribute_specs()


def discriminator_config_for(profile: str):
    return canonical_discriminator_config() if profile == "full" else small_discriminator_config()


def build_generator(config: TrainConfig) -> MelodyGenerator:
    return MelodyGenerator(attribute_specs_for(config.profile),
                           seed=derive_seed(config.seed, "generator"))


def build_discriminator(config: TrainConfig) -> TripletDiscriminator:
    return TripletDiscriminator(discriminator_config_for(config.profile),
                                seed=derive_seed(config.seed, "discriminator"))


def make_adam(module: nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=config.learning_rate,
                            betas=(config.adam_beta1, config.adam_beta2),
                            eps=config.adam_epsilon)


def global_grad_norm(parameters) -> float:
    total = 0.0
    for p in parameters:
        if p.grad is not None:
            total += float(p.grad.detach().double().pow(2).sum())
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# corpus tensors


@dataclass
class CorpusTensors:
    """A record list reshaped into batched tensors."""

    syllables: torch.Tensor  # (N, T, syllable_dim) float
    pitch: torch.Tensor      # (N, T) long
    duration: torch.Tensor   # (N, T) long
    rest: torch.Tensor       # (N, T) long
    song_ids: tuple

    def __len__(self) -> int:
        return self.syllables.shape[0]

    def select(self, idx: torch.Tensor) -> "CorpusTensors":
        return CorpusTensors(
            syllables=self.syllables[idx],
            pitch=self.pitch[idx],
            duration=self.duration[idx],
            rest=self.rest[idx],
            song_ids=tuple(self.song_ids[int(i)] for i in idx),
        )


def corpus_tensors(records, embedding_table: dict | None = None,
                   dtype=torch.float32) -> CorpusTensors:
    """Stack records into tensors, embedding syllables via per-record
    embeddings or the supplied table."""
    records = list(records)
    if not records:
        raise ConfigurationError("corpus_tensors needs at least one record")
    problems = []
    syllable_rows = []
    for record in records:
        if record.syllable_embeddings is not None:
            syllable_rows.append(np.asarray(record.syllable_embeddings, dtype=np.float64))
        elif embedding_table is not None:
            syllable_rows.append(data.embed_syllables(record.syllable_tokens, embedding_table))
        else:
            raise ConfigurationError(
                f"record {record.song_id!r} has no embeddings and no embedding table was supplied")
        bounds = (("pitch", record.pitch_idx, data.PITCH_VOCAB),
                  ("duration", record.duration_idx, data.DURATION_VOCAB),
                  ("rest", record.rest_idx, data.REST_VOCAB))
        for name, idx, vocab in bounds:
            if any(not 0 <= int(i) < vocab for i in idx):
                problems.append(f"record {record.song_id!r}: {name} index outside [0, {vocab})")
    if problems:
        raise DataValidationError(problems)
    return CorpusTensors(
        syllables=torch.as_tensor(np.stack(syllable_rows), dtype=dtype),
        pitch=torch.as_tensor(np.asarray([r.pitch_idx for r in records]), dtype=torch.long),
        duration=torch.as_tensor(np.asarray([r.duration_idx for r in records]), dtype=torch.long),
        rest=torch.as_tensor(np.asarray([r.rest_idx for r in records]), dtype=torch.long),
        song_ids=tuple(r.song_id for r in records),
    )


def one_hot_melody(batch: CorpusTensors, generator: MelodyGenerator) -> MelodyTriplet:
    dtype = next(generator.parameters()).dtype
    return MelodyTriplet(
        pitch=F.one_hot(batch.pitch, generator.pitch.spec.vocab_size).to(dtype),
        duration=F.one_hot(batch.duration, generator.duration.spec.vocab_size).to(dtype),
        rest=F.one_hot(batch.rest, generator.rest.spec.vocab_size).to(dtype),
    )


def records_from_indices(triplet: MelodyTriplet, source_records) -> list:
    """Wrap generated index tensors as records, inheriting id and syllables."""
    if triplet.form != "index":
        raise ConfigurationError("records_from_indices expects index-form melodies")
    pitch = triplet.pitch.cpu().numpy()
    duration = triplet.duration.cpu().numpy()
    rest = triplet.rest.cpu().numpy()
    source_records = list(source_records)
    if pitch.shape[0] != len(source_records):
        raise ConfigurationError(
            f"got {pitch.shape[0]} generated melodies for {len(source_records)} source records")
    out = []
    for i, src in enumerate(source_records):
        out.append(AlignedRecord(
            song_id=src.song_id,
            syllable_tokens=src.syllable_tokens,
            pitch_idx=tuple(int(v) for v in pitch[i]),
            duration_idx=tuple(int(v) for v in duration[i]),
            rest_idx=tuple(int(v) for v in rest[i]),
        ))
    return out


# ---------------------------------------------------------------------------
# losses and epochs


def mle_loss(generator: MelodyGenerator, syllables: torch.Tensor, targets: MelodyTriplet):
    """Teacher-forced loss: sum over attributes of the mean per-step cross-entropy.

    Fully deterministic in the inputs. Returns (total, per_attribute dict of
    detached floats).
    """
    logits = generator.teacher_logits(syllables, targets)
    per_attribute = {}
    total = None
    for name in ATTRIBUTE_NAMES:
        lg = logits.by_name(name)
        tg = targets.by_name(name)
        loss = F.cross_entropy(lg.reshape(-1, lg.shape[-1]), tg.reshape(-1))
        per_attribute[name] = float(loss.detach())
        total = loss if total is None else total + loss
    if not bool(torch.isfinite(total.detach())):
        raise NumericError("teacher-forced loss is non-finite")
    return total, per_attribute


def _mle_epoch(generator, optimizer, tensors: CorpusTensors, config: TrainConfig,
               epoch: int) -> float:
    rng = torch.Generator().manual_seed(derive_seed(config.seed, "mle-epoch", epoch))
    perm = torch.randperm(len(tensors), generator=rng)
    batch_losses = []
    for batch_no, start in enumerate(range(0, len(tensors), config.batch_size)):
        batch = tensors.select(perm[start:start + config.batch_size])
        targets = MelodyTriplet(batch.pitch, batch.duration, batch.rest)
        try:
            total, _ = mle_loss(generator, batch.syllables, targets)
        except NumericError as exc:
            raise NumericError(f"MLE epoch {epoch} batch {batch_no}: {exc}") from exc
        optimizer.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(generator.parameters(), config.clip_norm)
        optimizer.step()
        batch_losses.append(float(total.detach()))
    return float(np.mean(batch_losses))


def pretrain_mle(records, config: TrainConfig, *, embedding_table: dict | None = None,
                 generator: MelodyGenerator | None = None):
    """Run the teacher-forced phase alone. Returns (generator, per-epoch NLL list).

    With pretrain_epochs == 0 the generator's parameters are returned
    untouched.
    """
    tensors = corpus_tensors(records, embedding_table)
    if generator is None:
        generator = build_generator(config)
    optimizer = make_adam(generator, config)
    nll_log = []
    for epoch in range(1, config.pretrain_epochs + 1):
        nll_log.append(_mle_epoch(generator, optimizer, tensors, config, epoch))
    return generator, nll_log


@dataclass(frozen=True)
class AdversarialEpochLog:
    epoch_index: int
    beta: float
    d_loss: float
    g_loss: float
    max_disc_grad_norm: float
    max_gen_grad_norm: float


def _check_loss_finite(loss: torch.Tensor, which: str, epoch: int, batch_no: int) -> None:
    if not bool(torch.isfinite(loss.detach())):
        raise NumericError(f"{which} loss non-finite at adversarial epoch {epoch} batch {batch_no}")


def adversarial_epoch(generator: MelodyGenerator, discriminator: TripletDiscriminator,
                      gen_opt, disc_opt, tensors: CorpusTensors, config: TrainConfig,
                      schedule: TemperatureSchedule, epoch_index: int) -> AdversarialEpochLog:
    """One pass over the corpus at the epoch's inverse temperature.

    Per batch: one critic update against detached relaxed samples, then one
    generator update through freshly sampled relaxed output. Both updates
    clip to the configured global gradient norm.
    """
    beta = beta_at(schedule, epoch_index)
    rng = torch.Generator().manual_seed(derive_seed(config.seed, "adv-epoch", epoch_index))
    perm = torch.randperm(len(tensors), generator=rng)
    d_losses, g_losses = [], []
    max_disc_norm = 0.0
    max_gen_norm = 0.0
    for batch_no, start in enumerate(range(0, len(tensors), config.batch_size)):
        batch = tensors.select(perm[start:start + config.batch_size])
        syllables = batch.syllables
        real = one_hot_melody(batch, generator)

        fake = generator.generate_relaxed(
            syllables, beta, seed=derive_seed(config.seed, "adv-fake", epoch_index, batch_no, "disc"))
        real_scores = discriminator.score_sequence(real, syllables)
        fake_scores = discriminator.score_sequence(fake.detached(), syllables)
        loss_d = d_loss(real_scores.mean, fake_scores.mean).mean()
        _check_loss_finite(loss_d, "critic", epoch_index, batch_no)
        disc_opt.zero_grad()
        loss_d.backward()
        nn.utils.clip_grad_norm_(discriminator.parameters(), config.clip_norm)
        max_disc_norm = max(max_disc_norm, global_grad_norm(discriminator.parameters()))
        disc_opt.step()

        fake = generator.generate_relaxed(
            syllables, beta, seed=derive_seed(config.seed, "adv-fake", epoch_index, batch_no, "gen"))
        fake_scores = discriminator.score_sequence(fake, syllables)
        real_scores = discriminator.score_sequence(real, syllables)
        loss_g = g_loss(real_scores.mean, fake_scores.mean).mean()
        _check_loss_finite(loss_g, "generator", epoch_index, batch_no)
        gen_opt.zero_grad()
        disc_opt.zero_grad()
        loss_g.backward()
        nn.utils.clip_grad_norm_(generator.parameters(), config.clip_norm)
        max_gen_norm = max(max_gen_norm, global_grad_norm(generator.parameters()))
        gen_opt.step()

        d_losses.append(float(loss_d.detach()))
        g_losses.append(float(loss_g.detach()))
    return AdversarialEpochLog(
        epoch_index=epoch_index,
        beta=beta,
        d_loss=float(np.mean(d_losses)),
        g_loss=float(np.mean(g_losses)),
        max_disc_grad_norm=max_disc_norm,
        max_gen_grad_norm=max_gen_norm,
    )


# ---------------------------------------------------------------------------
# evaluation during training


def evaluate_generator(generator: MelodyGenerator, tensors: CorpusTensors, records,
                       tables: ValueTables, seed: int = 0,
                       kernel: metrics.KernelSpec = metrics.KernelSpec()) -> dict:
    """Argmax-decode the given split and score it against its ground truth."""
    triplet = generator.generate_index(tensors.syllables, mode="argmax", seed=seed)
    generated = records_from_indices(triplet, records)
    tokens = metrics.melody_tokens(generated)
    bleu = metrics.self_bleu(tokens) if len(tokens) >= 2 else float("nan")
    mmds = metrics.mmd_by_attribute(generated, list(records), tables, kernel)
    return {
        "self_bleu": bleu,
        "mmd_pitch": mmds["pitch"],
        "mmd_duration": mmds["duration"],
        "mmd_rest": mmds["rest"],
        "mmd_overall": mmds["overall"],
    }


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, *, config: TrainConfig, phase: str, epoch: int,
                    generator: MelodyGenerator, discriminator: TripletDiscriminator | None = None,
                    gen_optimizer=None, disc_optimizer=None) -> None:
    if phase not in ("mle", "adversarial"):
        raise ConfigurationError(f"phase must be 'mle' or 'adversarial', got {phase!r}")
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(config),
        "config_digest": config_digest(config),
        "phase": phase,
        "epoch": epoch,
        "generator_state": generator.state_dict(),
        "discriminator_state": discriminator.state_dict() if discriminator is not None else None,
        "gen_optimizer_state": gen_optimizer.state_dict() if gen_optimizer is not None else None,
        "disc_optimizer_state": disc_optimizer.state_dict() if disc_optimizer is not None else None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp_name)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint format in {path} "
            f"(expected format_version {CHECKPOINT_VERSION})")
    config = TrainConfig(**payload["config"])
    if config_digest(config) != payload.get("config_digest"):
        raise ConfigurationError(f"checkpoint config digest mismatch in {path}")
    return payload


def models_from_checkpoint(payload: dict):
    """Rebuild (config, generator, discriminator) from a loaded checkpoint."""
    config = TrainConfig(**payload["config"])
    generator = build_generator(config)
    generator.load_state_dict(payload["generator_state"])
    discriminator = build_discriminator(config)
    if payload.get("discriminator_state") is not None:
        discriminator.load_state_dict(payload["discriminator_state"])
    return config, generator, discriminator


# ---------------------------------------------------------------------------
# full run


@dataclass
class TrainResult:
    out_dir: Path
    epochs_completed: int
    metrics_log: Path
    pretrain_nll_log: Path
    latest_checkpoint: Path
    mle_checkpoint: Path | None
    final_checkpoint: Path | None


def _append_csv_row(path: Path, header: str, row: str) -> None:
    if path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        text = header + "\n"
    data.atomic_write_text(path, text + row + "\n")


def _format_float(value: float) -> str:
    return repr(float(value))


def train(config: TrainConfig, dataset_path, out_dir, *, resume=None,
          stop_after_epoch: int | None = None) -> TrainResult:
    """Full run: split the corpus, pretrain, adversarially fine-tune.

    Writes metrics_log.csv (one row per evaluation epoch, including epoch 0),
    pretrain_nll.csv, a rolling latest.ckpt every epoch, mle.ckpt at the
    phase boundary, and final.ckpt at the end. `resume` continues from a
    checkpoint written by a run with an identical config; the combined run's
    outputs are bit-identical to an uninterrupted one. `stop_after_epoch`
    ends the run early after that global epoch (used to exercise resume).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, tables, embedding_table = data.load_dataset(dataset_path)
    split = data.split_dataset(records, config.seed)
    train_tensors = corpus_tensors(split.train, embedding_table)
    test_tensors = corpus_tensors(split.test, embedding_table)

    metrics_log = out_dir / "metrics_log.csv"
    nll_log = out_dir / "pretrain_nll.csv"
    latest_ckpt = out_dir / "latest.ckpt"
    mle_ckpt = out_dir / "mle.ckpt"
    final_ckpt = out_dir / "final.ckpt"

    pretrain = config.pretrain_epochs
    total = config.total_epochs
    schedule = (TemperatureSchedule(config.beta_max, config.adversarial_epochs)
                if config.adversarial_epochs > 0 else None)
    eval_seed = derive_seed(config.seed, "train-eval")

    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["config_digest"] != config_digest(config):
            raise ConfigurationError("resume checkpoint was written with a different config")
        generator = build_generator(config)
        generator.load_state_dict(payload["generator_state"])
        discriminator = build_discriminator(config)
        if payload.get("discriminator_state") is not None:
            discriminator.load_state_dict(payload["discriminator_state"])
        start_epoch = payload["epoch"] + 1
        if start_epoch <= pretrain:
            gen_opt = make_adam(generator, config)
            disc_opt = None
            if payload.get("gen_optimizer_state") is not None:
                gen_opt.load_state_dict(payload["gen_optimizer_state"])
        else:
            gen_opt = make_adam(generator, config)
            disc_opt = make_adam(discriminator, config)
            if payload["phase"] == "adversarial":
                if payload.get("gen_optimizer_state") is not None:
                    gen_opt.load_state_dict(payload["gen_optimizer_state"])
                if payload.get("disc_optimizer_state") is not None:
                    disc_opt.load_state_dict(payload["disc_optimizer_state"])
            # resuming from the phase-boundary checkpoint starts the
            # adversarial phase with fresh optimizers, same as an
            # uninterrupted run
    else:
        generator = build_generator(config)
        discriminator = build_discriminator(config)
        gen_opt = make_adam(generator, config)
        disc_opt = None
        start_epoch = 1

    header = ",".join(METRICS_LOG_COLUMNS)

    def _eval_row(epoch: int, phase: str, d_mean: float, g_mean: float) -> None:
        scores = evaluate_generator(generator, test_tensors, split.test, tables, seed=eval_seed)
        row = ",".join([str(epoch), phase] + [_format_float(v) for v in (
            scores["self_bleu"], scores["mmd_pitch"], scores["mmd_duration"],
            scores["mmd_rest"], scores["mmd_overall"], d_mean, g_mean)])
        _append_csv_row(metrics_log, header, row)

    if start_epoch == 1:
        _eval_row(0, "init", float("nan"), float("nan"))

    last_epoch_run = start_epoch - 1
    for epoch in range(start_epoch, total + 1):
        if stop_after_epoch is not None and epoch > stop_after_epoch:
            break
        if epoch == pretrain + 1:
            # phase boundary: adversarial fine-tuning starts from fresh Adam state
            gen_opt = make_adam(generator, config)
            disc_opt = make_adam(discriminator, config)
        if epoch <= pretrain:
            nll = _mle_epoch(generator, gen_opt, train_tensors, config, epoch)
            _append_csv_row(nll_log, "epoch,nll", f"{epoch},{_format_float(nll)}")
            phase, d_mean, g_mean = "mle", float("nan"), float("nan")
            save_checkpoint(latest_ckpt, config=config, phase="mle", epoch=epoch,
                            generator=generator, discriminator=discriminator,
                            gen_optimizer=gen_opt)
            if epoch == pretrain:
                save_checkpoint(mle_ckpt, config=config, phase="mle", epoch=epoch,
                                generator=generator, discriminator=discriminator,
                                gen_optimizer=gen_opt)
        else:
            log = adversarial_epoch(generator, discriminator, gen_opt, disc_opt,
                                    train_tensors, config, schedule, epoch - pretrain - 1)
            phase, d_mean, g_mean = "adversarial", log.d_loss, log.g_loss
            save_checkpoint(latest_ckpt, config=config, phase="adversarial", epoch=epoch,
                            generator=generator, discriminator=discriminator,
                            gen_optimizer=gen_opt, disc_optimizer=disc_opt)
        if epoch % config.eval_every == 0:
            _eval_row(epoch, phase, d_mean, g_mean)
        last_epoch_run = epoch

    completed = last_epoch_run == total
    if completed:
        final_phase = "adversarial" if config.adversarial_epochs > 0 else "mle"
        save_checkpoint(final_ckpt, config=config, phase=final_phase, epoch=total,
                        generator=generator, discriminator=discriminator,
                        gen_optimizer=gen_opt, disc_optimizer=disc_opt)
    return TrainResult(
        out_dir=out_dir,
        epochs_completed=last_epoch_run,
        metrics_log=metrics_log,
        pretrain_nll_log=nll_log,
        latest_checkpoint=latest_ckpt,
        mle_checkpoint=mle_ckpt if pretrain > 0 and last_epoch_run >= pretrain else None,
        final_checkpoint=final_ckpt if completed else None,
    )

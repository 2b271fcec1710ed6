"""Alternating generator/discriminator training with resumable checkpoints."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .cache import SampleSet, read_cache
from .discriminator import PatchDiscriminator
from .errors import CheckpointError, ConfigurationError, TrainingDivergenceError
from .generator import Generator, GeneratorConfig
from .losses import (FeatureExtractor, LossReport, VGGLossConfig, fm_loss, gan_loss_d,
                     gan_loss_g, total_g_loss, vgg_loss)
from .qp import QP_SET

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dcngan-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("step",) + LossReport.FIELDS


@dataclass
class TrainingConfig:
    batch_size: int = 32
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 1000
    seed: int = 0
    qp_set: tuple = QP_SET
    patch: int = 128
    checkpoint_every: int = 0
    log_every: int = 50
    loss_weights: tuple = (1.0, 1.0, 1.0)
    ndf: int = 64
    train_data: str | None = None
    out_dir: str | None = None
    resume: str | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    vgg: VGGLossConfig = field(default_factory=VGGLossConfig)

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        if isinstance(self.vgg, dict):
            self.vgg = VGGLossConfig(**self.vgg)
        self.betas = tuple(float(b) for b in self.betas)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.qp_set = tuple(sorted(int(q) for q in self.qp_set))
        if not self.lr >= 0:
            raise ConfigurationError("lr must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.qp_set or any(not 0 <= q <= 51 for q in self.qp_set):
            raise ConfigurationError("qp_set must be a non-empty subset of [0, 51]")
        missing = set(self.qp_set) - set(self.generator.qp_set)
        if missing:
            raise ConfigurationError(f"QPs {sorted(missing)} are not in the model's QP set {self.generator.qp_set}")

    @classmethod
    def desk(cls, **overrides) -> "TrainingConfig":
        """Small configuration that trains on one CPU core in minutes."""
        base = dict(
            batch_size=8, patch=64, steps=2000, ndf=16,
            generator=GeneratorConfig(align_channels=16, base_channels=16, unet_base=8),
            vgg=VGGLossConfig(width=0.25),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        """Load a YAML (or JSON) config; a ``preset: desk`` key starts from :meth:`desk`."""
        import yaml

        raw = yaml.safe_load(Path(path).read_text()) or {}
        preset = raw.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if preset == "desk":
            defaults = cls.desk()
            for key in ("generator", "vgg"):
                if key in raw:
                    merged = asdict(getattr(defaults, key))
                    merged.update(raw[key])
                    raw[key] = merged
            return cls.desk(**raw)
        if preset is not None:
            raise ConfigurationError(f"unknown preset {preset!r}")
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"] = self.generator.to_dict()
        d["betas"] = list(self.betas)
        d["loss_weights"] = list(self.loss_weights)
        d["qp_set"] = list(self.qp_set)
        d["vgg"]["layer_ids"] = list(self.vgg.layer_ids)
        return d


@dataclass
class Batch:
    degraded: torch.Tensor  # (B, 3, P, P)
    target: torch.Tensor  # (B, 1, P, P)
    qp: list

    @classmethod
    def from_samples(cls, samples) -> "Batch":
        if not samples:
            raise ValueError("empty batch")
        ss = samples if isinstance(samples, SampleSet) else SampleSet.from_samples(samples)
        return cls(torch.from_numpy(ss.degraded), torch.from_numpy(ss.target).unsqueeze(1),
                   [int(q) for q in ss.qp])


def load_training_data(config: TrainingConfig) -> SampleSet:
    if not config.train_data:
        raise ConfigurationError("no train_data path configured")
    path = Path(config.train_data)
    if not path.exists():
        raise ConfigurationError(f"training split {path} does not exist")
    data = read_cache(path)
    present = set(int(q) for q in np.unique(data.qp))
    missing = set(config.qp_set) - present
    if missing:
        raise ConfigurationError(f"training split {path} has no samples for QP {sorted(missing)}")
    if data.target.shape[1:] != (config.patch, config.patch):
        raise ConfigurationError(
            f"training split {path} holds {data.target.shape[1:]} patches, config expects {config.patch}"
        )
    return data.subset(np.isin(data.qp, config.qp_set))


class Trainer:
    """Owns the networks, optimizers and the seeded batch schedule."""

    def __init__(self, config: TrainingConfig, data: SampleSet | None = None):
        self.config = config
        self.data = data
        torch.manual_seed(config.seed)
        self.generator = Generator(config.generator)
        self.discriminator = PatchDiscriminator(config.ndf)
        self.extractor = FeatureExtractor(config.vgg)
        adam = dict(lr=config.lr, betas=config.betas, eps=config.eps)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), **adam)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), **adam)
        self.step = 0

    # -- data schedule ---------------------------------------------------------

    def batch_indices(self, step: int) -> np.ndarray:
        """Sample indices of (0-based) ``step``: a stream of seeded per-epoch permutations."""
        n, b = len(self.data), self.config.batch_size
        pos = np.arange(step * b, (step + 1) * b)
        epochs, offsets = pos // n, pos % n
        perms = {e: np.random.default_rng([self.config.seed, int(e)]).permutation(n) for e in np.unique(epochs)}
        return np.asarray([perms[e][o] for e, o in zip(epochs, offsets)])

    def batch(self, step: int) -> Batch:
        return Batch.from_samples(self.data.subset(self.batch_indices(step)))

    # -- optimization ----------------------------------------------------------

    def train_step(self, batch) -> LossReport:
        """One discriminator update followed by one generator update."""
        if not isinstance(batch, Batch):
            batch = Batch.from_samples(batch)
        step = self.step + 1
        G, D = self.generator, self.discriminator
        G.train()
        D.train()
        fake = G(batch.degraded, batch.qp)

        D.requires_grad_(True)
        l_d = gan_loss_d(D(batch.target), D(fake.detach()))
        if not math.isfinite(l_d.item()):
            raise TrainingDivergenceError(f"non-finite l_gan_d at step {step}", step=step, term="l_gan_d")
        self.opt_d.zero_grad(set_to_none=True)
        l_d.backward()
        self.opt_d.step()

        D.requires_grad_(False)
        scores_fake, feats_fake = D(fake, return_features=True)
        with torch.no_grad():
            _, feats_real = D(batch.target, return_features=True)
        l_g = gan_loss_g(scores_fake)
        l_vgg = vgg_loss(batch.target, fake, self.extractor)
        l_fm = fm_loss(feats_real, feats_fake, self.config.vgg.channel_reduction)
        total = total_g_loss(l_g, l_vgg, l_fm, self.config.loss_weights, step=step)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        D.requires_grad_(True)

        self.step = step
        return LossReport(l_g.item(), l_d.item(), l_vgg.item(), l_fm.item(), total.item())

    # -- checkpoints -----------------------------------------------------------

    def state(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "config": self.config.to_dict(),
            "qp_set": list(self.config.generator.qp_set),
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "rng": {"seed": self.config.seed, "torch": torch.get_rng_state()},
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state(), path)
        return path

    def load_state(self, state: dict):
        _check_header(state)
        _load_module(self.generator, state["generator"], "generator")
        _load_module(self.discriminator, state["discriminator"], "discriminator")
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        torch.set_rng_state(state["rng"]["torch"])
        self.step = int(state["step"])

    @classmethod
    def from_checkpoint(cls, path, data: SampleSet | None = None, **overrides) -> "Trainer":
        state = read_checkpoint(path)
        cfg = state["config"]
        cfg.update(overrides)
        trainer = cls(TrainingConfig(**cfg), data)
        trainer.load_state(state)
        return trainer


def _check_header(state):
    if not isinstance(state, dict) or state.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a dcngan checkpoint")
    if state.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {state.get('version')}")


def _load_module(module, tensors, name):
    own = module.state_dict()
    problems = [f"missing {k}" for k in own if k not in tensors]
    problems += [f"unexpected {k}" for k in tensors if k not in own]
    problems += [
        f"{k}: checkpoint {tuple(tensors[k].shape)} vs config {tuple(v.shape)}"
        for k, v in own.items() if k in tensors and tensors[k].shape != v.shape
    ]
    if problems:
        raise CheckpointError(f"{name} parameters do not match the architecture config: " + "; ".join(problems[:10]))
    module.load_state_dict(tensors)


def read_checkpoint(path) -> dict:
    try:
        state = torch.load(Path(path), map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    _check_header(state)
    return state


def load_generator(path) -> Generator:
    """Generator from a checkpoint, in inference mode."""
    state = read_checkpoint(path)
    gen = Generator(GeneratorConfig(**state["config"]["generator"]))
    _load_module(gen, state["generator"], "generator")
    return gen.eval()


def load_discriminator(path) -> PatchDiscriminator:
    state = read_checkpoint(path)
    disc = PatchDiscriminator(state["config"]["ndf"])
    _load_module(disc, state["discriminator"], "discriminator")
    return disc.eval()


def _format_row(step, report: LossReport):
    return [step] + [repr(v) for v in report.as_row()]


def train(config: TrainingConfig, data: SampleSet | None = None) -> Path:
    """Run training to ``config.steps`` and return the final checkpoint path.

    Writes ``loss_log.csv``, periodic ``ckpt_XXXXXXX.pt`` files and
    ``final.pt`` to ``config.out_dir``. With ``config.resume`` set, training
    continues from that checkpoint and existing log rows up to its step are
    kept, so the log matches an uninterrupted run.
    """
    if data is None:
        data = load_training_data(config)
    if not config.out_dir:
        raise ConfigurationError("no out_dir configured")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.resume:
        trainer = Trainer.from_checkpoint(config.resume, data, steps=config.steps,
                                          out_dir=config.out_dir, resume=config.resume,
                                          train_data=config.train_data)
    else:
        trainer = Trainer(config, data)
    log_path = out / "loss_log.csv"
    rows = []
    if config.resume and log_path.exists():
        with open(log_path, newline="") as fh:
            rows = [r for r in list(csv.reader(fh))[1:] if int(r[0]) <= trainer.step]
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(rows)
        while trainer.step < config.steps:
            report = trainer.train_step(trainer.batch(trainer.step))
            writer.writerow(_format_row(trainer.step, report))
            if config.log_every and trainer.step % config.log_every == 0:
                fh.flush()
                logger.info("step %d  l_gan_g %.4f  l_gan_d %.4f  l_vgg %.4f  l_fm %.4f",
                            trainer.step, report.l_gan_g, report.l_gan_d, report.l_vgg, report.l_fm)
            if config.checkpoint_every and trainer.step % config.checkpoint_every == 0:
                trainer.save(out / f"ckpt_{trainer.step:07d}.pt")
    return trainer.save(out / "final.pt")

"""Adversarial training of the residual generator against a critic.

Minimizes the Wasserstein objective with gradient penalty on the critic side
and an L1 identity penalty on the generator side. The critic takes n_critic
updates per generator update; parameters are snapshotted at evenly spaced
checkpoint epochs for later ensembling.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .images import DatasetManifest
from .networks import (
    Critic,
    NetworkConfig,
    ResidualGenerator,
    save_checkpoint,
)
from .patches import build_grid, extract


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    p: int = 256  # patch size, pixels
    s: int = 60  # patch stride, pixels
    d: int = 2  # integer downscale factor applied before patching
    l1_weight: float = 50.0  # weight of the per-element L1 identity penalty
    learning_rate: float = 1e-3
    gp_weight: float = 10.0  # gradient-penalty weight
    n_critic: int = 5  # critic updates per generator update
    max_epochs: int = 500
    checkpoint_window: tuple[int, int] = (300, 500)
    n_ensemble: int = 9
    seed: int = 0
    batch_size: int = 16
    direction: tuple[int, int] = (0, 1)  # (source group, target group)
    adam_betas: tuple[float, float] = (0.0, 0.9)
    max_steps: int | None = None  # optional hard cap on optimizer updates
    base_width: int = 64
    depth: int = 4
    critic_blocks: int = 5
    critic_base_width: int = 64

    def __post_init__(self):
        if self.p < 1 or self.s < 1 or self.d < 1:
            raise ValueError("p, s, d must all be >= 1")
        if self.l1_weight < 0 or self.gp_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.n_critic < 1:
            raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        start, end = self.checkpoint_window
        if not (1 <= start <= end <= self.max_epochs):
            raise ValueError(
                f"checkpoint window {self.checkpoint_window} must lie within "
                f"[1, {self.max_epochs}]"
            )
        if self.n_ensemble < 1:
            raise ValueError(f"n_ensemble must be >= 1, got {self.n_ensemble}")
        if self.n_ensemble > 1 and (end - start) % (self.n_ensemble - 1) != 0:
            raise ValueError(
                f"{self.n_ensemble} checkpoints do not fit evenly in window "
                f"({start}, {end})"
            )
        if sorted(self.direction) != [0, 1]:
            raise ValueError(f"direction must pair groups 0 and 1, got {self.direction}")

    def network_config(self, channels: int) -> NetworkConfig:
        return NetworkConfig(
            channels=channels,
            base_width=self.base_width,
            depth=self.depth,
            critic_blocks=self.critic_blocks,
            critic_base_width=self.critic_base_width,
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        known = dict(data)
        for key in ("checkpoint_window", "direction", "adam_betas"):
            if key in known and known[key] is not None:
                known[key] = tuple(known[key])
        return cls(**known)


def checkpoint_epochs(window: tuple[int, int], n: int) -> list[int]:
    """The n evenly spaced epochs of [start, end], inclusive of both ends."""
    start, end = window
    if n == 1:
        return [end]
    if (end - start) % (n - 1) != 0:
        raise ValueError(f"{n} checkpoints do not fit evenly in window {window}")
    step = (end - start) // (n - 1)
    return [start + i * step for i in range(n)]


def gradient_penalty(
    critic: Critic, real: torch.Tensor, fake: torch.Tensor, eps: torch.Tensor
) -> torch.Tensor:
    """Mean squared deviation of the critic's input-gradient norm from 1,
    evaluated on per-sample interpolates eps*real + (1-eps)*fake."""
    mixed = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
    scores = critic(mixed)
    grads = torch.autograd.grad(
        outputs=scores.sum(), inputs=mixed, create_graph=True
    )[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


@dataclass
class TelemetryRow:
    step: int
    epoch: int
    kind: str  # "critic" or "generator"
    loss: float
    wasserstein: float | None = None  # critic rows
    penalty: float | None = None  # critic rows (unweighted)
    adversarial: float | None = None  # generator rows
    l1: float | None = None  # generator rows (unweighted mean abs residual)


TELEMETRY_COLUMNS = ["step", "epoch", "kind", "loss", "wasserstein", "penalty", "adversarial", "l1"]


@dataclass
class TrainRun:
    """Everything a finished training run leaves behind."""

    config: TrainConfig
    network: NetworkConfig
    generator: ResidualGenerator
    critic: Critic
    telemetry: list[TelemetryRow] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)  # (epoch, val L1)
    checkpoints: dict[int, dict] = field(default_factory=dict)  # epoch -> state_dict
    steps: int = 0
    epochs_run: int = 0

    @property
    def checkpoint_schedule(self) -> list[int]:
        return checkpoint_epochs(self.config.checkpoint_window, self.config.n_ensemble)


class Trainer:
    """Owns the two networks, their optimizers, and the telemetry log.

    generator/critic default to the configured architectures but can be any
    modules with parameters — analytic stand-ins are used in the tests.
    """

    def __init__(
        self,
        config: TrainConfig,
        network: NetworkConfig,
        generator: torch.nn.Module | None = None,
        critic: torch.nn.Module | None = None,
    ):
        self.config = config
        self.generator = generator if generator is not None else ResidualGenerator(network)
        self.critic = critic if critic is not None else Critic(network)
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(), lr=config.learning_rate, betas=config.adam_betas
        )
        self.opt_c = torch.optim.Adam(
            self.critic.parameters(), lr=config.learning_rate, betas=config.adam_betas
        )
        self.run = TrainRun(
            config=config, network=network, generator=self.generator, critic=self.critic
        )
        self._epoch = 0
        self._critic_updates = 0

    def _record(self, row: TelemetryRow) -> None:
        if not math.isfinite(row.loss):
            raise RuntimeError(
                f"non-finite {row.kind} loss {row.loss} at step {row.step} "
                f"(epoch {row.epoch}); aborting"
            )
        self.run.telemetry.append(row)
        self.run.steps += 1

    def critic_step(self, real_target: torch.Tensor, source: torch.Tensor) -> float:
        """One critic update; returns the logged loss (exact decomposition
        wasserstein + gp_weight * penalty, recomputed in float)."""
        if real_target.shape != source.shape:
            raise ValueError(
                f"batch shapes differ: target {tuple(real_target.shape)} vs "
                f"source {tuple(source.shape)}"
            )
        with torch.no_grad():
            fake = self.generator(source)
        w_term = self.critic(fake).mean() - self.critic(real_target).mean()
        eps = torch.rand(real_target.shape[0], 1, 1, 1)
        penalty = gradient_penalty(self.critic, real_target, fake, eps)
        loss = w_term + self.config.gp_weight * penalty
        self.opt_c.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_c.step()

        w = float(w_term.detach())
        gp = float(penalty.detach())
        total = w + self.config.gp_weight * gp
        self._critic_updates += 1
        self._record(
            TelemetryRow(
                step=self.run.steps + 1,
                epoch=self._epoch,
                kind="critic",
                loss=total,
                wasserstein=w,
                penalty=gp,
            )
        )
        return total

    def generator_step(self, source: torch.Tensor) -> tuple[float, float]:
        """One generator update; returns (loss, unweighted L1 term)."""
        out = self.generator(source)
        adversarial = -self.critic(out).mean()
        l1 = (out - source).abs().mean()
        loss = adversarial + self.config.l1_weight * l1
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()

        adv = float(adversarial.detach())
        l1_val = float(l1.detach())
        total = adv + self.config.l1_weight * l1_val
        self._record(
            TelemetryRow(
                step=self.run.steps + 1,
                epoch=self._epoch,
                kind="generator",
                loss=total,
                adversarial=adv,
                l1=l1_val,
            )
        )
        return total, l1_val


def _patch_pool(images, config: TrainConfig) -> torch.Tensor:
    """Downscale, grid, and extract every patch of every image into one pool."""
    from .images import downscale

    pools = []
    for img in images:
        small = downscale(img, config.d)
        _, h, w = small.pixels.shape
        grid = build_grid(h, w, config.p, config.s)
        pools.append(extract(small.pixels, grid))
    pool = np.concatenate(pools, axis=0)
    lo, hi = float(pool.min()), float(pool.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(
            f"training images must be normalized to [0, 1]; found range [{lo}, {hi}]"
        )
    return torch.from_numpy(pool)


def train(
    manifest: DatasetManifest,
    config: TrainConfig,
    progress: bool = False,
) -> TrainRun:
    """Run the full training loop; deterministic given config.seed."""
    manifest.require_both_groups()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    src_group, tgt_group = config.direction
    val_entry = manifest.validation_entry
    source_imgs = [
        manifest.load_image(e)
        for e in manifest.group_entries(src_group)
        if not e.validation
    ]
    target_imgs = [
        manifest.load_image(e)
        for e in manifest.group_entries(tgt_group)
        if not e.validation
    ]
    if not source_imgs:
        raise ValueError(f"source group {src_group} has no training images")
    if not target_imgs:
        raise ValueError(f"target group {tgt_group} has no training images")

    source_pool = _patch_pool(source_imgs, config)
    target_pool = _patch_pool(target_imgs, config)
    val_patches = None
    if val_entry is not None and val_entry.group == src_group:
        val_patches = _patch_pool([manifest.load_image(val_entry)], config)

    network = config.network_config(len(manifest.channel_names))
    trainer = Trainer(config, network)
    schedule = set(trainer.run.checkpoint_schedule)
    b = config.batch_size
    budget = config.max_steps if config.max_steps is not None else math.inf

    done = False
    for epoch in range(1, config.max_epochs + 1):
        trainer._epoch = epoch
        src_order = rng.permutation(len(source_pool))
        tgt_order = rng.permutation(len(target_pool))
        tgt_cursor = 0
        for start in range(0, len(src_order) - b + 1, b):
            if trainer.run.steps + 1 > budget:
                done = True
                break
            src_batch = source_pool[src_order[start : start + b]]
            if tgt_cursor + b > len(tgt_order):
                tgt_order = rng.permutation(len(target_pool))
                tgt_cursor = 0
            tgt_batch = target_pool[tgt_order[tgt_cursor : tgt_cursor + b]]
            tgt_cursor += b
            trainer.critic_step(tgt_batch, src_batch)
            if trainer._critic_updates % config.n_critic == 0:
                if trainer.run.steps + 1 > budget:
                    done = True
                    break
                trainer.generator_step(src_batch)
        trainer.run.epochs_run = epoch

        if val_patches is not None:
            trainer.generator.eval()
            with torch.no_grad():
                val_l1 = float((trainer.generator(val_patches) - val_patches).abs().mean())
            trainer.generator.train()
            trainer.run.validation.append((epoch, val_l1))

        if epoch in schedule:
            trainer.run.checkpoints[epoch] = copy.deepcopy(
                trainer.generator.state_dict()
            )
        if progress and (epoch % 25 == 0 or epoch == 1):
            last = trainer.run.telemetry[-1] if trainer.run.telemetry else None
            print(
                f"epoch {epoch}/{config.max_epochs} steps {trainer.run.steps}"
                + (f" last {last.kind} loss {last.loss:.4f}" if last else "")
            )
        if done:
            break
    return trainer.run


# ---------------------------------------------------------------------------
# Run persistence

CONFIG_NAME = "config.json"
TELEMETRY_NAME = "telemetry.csv"
VALIDATION_NAME = "validation.csv"


def save_run(run: TrainRun, run_dir: Path | str) -> Path:
    """Write config, telemetry, validation curve, and checkpoints."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_NAME).write_text(json.dumps(run.config.to_json(), indent=1))

    with open(run_dir / TELEMETRY_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TELEMETRY_COLUMNS)
        for row in run.telemetry:
            writer.writerow(
                [
                    row.step,
                    row.epoch,
                    row.kind,
                    repr(row.loss),
                    "" if row.wasserstein is None else repr(row.wasserstein),
                    "" if row.penalty is None else repr(row.penalty),
                    "" if row.adversarial is None else repr(row.adversarial),
                    "" if row.l1 is None else repr(row.l1),
                ]
            )
    with open(run_dir / VALIDATION_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "val_l1"])
        for epoch, val in run.validation:
            writer.writerow([epoch, repr(val)])

    ck_dir = run_dir / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    gen = ResidualGenerator(run.network)
    for epoch, state in sorted(run.checkpoints.items()):
        gen.load_state_dict(state)
        save_checkpoint(ck_dir / f"epoch_{epoch:04d}.pt", gen, epoch)
    return run_dir


def load_config(path: Path | str) -> TrainConfig:
    return TrainConfig.from_json(json.loads(Path(path).read_text()))

"""L1 training loop, two-phase schedule, checkpointing, deterministic resume.

An epoch is `iters_per_epoch` optimizer steps over randomly sampled patch
batches; the learning rate is constant within an epoch and halves at fixed
epoch boundaries. Checkpoints are single torch archives holding the
parameter arrays (state-dict names documented in the README), the model
config, the optimizer moments, the numpy sampling generator state, and run
metadata, so a resumed run replays the exact step sequence of an
uninterrupted one.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import LightFieldDataset, sample_batch
from .errors import (
    AbortWithDiagnostics,
    ConfigError,
    RangeError,
    SizeError,
    SplitError,
)
from .lightfield import LightField, ScaleTag, scale_tag_for
from .model import ModelConfig, OFPNet, lightfield_to_tensor, super_resolve

LOG_FILE = "train_log.csv"
LOG_COLUMNS = ("step", "epoch", "lr", "train_l1", "val_psnr")
LAST_CHECKPOINT = "ckpt_last.pt"
BEST_CHECKPOINT = "ckpt_best.pt"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule; defaults mirror the reference x2 protocol."""

    phase: str = "train"
    lr0: float = 1e-4
    halve_every: int = 2000
    total_epochs: int = 8000
    iters_per_epoch: int = 50
    batch: int = 2
    patch: int = 72
    scale: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    val_interval: int = 10
    grad_clip: float | None = None

    def __post_init__(self):
        if self.phase not in ("train", "finetune"):
            raise ConfigError(f"phase must be train or finetune, got {self.phase!r}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.halve_every < 1 or self.total_epochs < 1:
            raise ConfigError("halve_every and total_epochs must be >= 1")
        if self.total_epochs % self.halve_every:
            raise ConfigError(
                f"total_epochs {self.total_epochs} not a multiple of "
                f"halve_every {self.halve_every}"
            )
        if self.iters_per_epoch < 1 or self.batch < 1:
            raise ConfigError("iters_per_epoch and batch must be >= 1")
        if self.patch < 8 or self.patch % 4:
            raise ConfigError(f"patch must be >= 8 and divisible by 4, got {self.patch}")
        if self.scale not in (2, 4):
            raise ConfigError(f"scale must be 2 or 4, got {self.scale}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.val_interval < 1:
            raise ConfigError("val_interval must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")

    @classmethod
    def reference(cls, scale: int, phase: str = "train") -> "TrainConfig":
        """The published protocol: batch/patch (2, 72) at x2 and (4, 64) at
        x4; halving every 2000 of 8000 epochs when training, every 1000 of
        5000 when fine-tuning."""
        batch, patch = {2: (2, 72), 4: (4, 64)}[scale]
        halve, total = (2000, 8000) if phase == "train" else (1000, 5000)
        return cls(
            phase=phase, halve_every=halve, total_epochs=total,
            batch=batch, patch=patch, scale=scale,
        )


@dataclass
class TrainState:
    epoch: int = 0
    global_step: int = 0
    best_val_psnr: float = float("-inf")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for `epoch`: lr0 halved at each halve_every boundary."""
    if not 0 <= epoch <= config.total_epochs:
        raise RangeError(
            f"epoch {epoch} outside schedule [0, {config.total_epochs}]"
        )
    return config.lr0 * 0.5 ** (epoch // config.halve_every)


def _as_array(x) -> np.ndarray:
    if isinstance(x, LightField):
        return x.data
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def l1_loss(pred, gt) -> float:
    """Mean absolute difference over every view, pixel, and channel."""
    a, b = _as_array(pred), _as_array(gt)
    if a.shape != b.shape:
        raise SizeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def _pairs_to_tensors(pairs) -> tuple[torch.Tensor, torch.Tensor]:
    lr = torch.cat([lightfield_to_tensor(p[0]) for p in pairs])
    gt = torch.cat([lightfield_to_tensor(p[1]) for p in pairs])
    return lr, gt


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: OFPNet,
    optimizer: torch.optim.Optimizer,
    train_config: TrainConfig,
    state: TrainState,
    rng: np.random.Generator,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": dataclasses.asdict(model.config),
        "params": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "train_config": dataclasses.asdict(train_config),
        "rng_state": rng.bit_generator.state,
        "meta": {
            "phase": train_config.phase,
            "epoch": state.epoch,
            "global_step": state.global_step,
            "seed": train_config.seed,
            "best_val_psnr": state.best_val_psnr,
        },
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a recognized checkpoint archive")
    return payload


def model_config_from_checkpoint(payload: dict) -> ModelConfig:
    return ModelConfig(**payload["model_config"])


def restore_model(payload: dict, expected: ModelConfig | None = None) -> OFPNet:
    """Rebuild the model held in a checkpoint, verifying shape agreement."""
    config = model_config_from_checkpoint(payload)
    if expected is not None and expected != config:
        raise ConfigError(
            f"checkpoint config {config} does not match expected {expected}"
        )
    model = OFPNet(config)
    try:
        model.load_state_dict(payload["params"])
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint parameters do not fit config: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _validation_psnr(model: OFPNet, dataset: LightFieldDataset, scale: int) -> float | None:
    """Mean full-scene luma PSNR over the val split; None when it is empty."""
    from .evaluate import psnr_y  # late import to keep module deps one-way

    ids = dataset.scene_ids("val")
    if not ids:
        return None
    tag = scale_tag_for(scale)
    values = []
    for scene_id in ids:
        lr = dataset.load_y(scene_id, tag)
        gt = dataset.load_y(scene_id, ScaleTag.GT)
        values.append(psnr_y(super_resolve(model, lr), gt))
    return float(np.mean(values))


def _append_log(out_dir: Path, rows: list[tuple]) -> None:
    path = out_dir / LOG_FILE
    fresh = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOG_COLUMNS)
        writer.writerows(rows)


def _run_loop(
    model: OFPNet,
    dataset: LightFieldDataset,
    config: TrainConfig,
    out_dir: Path,
    optimizer: torch.optim.Optimizer,
    state: TrainState,
    rng: np.random.Generator,
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / BEST_CHECKPOINT
    have_best = state.best_val_psnr > float("-inf")
    model.train()

    for epoch in range(state.epoch, config.total_epochs):
        lr = lr_at(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr

        rows = []
        for it in range(config.iters_per_epoch):
            pairs, meta = sample_batch(
                dataset, "train",
                batch=config.batch, patch=config.patch, scale=config.scale,
                rng=rng, with_meta=True,
            )
            lr_t, gt_t = _pairs_to_tensors(pairs)
            pred = model(lr_t)
            loss = (pred - gt_t).abs().mean()
            loss_val = float(loss.detach())
            if not np.isfinite(loss_val):
                raise AbortWithDiagnostics(
                    "non-finite training loss",
                    {
                        "epoch": epoch,
                        "iter": it,
                        "global_step": state.global_step,
                        "loss": repr(loss_val),
                        "lr": lr,
                        "batch": [
                            {"scene": s, "y0": y0, "x0": x0} for s, y0, x0 in meta
                        ],
                        "seed": config.seed,
                    },
                )
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            rows.append((state.global_step, epoch, f"{lr:.8g}", f"{loss_val:.8f}", ""))
            state.global_step += 1

        state.epoch = epoch + 1
        if state.epoch % config.val_interval == 0 or state.epoch == config.total_epochs:
            val = _validation_psnr(model, dataset, config.scale)
            if val is not None:
                rows.append((state.global_step - 1, epoch, f"{lr:.8g}", "", f"{val:.6f}"))
                if val > state.best_val_psnr:
                    state.best_val_psnr = val
                    save_checkpoint(best_path, model, optimizer, config, state, rng)
                    have_best = True
        _append_log(out_dir, rows)
        save_checkpoint(out_dir / LAST_CHECKPOINT, model, optimizer, config, state, rng)

    if not have_best:
        # No validation split: the final checkpoint doubles as best.
        save_checkpoint(best_path, model, optimizer, config, state, rng)
    return best_path


def train(
    model: OFPNet,
    dataset: LightFieldDataset,
    config: TrainConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> Path:
    """Optimize `model` in place; returns the best checkpoint path.

    With `resume`, the checkpoint's parameters, optimizer moments, sampling
    generator state, and epoch counter replace the fresh ones, so the run
    continues exactly where the saved one stopped.
    """
    if config.phase != "train":
        raise ConfigError(f"train() requires phase 'train', got {config.phase!r}")
    return _start_loop(model, dataset, config, Path(out_dir), resume)


def _start_loop(model, dataset, config, out_dir, resume):
    if not dataset.scene_ids("train"):
        raise SplitError("train split is empty")
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr0, betas=(config.beta1, config.beta2)
    )
    rng = np.random.default_rng(config.seed)
    state = TrainState()
    if resume is not None:
        payload = load_checkpoint(resume)
        restored = restore_model(payload, expected=model.config)
        model.load_state_dict(restored.state_dict())
        optimizer.load_state_dict(payload["optimizer"])
        rng = np.random.default_rng()
        rng.bit_generator.state = payload["rng_state"]
        state = TrainState(
            epoch=payload["meta"]["epoch"],
            global_step=payload["meta"]["global_step"],
            best_val_psnr=payload["meta"]["best_val_psnr"],
        )
        if state.epoch > config.total_epochs:
            raise ConfigError(
                f"checkpoint epoch {state.epoch} beyond schedule "
                f"total_epochs {config.total_epochs}"
            )
    return _run_loop(model, dataset, config, out_dir, optimizer, state, rng)


def finetune(
    checkpoint: str | Path,
    dataset: LightFieldDataset,
    config: TrainConfig,
    out_dir: str | Path,
    model_config: ModelConfig | None = None,
) -> Path:
    """Adapt a trained checkpoint to a new domain with fresh optimizer moments.

    `model_config`, when given, must match the architecture stored in the
    checkpoint; a mismatch raises ConfigError rather than silently rebuilding.
    """
    if config.phase != "finetune":
        raise ConfigError(f"finetune() requires phase 'finetune', got {config.phase!r}")
    payload = load_checkpoint(checkpoint)
    model = restore_model(payload, expected=model_config)
    return _start_loop(model, dataset, config, Path(out_dir), resume=None)


def overfit_smoke(
    model: OFPNet,
    pair: tuple[LightField, LightField],
    steps: int = 500,
    lr: float = 1e-3,
) -> dict:
    """Memorize one (lr, gt) patch pair; the canonical trainability check.

    Returns final_loss, the patch PSNR after the last step, and the full
    loss trajectory. Deterministic given the model's initial parameters.
    """
    if steps < 1:
        raise RangeError(f"steps must be >= 1, got {steps}")
    from .evaluate import psnr_y

    lr_t, gt_t = _pairs_to_tensors([pair])
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    losses = []
    for step in range(steps):
        pred = model(lr_t)
        loss = (pred - gt_t).abs().mean()
        loss_val = float(loss.detach())
        if not np.isfinite(loss_val):
            raise AbortWithDiagnostics(
                "non-finite loss in overfit smoke",
                {"step": step, "loss": repr(loss_val), "lr": lr},
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss_val)
    return {
        "final_loss": losses[-1],
        "patch_psnr": psnr_y(super_resolve(model, pair[0]), pair[1]),
        "losses": losses,
    }

"""Training loop: detection-weighted mode plus two baselines.

Modes
-----
det
    Alternating min-max: each step first updates the detector (minimize
    focal loss of its valuation map against the corruption mask, the weak
    label), then updates the generator (minimize the reconstruction loss
    reweighted by the fresh valuation map). Gradients flow through the
    detector into the generator by default; a flag freezes the weight map
    into a constant instead.
weight
    Generator only, hard per-region weights (hole pixels weigh
    lambda_hole, valid pixels lambda_valid).
adv
    Classic alternating GAN: global discriminator vs generator, the
    generator loss being lambda_adv * adversarial term + lambda_l1 * l1.

Determinism: network init is seeded (generator: seed, detector or
discriminator: seed + 1); data order is derived statelessly from
(seed, epoch) and (seed, step) counters, so resuming from a checkpoint
needs no serialized RNG stream and reproduces the uninterrupted run
bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .detector import DetectorConfig, build_detector, build_discriminator
from .generator import GeneratorConfig, build_generator
from .losses import (
    LossConfig,
    adv_losses,
    focal_loss,
    hard_weighted_l1,
    weight_map,
    weighted_l1,
)

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainingDivergedError",
    "init_train_state",
    "train_step_det",
    "train_step_weight",
    "train_step_adv",
    "train_step",
    "train_loop",
    "save_train_state",
    "load_train_state",
    "config_from_dict",
]

MODES = ("det", "weight", "adv")


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; message carries step diagnostics."""


@dataclass
class TrainConfig:
    mode: str = "det"
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_size: int = 8
    epochs: int = 1
    image_size: int = 256
    seed: int = 0
    stop_gradient_through_valuation: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    checkpoint_interval: int = 100
    # network sizing (shared by generator and detector/discriminator)
    base_channels: int = 64
    num_residual_blocks: int = 8
    dilation: int = 2
    image_channels: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.image_size % 4:
            raise ValueError(
                f"image_size must be divisible by 4, got {self.image_size}"
            )
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_interval < 1:
            raise ValueError(
                f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}"
            )

    def generator_config(self):
        return GeneratorConfig(
            base_channels=self.base_channels,
            num_residual_blocks=self.num_residual_blocks,
            dilation=self.dilation,
            input_channels=self.image_channels + 1,
            output_channels=self.image_channels,
        )

    def detector_config(self):
        return DetectorConfig(
            base_channels=self.base_channels, input_channels=self.image_channels
        )


def config_from_dict(d):
    """Rebuild a TrainConfig from a plain dict (checkpoint meta, YAML).

    Unknown keys raise ValueError naming the first offender.
    """
    d = dict(d)
    loss_part = d.pop("loss", {}) or {}
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in d:
        if key not in known:
            raise ValueError(f"unknown config key: {key!r}")
    known_loss = {f.name for f in dataclasses.fields(LossConfig)}
    for key in loss_part:
        if key not in known_loss:
            raise ValueError(f"unknown config key: loss.{key!r}")
    return TrainConfig(loss=LossConfig(**loss_part), **d)


@dataclass
class TrainState:
    config: TrainConfig
    generator: torch.nn.Module
    auxiliary: torch.nn.Module | None  # detector (det) or discriminator (adv)
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer | None
    step: int = 0


def _make_optimizer(module, cfg):
    return torch.optim.Adam(
        module.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)
    )


def init_train_state(cfg):
    """Fresh networks and optimizers for the configured mode."""
    gen = build_generator(cfg.generator_config(), init_seed=cfg.seed)
    if cfg.mode == "det":
        aux = build_detector(cfg.detector_config(), init_seed=cfg.seed + 1)
    elif cfg.mode == "adv":
        aux = build_discriminator(cfg.detector_config(), init_seed=cfg.seed + 1)
    else:
        aux = None
    opt_d = _make_optimizer(aux, cfg) if aux is not None else None
    return TrainState(
        config=cfg,
        generator=gen,
        auxiliary=aux,
        opt_g=_make_optimizer(gen, cfg),
        opt_d=opt_d,
    )


def _check_finite(value, state, what):
    if not torch.isfinite(value):
        raise TrainingDivergedError(
            f"{what} is {value.item()!r} at step {state.step + 1} "
            f"(mode={state.config.mode}, lr={state.config.learning_rate})"
        )


def _split_batch(batch):
    gt, masks = batch
    if gt.shape[-2:] != masks.shape[-2:]:
        raise ValueError(
            f"image batch {tuple(gt.shape[-2:])} and mask batch "
            f"{tuple(masks.shape[-2:])} sizes differ"
        )
    m1 = masks.unsqueeze(1)
    i_in = gt * (1.0 - m1) + m1
    return gt, masks, m1, i_in


def _masked_means(v, masks):
    # mean valuation inside and outside the holes; empty region -> 0.0
    hole = masks.sum()
    valid = (1.0 - masks).sum()
    v_in = (v * masks).sum() / hole if hole > 0 else torch.zeros(())
    v_out = (v * (1.0 - masks)).sum() / valid if valid > 0 else torch.zeros(())
    return float(v_in), float(v_out)


def train_step_det(state, batch, cfg=None):
    """One detector update then one generator update on the same batch.

    Detector: minimize focal loss of V = detect(prediction) against the
    mask, alpha = each image's own mask ratio. Generator: with the freshly
    updated detector, minimize the valuation-weighted reconstruction loss.
    Returns (state, metrics record).
    """
    cfg = cfg or state.config
    started = time.perf_counter()
    gt, masks, m1, i_in = _split_batch(batch)
    i_out = state.generator(i_in, m1)
    alpha = masks.mean(dim=(-2, -1)).view(-1, 1, 1)

    v_for_det = state.auxiliary(i_out.detach())
    loss_d = focal_loss(v_for_det, masks, alpha, cfg.loss.gamma)
    _check_finite(loss_d, state, "detector focal loss")
    state.opt_d.zero_grad()
    loss_d.backward()
    state.opt_d.step()

    v = state.auxiliary(i_out)
    w = weight_map(v, cfg.loss)
    if cfg.stop_gradient_through_valuation:
        w = w.detach()
    loss_g = weighted_l1(i_out, gt, w)
    _check_finite(loss_g, state, "generator weighted l1")
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    state.step += 1
    mean_v_in, mean_v_out = _masked_means(v.detach(), masks)
    record = {
        "step": state.step,
        "mode": "det",
        "loss_g": loss_g.item(),
        "loss_d": loss_d.item(),
        "mean_v_in": mean_v_in,
        "mean_v_out": mean_v_out,
        "lr": cfg.learning_rate,
        "wall_ms": (time.perf_counter() - started) * 1000.0,
    }
    return state, record


def train_step_weight(state, batch, cfg=None):
    """One generator update under the fixed per-region weighting."""
    cfg = cfg or state.config
    started = time.perf_counter()
    gt, masks, m1, i_in = _split_batch(batch)
    i_out = state.generator(i_in, m1)
    loss_g = hard_weighted_l1(
        i_out, gt, masks, cfg.loss.lambda_hole, cfg.loss.lambda_valid
    )
    _check_finite(loss_g, state, "hard-weighted l1")
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    state.step += 1
    record = {
        "step": state.step,
        "mode": "weight",
        "loss_g": loss_g.item(),
        "lr": cfg.learning_rate,
        "wall_ms": (time.perf_counter() - started) * 1000.0,
    }
    return state, record


def train_step_adv(state, batch, cfg=None):
    """One discriminator update then one generator update (classic GAN).

    With lambda_adv == 0 the adversarial term is skipped outright, so
    generator updates coincide bitwise with plain-l1 training.
    """
    cfg = cfg or state.config
    started = time.perf_counter()
    gt, masks, m1, i_in = _split_batch(batch)
    i_out = state.generator(i_in, m1)

    d_real = state.auxiliary(gt)
    d_fake = state.auxiliary(i_out.detach())
    _, loss_d = adv_losses(d_real, d_fake)
    _check_finite(loss_d, state, "discriminator loss")
    state.opt_d.zero_grad()
    loss_d.backward()
    state.opt_d.step()

    l1 = (i_out - gt).abs().mean()
    if cfg.loss.lambda_adv == 0:
        loss_g = cfg.loss.lambda_l1 * l1
    else:
        gen_term, _ = adv_losses(d_real.detach(), state.auxiliary(i_out))
        loss_g = cfg.loss.lambda_adv * gen_term + cfg.loss.lambda_l1 * l1
    _check_finite(loss_g, state, "generator adversarial objective")
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    state.step += 1
    record = {
        "step": state.step,
        "mode": "adv",
        "loss_g": loss_g.item(),
        "loss_d": loss_d.item(),
        "lr": cfg.learning_rate,
        "wall_ms": (time.perf_counter() - started) * 1000.0,
    }
    return state, record


_STEP_FNS = {"det": train_step_det, "weight": train_step_weight, "adv": train_step_adv}


def train_step(state, batch, cfg=None):
    """Dispatch one step to the configured mode."""
    cfg = cfg or state.config
    return _STEP_FNS[cfg.mode](state, batch, cfg)


# ---------------------------------------------------------------------------
# checkpointing

def _aux_prefix(mode):
    return {"det": "detector", "adv": "discriminator"}.get(mode)


def _optimizer_arrays(prefix, module, optimizer):
    arrays = {}
    for name, p in module.named_parameters():
        st = optimizer.state.get(p)
        if not st:
            continue
        arrays[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().numpy().copy()
        arrays[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().numpy().copy()
        step = st["step"]
        step = step.detach().numpy().copy() if torch.is_tensor(step) else np.asarray(step)
        arrays[f"{prefix}/{name}/step"] = step
    return arrays


def _param_arrays(prefix, module):
    return {
        f"{prefix}/{name}": p.detach().numpy().copy()
        for name, p in module.named_parameters()
    }


def save_train_state(state, path):
    """Write params + optimizer moments + step counter to `path`."""
    cfg = state.config
    arrays = _param_arrays("generator", state.generator)
    arrays.update(_optimizer_arrays("opt_g", state.generator, state.opt_g))
    aux_prefix = _aux_prefix(cfg.mode)
    if state.auxiliary is not None:
        arrays.update(_param_arrays(aux_prefix, state.auxiliary))
        arrays.update(_optimizer_arrays("opt_d", state.auxiliary, state.opt_d))
    meta = {
        "kind": "train_state",
        "package_version": __version__,
        "step": state.step,
        "config": dataclasses.asdict(cfg),
    }
    save_checkpoint(path, meta, arrays)


def _restore_params(prefix, module, arrays, path):
    with torch.no_grad():
        for name, p in module.named_parameters():
            key = f"{prefix}/{name}"
            if key not in arrays:
                raise CheckpointError(f"missing array {key!r} in {path}")
            arr = arrays[key]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(
                    f"shape mismatch for {key!r} in {path}: "
                    f"checkpoint {tuple(arr.shape)} vs model {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(arr))


def _restore_optimizer(prefix, module, optimizer, arrays):
    for name, p in module.named_parameters():
        key = f"{prefix}/{name}/exp_avg"
        if key not in arrays:
            continue
        optimizer.state[p] = {
            "step": torch.from_numpy(arrays[f"{prefix}/{name}/step"].copy()),
            "exp_avg": torch.from_numpy(arrays[key].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}/{name}/exp_avg_sq"].copy()),
        }


def load_train_state(path):
    """Rebuild a TrainState from a checkpoint written by save_train_state."""
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "train_state":
        raise CheckpointError(f"{path} is not a training checkpoint")
    cfg = config_from_dict(meta["config"])
    state = init_train_state(cfg)
    state.step = int(meta["step"])
    _restore_params("generator", state.generator, arrays, path)
    _restore_optimizer("opt_g", state.generator, state.opt_g, arrays)
    if state.auxiliary is not None:
        _restore_params(_aux_prefix(cfg.mode), state.auxiliary, arrays, path)
        _restore_optimizer("opt_d", state.auxiliary, state.opt_d, arrays)
    return state


# ---------------------------------------------------------------------------
# full loop

def _epoch_permutation(seed, epoch, n):
    return np.random.default_rng((seed, 0, epoch)).permutation(n)


def _mask_choice(seed, step, n_masks, batch_size):
    return np.random.default_rng((seed, 1, step)).integers(0, n_masks, size=batch_size)


def _to_batch(images, masks, img_idx, mask_idx):
    gt = torch.from_numpy(
        np.stack([images[i].transpose(2, 0, 1) for i in img_idx]).astype(np.float32)
    )
    m = torch.from_numpy(np.stack([masks[i] for i in mask_idx]).astype(np.float32))
    return gt, m


def train_loop(cfg, images, masks, out_dir, resume=None):
    """Run epochs x batches steps over in-memory data, writing artifacts.

    images: sequence of (H, W, C) arrays in [0, 1]; masks: sequence of
    (H, W) binary arrays. Output layout under out_dir:

        manifest.json        run description, written before step 1
        checkpoints/step_NNNNNN.ckpt
        logs/metrics.jsonl   one JSON record per step
        samples/step_NNNNNN.png  first prediction of the batch

    A checkpoint is written every cfg.checkpoint_interval steps and at the
    end. `resume` names a checkpoint to continue from; the continued run
    matches the uninterrupted one bit-for-bit (data order is derived from
    counters, not stream state).
    """
    if len(images) == 0:
        raise ValueError("empty image set")
    if len(masks) == 0:
        raise ValueError("empty mask set")
    if cfg.batch_size > len(images):
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds dataset size {len(images)}"
        )
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    logs_dir = out_dir / "logs"
    samples_dir = out_dir / "samples"
    for d in (ckpt_dir, logs_dir, samples_dir):
        d.mkdir(parents=True, exist_ok=True)

    manifest_path = out_dir / "manifest.json"
    if resume is None:
        if manifest_path.exists():
            raise ValueError(
                f"{manifest_path} already exists; pass resume= to continue that run"
            )
        manifest = {
            "config": dataclasses.asdict(cfg),
            "package_version": __version__,
            "seed": cfg.seed,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "num_images": len(images),
            "num_masks": len(masks),
            "layout": {
                "checkpoints": "checkpoints",
                "metrics": "logs/metrics.jsonl",
                "samples": "samples",
            },
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        state = init_train_state(cfg)
    else:
        state = load_train_state(resume)
        if dataclasses.asdict(state.config) != dataclasses.asdict(cfg):
            raise ValueError("resume checkpoint config does not match the run config")

    steps_per_epoch = len(images) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValueError("dataset smaller than one batch")
    total_steps = cfg.epochs * steps_per_epoch

    metrics_path = logs_dir / "metrics.jsonl"
    with open(metrics_path, "a", encoding="utf-8") as log:
        for step in range(state.step, total_steps):
            epoch = step // steps_per_epoch
            pos = step % steps_per_epoch
            perm = _epoch_permutation(cfg.seed, epoch, len(images))
            img_idx = perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
            mask_idx = _mask_choice(cfg.seed, step, len(masks), cfg.batch_size)
            batch = _to_batch(images, masks, img_idx, mask_idx)
            state, record = train_step(state, batch, cfg)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            if state.step % cfg.checkpoint_interval == 0 or state.step == total_steps:
                save_train_state(state, ckpt_dir / f"step_{state.step:06d}.ckpt")
                _write_sample(state, batch, samples_dir / f"step_{state.step:06d}.png")
    return state


def _write_sample(state, batch, path):
    from .imaging import save_image

    gt, masks, m1, i_in = _split_batch(batch)
    with torch.no_grad():
        i_out = state.generator(i_in, m1)
    save_image(i_out[0].numpy().transpose(1, 2, 0), path)

"""Optimization loop: Adam, triangular cyclic learning rate, expert
pre-training and gate training over frozen experts.

Every run is deterministic for a fixed (config, data) pair: one seeded
generator drives batch sampling and augmentation, and the process is
single-threaded. Expert freezing during gate training is enforced, not
assumed: parameter checksums are re-verified every 50 steps and a
mismatch aborts the run.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, params_checksum, save_checkpoint
from .expert import ExpertConfig, ExpertNetwork, build_expert, expert_forward, tiny_config
from .gating import DanNet, build_dan, compose, agn_forward
from .losses import LossConfig, psnr, total_loss
from .ppm import read_ppm
from .synth import augment, load_manifest
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

_TRAIN_TAG = 404


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class FrozenExpertDrift(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 2e-4
    max_lr: float = 3e-4
    cyclic_mode: str = "triangular"
    gamma: float = 1.0
    base_momentum: float = 0.9  # Adam beta1
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    iterations: int = 200
    patch_size: int = 32
    cycle_iters: Optional[int] = None  # None: min(4000, iterations), at least 2
    val_every: int = 50
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def validate(self):
        if not (0 < self.base_lr <= self.max_lr):
            raise ValueError(f"need 0 < base_lr <= max_lr, got {self.base_lr}, {self.max_lr}")
        if self.cyclic_mode != "triangular":
            raise ValueError(f"only triangular cyclic mode is supported, got {self.cyclic_mode!r}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        self.loss.validate()

    @property
    def betas(self):
        return (self.base_momentum, self.beta2)

    def resolved_cycle(self) -> int:
        if self.cycle_iters is not None:
            return max(2, self.cycle_iters)
        return max(2, min(4000, self.iterations))


def cyclic_lr(iteration: int, cfg: TrainConfig) -> float:
    """Triangle wave from base_lr up to max_lr and back, no decay (gamma 1)."""
    cycle = cfg.resolved_cycle()
    half = cycle / 2.0
    pos = iteration % cycle
    frac = pos / half if pos <= half else (cycle - pos) / half
    return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * frac


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> bool:
    """One bias-corrected Adam update; rejects the whole step on any
    non-finite gradient (incident logged) and returns False."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            logger.warning("adam_step rejected: non-finite gradient in %s", name)
            return False
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.data.dtype)
    return True


def collect_grads(params: dict) -> dict:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def zero_grads(params: dict):
    for p in params.values():
        p.grad = None


# -- data ------------------------------------------------------------------------


def load_pairs(manifest_path, mode: Optional[str] = None):
    """Load (degraded, clean, entry) triples, optionally filtered by mode."""
    spec, entries = load_manifest(manifest_path)
    base = os.path.dirname(os.fspath(manifest_path))
    pairs = []
    for e in entries:
        if mode is not None and e.mode != mode:
            continue
        degraded = read_ppm(os.path.join(base, e.degraded_path))
        clean = read_ppm(os.path.join(base, e.clean_path))
        pairs.append((degraded, clean, e))
    return spec, pairs


def split_pairs(pairs):
    """Deterministic 20% validation split keyed on the sample seed."""
    train = [p for p in pairs if p[2].seed % 5 != 4]
    val = [p for p in pairs if p[2].seed % 5 == 4]
    if not train:
        train = pairs
    return train, val


def _make_batch(pairs, rng: np.random.Generator, batch_size: int, patch: int):
    xs, ys = [], []
    idxs = rng.integers(0, len(pairs), size=batch_size)
    for idx in idxs:
        degraded, clean, _ = pairs[idx]
        size = degraded.shape[1]
        if size > patch:
            y0 = int(rng.integers(0, size - patch + 1))
            x0 = int(rng.integers(0, size - patch + 1))
            degraded = degraded[:, y0 : y0 + patch, x0 : x0 + patch]
            clean = clean[:, y0 : y0 + patch, x0 : x0 + patch]
        degraded, clean = augment((degraded, clean), seed=int(rng.integers(2**31)))
        xs.append(degraded)
        ys.append(clean)
    return np.stack(xs), np.stack(ys)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list  # rows of (iteration, lr, loss, val_psnr or None)
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    val_psnr: Optional[float] = None
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None


def _write_log(path, history):
    lines = ["iteration,lr,loss,val_psnr"]
    for it, lr, loss, val in history:
        val_s = "" if val is None else f"{val:.6f}"
        lines.append(f"{it},{lr:.8g},{loss:.8g},{val_s}")
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _mean_val_psnr(forward_fn, val_pairs) -> Optional[float]:
    if not val_pairs:
        return None
    scores = []
    with no_grad():
        for degraded, clean, _ in val_pairs:
            pred = forward_fn(Tensor(degraded[None]))
            scores.append(psnr(np.clip(pred.data[0], 0.0, 1.0), clean))
    return float(np.mean(scores))


# -- checkpoint packing -----------------------------------------------------------


def expert_checkpoint(net: ExpertNetwork, state: Optional[AdamState], iteration: int) -> Checkpoint:
    tensors = {f"param.{k}": p.data.copy() for k, p in net.parameters.items()}
    if state is not None:
        for k in net.parameters:
            tensors[f"adam_m.{k}"] = state.m[k].copy()
            tensors[f"adam_v.{k}"] = state.v[k].copy()
    config = net.config.to_dict()
    config["adam_step"] = state.step if state is not None else 0
    return Checkpoint(kind="expert", task_tag=net.task_tag, config=config,
                      iteration=iteration, tensors=tensors)


def expert_from_checkpoint(ckpt: Checkpoint, trainable: bool = True) -> ExpertNetwork:
    if ckpt.kind != "expert":
        raise ValueError(f"expected an expert checkpoint, got kind {ckpt.kind!r}")
    cfg_dict = {k: v for k, v in ckpt.config.items() if k != "adam_step"}
    cfg = ExpertConfig.from_dict(cfg_dict)
    net = build_expert(cfg, seed=0, task_tag=ckpt.task_tag, trainable=trainable)
    for name, p in net.parameters.items():
        key = f"param.{name}"
        if key not in ckpt.tensors:
            raise ValueError(f"checkpoint is missing tensor {key}")
        if ckpt.tensors[key].shape != p.data.shape:
            raise ValueError(f"checkpoint tensor {key} has shape {ckpt.tensors[key].shape}, "
                             f"expected {p.data.shape}")
        p.data = ckpt.tensors[key].copy()
    return net


def dan_checkpoint(dan: DanNet, state: Optional[AdamState], iteration: int) -> Checkpoint:
    tensors = {}
    for k, p in dan.dehaze_expert.parameters.items():
        tensors[f"dehaze.{k}"] = p.data.copy()
    for k, p in dan.desnow_expert.parameters.items():
        tensors[f"desnow.{k}"] = p.data.copy()
    for k, p in dan.agn_parameters.items():
        tensors[k] = p.data.copy()
        if state is not None:
            tensors[f"adam_m.{k}"] = state.m[k].copy()
            tensors[f"adam_v.{k}"] = state.v[k].copy()
    config = {
        "dehaze_config": dan.dehaze_expert.config.to_dict(),
        "desnow_config": dan.desnow_expert.config.to_dict(),
        "adam_step": state.step if state is not None else 0,
    }
    return Checkpoint(kind="dan", task_tag="mixed", config=config,
                      iteration=iteration, tensors=tensors)


def dan_from_checkpoint(ckpt: Checkpoint) -> DanNet:
    if ckpt.kind != "dan":
        raise ValueError(f"expected a dan checkpoint, got kind {ckpt.kind!r}")
    dehaze = build_expert(ExpertConfig.from_dict(ckpt.config["dehaze_config"]), seed=0,
                          task_tag="dehaze", trainable=False)
    desnow = build_expert(ExpertConfig.from_dict(ckpt.config["desnow_config"]), seed=0,
                          task_tag="desnow", trainable=False)
    for tag, net in (("dehaze", dehaze), ("desnow", desnow)):
        for name, p in net.parameters.items():
            p.data = ckpt.tensors[f"{tag}.{name}"].copy()
    dan = build_dan(dehaze, desnow, seed=0)
    for name, p in dan.agn_parameters.items():
        p.data = ckpt.tensors[name].copy()
    return dan


# -- training loops ---------------------------------------------------------------


def _smoothed(losses, k=10):
    if not losses:
        return None
    window = losses[:k] if len(losses) >= k else losses
    return float(np.mean(window))


def train_expert(task: str, manifest_path, cfg: TrainConfig,
                 expert_cfg: Optional[ExpertConfig] = None,
                 ckpt_path=None, log_path=None) -> TrainResult:
    """Pre-train one task expert on its matching degradation pairs."""
    cfg.validate()
    if task not in ("dehaze", "desnow"):
        raise ValueError(f"task must be dehaze or desnow, got {task!r}")
    mode = "haze" if task == "dehaze" else "snow"
    expert_cfg = expert_cfg or tiny_config()
    _, pairs = load_pairs(manifest_path, mode=mode)
    if not pairs:
        raise ValueError(f"no {mode} pairs found in {manifest_path}")
    train_pairs, val_pairs = split_pairs(pairs)

    net = build_expert(expert_cfg, seed=cfg.seed, task_tag=task)
    params = net.parameters
    state = AdamState.for_params(params)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, _TRAIN_TAG))))

    history = []
    losses = []
    last_val = None
    for it in range(cfg.iterations):
        lr = cyclic_lr(it, cfg)
        x_np, y_np = _make_batch(train_pairs, rng, cfg.batch_size, cfg.patch_size)
        x = Tensor(x_np)
        y = Tensor(y_np)
        pred = expert_forward(net, x)
        loss = total_loss(pred, y, cfg.loss)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            # params have not been touched by this step; they are the last good state
            path = None
            if ckpt_path is not None:
                path = save_checkpoint(ckpt_path, expert_checkpoint(net, state, it))
            if log_path is not None:
                _write_log(log_path, history)
            raise TrainingDiverged(f"loss diverged to {loss_val} at iteration {it}", path)
        losses.append(loss_val)
        zero_grads(params)
        backward(loss)
        adam_step(params, collect_grads(params), state, lr, cfg.betas, cfg.adam_eps)
        if val_pairs and ((it + 1) % cfg.val_every == 0 or it + 1 == cfg.iterations):
            last_val = _mean_val_psnr(lambda t: expert_forward(net, t), val_pairs)
            history.append((it, lr, loss_val, last_val))
        else:
            history.append((it, lr, loss_val, None))

    if cfg.iterations == 0 and val_pairs:
        last_val = _mean_val_psnr(lambda t: expert_forward(net, t), val_pairs)

    ckpt = expert_checkpoint(net, state, cfg.iterations)
    result = TrainResult(
        checkpoint=ckpt,
        history=history,
        initial_loss=_smoothed(losses),
        final_loss=_smoothed(losses[::-1]),
        val_psnr=last_val,
    )
    if ckpt_path is not None:
        result.checkpoint_path = save_checkpoint(ckpt_path, ckpt)
    if log_path is not None:
        _write_log(log_path, history)
        result.log_path = os.fspath(log_path)
    return result


def train_gate(dehaze_ckpt, desnow_ckpt, manifest_path, cfg: TrainConfig,
               ckpt_path=None, log_path=None) -> TrainResult:
    """Train the gate on mixed pairs with both experts frozen.

    Expert parameter checksums are re-verified every 50 steps and at the
    end; any drift aborts with ``FrozenExpertDrift``.
    """
    cfg.validate()
    if isinstance(dehaze_ckpt, (str, os.PathLike)):
        dehaze_ckpt = load_checkpoint(dehaze_ckpt)
    if isinstance(desnow_ckpt, (str, os.PathLike)):
        desnow_ckpt = load_checkpoint(desnow_ckpt)
    dehaze = expert_from_checkpoint(dehaze_ckpt, trainable=False)
    desnow = expert_from_checkpoint(desnow_ckpt, trainable=False)
    dan = build_dan(dehaze, desnow, seed=cfg.seed)
    params = dan.agn_parameters
    state = AdamState.for_params(params)

    sums0 = (params_checksum(dehaze.parameters), params_checksum(desnow.parameters))

    def verify_frozen(where):
        sums = (params_checksum(dehaze.parameters), params_checksum(desnow.parameters))
        if sums != sums0:
            raise FrozenExpertDrift(f"frozen expert parameters changed ({where})")

    _, pairs = load_pairs(manifest_path)
    if not pairs:
        raise ValueError(f"no pairs found in {manifest_path}")
    train_pairs, val_pairs = split_pairs(pairs)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, _TRAIN_TAG, 1))))

    def dan_fn(t):
        j_h = expert_forward(dan.dehaze_expert, t)
        j_s = expert_forward(dan.desnow_expert, t)
        return compose(agn_forward(dan, t), j_h, j_s)

    history = []
    losses = []
    last_val = None
    for it in range(cfg.iterations):
        lr = cyclic_lr(it, cfg)
        x_np, y_np = _make_batch(train_pairs, rng, cfg.batch_size, cfg.patch_size)
        x = Tensor(x_np)
        y = Tensor(y_np)
        out = dan_fn(x)
        loss = total_loss(out, y, cfg.loss)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            path = None
            if ckpt_path is not None:
                path = save_checkpoint(ckpt_path, dan_checkpoint(dan, state, it))
            raise TrainingDiverged(f"gate loss diverged to {loss_val} at iteration {it}", path)
        losses.append(loss_val)
        zero_grads(params)
        backward(loss)
        adam_step(params, collect_grads(params), state, lr, cfg.betas, cfg.adam_eps)
        if (it + 1) % 50 == 0:
            verify_frozen(f"iteration {it}")
        if val_pairs and ((it + 1) % cfg.val_every == 0 or it + 1 == cfg.iterations):
            last_val = _mean_val_psnr(dan_fn, val_pairs)
            history.append((it, lr, loss_val, last_val))
        else:
            history.append((it, lr, loss_val, None))

    verify_frozen("end of training")
    if cfg.iterations == 0 and val_pairs:
        last_val = _mean_val_psnr(dan_fn, val_pairs)

    ckpt = dan_checkpoint(dan, state, cfg.iterations)
    result = TrainResult(
        checkpoint=ckpt,
        history=history,
        initial_loss=_smoothed(losses),
        final_loss=_smoothed(losses[::-1]),
        val_psnr=last_val,
    )
    if ckpt_path is not None:
        result.checkpoint_path = save_checkpoint(ckpt_path, ckpt)
    if log_path is not None:
        _write_log(log_path, history)
        result.log_path = os.fspath(log_path)
    return result

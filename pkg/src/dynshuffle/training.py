"""Training recipe: total loss, SGD with momentum, clipping, schedules.

The objective is classification cross-entropy plus lambda times the summed
shuffle regularizers, with lambda ramped linearly over the warm-up epochs.
Gradients are clipped jointly to a global norm before the update.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor, backward, cross_entropy_mean
from .errors import ConfigurationError, UsageError

METRIC_FIELDS = ("epoch", "lr", "lambda_eff", "train_ce", "train_reg", "train_acc",
                 "test_acc_top1", "test_acc_top5", "wall_seconds")


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: float = 1.0
    lam: float = 0.5
    warmup_epochs: int = 5
    epochs: int = 30
    batch_size: int = 128
    schedule: str = "linear"          # linear | step
    lr_warmup_epochs: int = 0         # desk-scale default: no LR warm-up
    no_orth_reg: bool = False         # ablation: drop the reg term from the loss
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be nonnegative, got {self.lam}")
        if self.warmup_epochs > self.epochs:
            raise ConfigurationError(
                f"warmup {self.warmup_epochs} exceeds epochs {self.epochs}")
        if self.schedule not in ("linear", "step"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")


@dataclass
class OptState:
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0


def total_loss(ce: Tensor, regs, lambda_eff: float) -> Tensor:
    """ce + lambda_eff · Σ regs."""
    if lambda_eff < 0:
        raise ConfigurationError(f"lambda_eff must be nonnegative, got {lambda_eff}")
    if not regs or lambda_eff == 0:
        return ce
    acc = regs[0]
    for r in regs[1:]:
        acc = ag.add(acc, r)
    return ag.add(ce, ag.scale(acc, lambda_eff))


def clip_global_norm(grads, max_norm: float) -> float:
    """Jointly rescale gradients so their combined L2 norm is ≤ max_norm.

    Returns the scale that was applied (1.0 when no clipping happened).
    """
    total = 0.0
    for g in grads:
        total += float(np.vdot(g, g))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grads:
        g *= scale
    return scale


def sgd_step(params: dict, state: OptState, lr: float, momentum: float,
             weight_decay: float, no_decay=()):
    """v ← m·v + (g + wd·w); w ← w − lr·v. Skips parameters without gradients."""
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise UsageError(f"gradient shape {p.grad.shape} != param {p.data.shape}")
        g = p.grad
        if weight_decay and name not in no_decay:
            g = g + weight_decay * p.data
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            state.velocity[name] = v
        v *= momentum
        v += g
        p.data -= lr * v


def lr_schedule(step: int, total_steps: int, lr0: float, kind: str = "linear",
                warmup_steps: int = 0, total_epochs: int | None = None,
                epoch_of=None) -> float:
    """Linear decay to zero, or tenfold drops at 50% and 75% of the epochs.

    Both run after an optional linear 0→lr0 warm-up ramp.
    """
    if not 0 <= step < total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps})")
    if step < warmup_steps:
        return lr0 * (step + 1) / warmup_steps
    if kind == "linear":
        return lr0 * (1.0 - step / total_steps)
    if kind == "step":
        frac = step / total_steps
        drops = (frac >= 0.5) + (frac >= 0.75)
        return lr0 * (0.1 ** drops)
    raise ConfigurationError(f"unknown schedule kind {kind!r}")


def lambda_warmup(epoch: int, warmup_epochs: int, lam: float) -> float:
    """Linear ramp to lam over the first warmup_epochs epochs."""
    if warmup_epochs <= 0 or epoch >= warmup_epochs:
        return lam
    return lam * (epoch + 1) / warmup_epochs


def no_decay_names(params: dict) -> set:
    """BatchNorm scales/offsets are exempt from weight decay."""
    out = set()
    for name in params:
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("scale", "offset", "bn_scale", "bn_offset"):
            out.add(name)
    return out


def train_epoch(model, batches, cfg: TrainConfig, state: OptState,
                total_steps: int, on_step=None) -> dict:
    """One pass over `batches`; returns mean CE, mean reg, and train accuracy."""
    params = model.named_params()
    exempt = no_decay_names(params)
    ce_sum = reg_sum = 0.0
    seen = correct = 0
    lam = lambda_warmup(state.epoch, cfg.warmup_epochs, cfg.lam)
    lambda_eff = 0.0 if cfg.no_orth_reg else lam
    warmup_steps = cfg.lr_warmup_epochs * (total_steps // max(1, cfg.epochs))
    lr = cfg.lr0
    for images, labels in batches:
        lr = lr_schedule(state.step, total_steps, cfg.lr0, cfg.schedule, warmup_steps)
        with Tape() as tape:
            logits, regs = model.forward(images, training=True)
            ce = cross_entropy_mean(logits, labels)
            loss = total_loss(ce, regs, lambda_eff)
        model.zero_grads()
        backward(loss, tape)
        grads = [p.grad for p in params.values() if p.grad is not None]
        clip_global_norm(grads, cfg.clip_norm)
        sgd_step(params, state, lr, cfg.momentum, cfg.weight_decay, exempt)
        n = len(labels)
        ce_sum += float(ce.data) * n
        reg_sum += sum(float(r.data) for r in regs) * n
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        seen += n
        state.step += 1
        if on_step is not None:
            on_step(state.step, float(ce.data))
    state.epoch += 1
    return {"train_ce": ce_sum / max(1, seen),
            "train_reg": reg_sum / max(1, seen),
            "train_acc": correct / max(1, seen),
            "lr": lr, "lambda_eff": lambda_eff}


def evaluate(model, batches, binarize_override=None) -> dict:
    """Eval-mode pass: running BN stats, binarization active. Top-1/top-5/CE."""
    ce_sum = 0.0
    seen = top1 = top5 = 0
    for images, labels in batches:
        logits, _ = model.forward(images, training=False,
                                  binarize_override=binarize_override)
        ce = cross_entropy_mean(logits, labels)
        n = len(labels)
        ce_sum += float(ce.data) * n
        order = np.argsort(-logits.data, axis=1)
        top1 += int((order[:, 0] == labels).sum())
        k = min(5, logits.data.shape[1])
        top5 += int((order[:, :k] == labels[:, None]).sum())
        seen += n
    return {"top1": top1 / max(1, seen), "top5": top5 / max(1, seen),
            "ce": ce_sum / max(1, seen)}


def run_training(model, train_batches_fn, test_batches_fn, cfg: TrainConfig,
                 steps_per_epoch: int, on_epoch=None) -> list[dict]:
    """Full training run; returns one metrics row per epoch (METRIC_FIELDS)."""
    state = OptState()
    rows = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        stats = train_epoch(model, train_batches_fn(epoch), cfg, state,
                            steps_per_epoch * cfg.epochs)
        test = evaluate(model, test_batches_fn())
        row = {"epoch": epoch, "lr": stats["lr"], "lambda_eff": stats["lambda_eff"],
               "train_ce": stats["train_ce"], "train_reg": stats["train_reg"],
               "train_acc": stats["train_acc"], "test_acc_top1": test["top1"],
               "test_acc_top5": test["top5"],
               "wall_seconds": time.perf_counter() - t0}
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return rows

"""Dynamic (variant-alternating) pre-training and fine-tuning over shared weights.

Each optimisation step activates exactly one variant, drawn at random, and
updates the single weight set with a single Adam state. A run of N steps
therefore trains every variant at the cost of N forward/backward passes.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from dynet.arch import (
    ArchConfig,
    DyNet,
    read_checkpoint,
    resolve_variant,
    save_checkpoint,
    switch_variant,
)
from dynet.degradations import CorruptionRecipe, compose_pretrain_sample

log = logging.getLogger(__name__)

PHASES = ("pretrain", "finetune_all_in_one", "finetune_single")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, iteration, flag, loss):
        super().__init__(f"non-finite loss {loss} at iteration {iteration} (variant {flag})")
        self.iteration = iteration
        self.flag = flag


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    batch_size: int = 32
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    iterations: int = 1_000_000
    epochs: int = 120
    variant_probability: float = 0.5
    variants: tuple = ("L", "S")
    fixed_variant: str = "L"
    checkpoint_every: int = 0
    crop_size: int = 128
    tasks: tuple = ()
    seed: int = 0
    grad_clip: float = None
    out_dir: str = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if not 0 <= self.variant_probability <= 1:
            raise ValueError(f"variant_probability must be in [0, 1], got {self.variant_probability}")
        if len(self.variants) != 2:
            raise ValueError(f"variants needs exactly two names (large, small), got {self.variants}")
        self.variants = tuple(self.variants)
        self.tasks = tuple(self.tasks)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["variants"], d["tasks"] = list(self.variants), list(self.tasks)
        return d


@dataclass
class TrainState:
    model: DyNet
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    iteration: int = 0
    passes: dict = field(default_factory=dict)
    losses: list = field(default_factory=list)
    running_loss: float = None

    def record(self, flag, loss, momentum=0.9):
        self.iteration += 1
        self.passes[flag] = self.passes.get(flag, 0) + 1
        self.losses.append(loss)
        if self.running_loss is None:
            self.running_loss = loss
        else:
            self.running_loss = momentum * self.running_loss + (1 - momentum) * loss

    def optimizer_state_keys(self):
        """Parameter names that carry optimizer moments."""
        names = {id(p): n for n, p in self.model.named_parameters()}
        return {names[id(p)] for p in self.optimizer.state}

    def step_ledger(self, n_variants=2):
        """Pass accounting: one alternating run vs one run per variant of equal length."""
        total = sum(self.passes.values())
        return {
            "total_passes": total,
            "passes_per_variant": dict(sorted(self.passes.items())),
            "variants_trained": n_variants,
            "separate_training_passes": n_variants * total,
            "pass_saving": 1 - 1 / n_variants,
        }


def trainable_keys(model):
    return {n for n, p in model.named_parameters() if p.requires_grad}


def make_optimizer(model, cfg):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2))


def init_state(model, cfg):
    return TrainState(model, make_optimizer(model, cfg), np.random.default_rng(cfg.seed))


def select_variant(rng, p, names=("L", "S")):
    """The branch flag: ``names[0]`` with probability ``p``, else ``names[1]``."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return names[0] if rng.random() < p else names[1]


def l1_loss(output, target):
    return F.l1_loss(output, target)


def train_step(state, batch, flag, grad_clip=None):
    """One forward/backward/update under variant ``flag``; returns the loss."""
    inp, target = batch
    model = state.model
    switch_variant(model, flag)
    model.train()
    state.optimizer.zero_grad(set_to_none=True)
    loss = l1_loss(model(inp), target)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NonFiniteLoss(state.iteration, flag, value)
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    state.optimizer.step()
    state.record(flag, value)
    return value


def pretrain_step(state, batch, flag, grad_clip=None):
    """Masked-reconstruction step: L1 over all pixels against the clean target."""
    return train_step(state, batch, flag, grad_clip)


def to_tensor(images, dtype=torch.float32):
    """Stack (H, W, 3) 8-bit-scale arrays into a [B, 3, H, W] tensor in [0, 1]."""
    arr = np.stack([np.asarray(im, dtype=np.float64) for im in images]) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def pretrain_batch(patches, recipe, batch_size, rng, dtype=torch.float32):
    """Draw ``batch_size`` patches and compose masked/degraded samples from them."""
    idx = rng.integers(0, len(patches), size=batch_size)
    samples = [compose_pretrain_sample(patches[i], recipe, rng) for i in idx]
    return to_tensor([s.input for s in samples], dtype), to_tensor([s.target for s in samples], dtype)


class RunLog:
    """Append-only JSON-lines training log."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        self._t0 = time.perf_counter()

    def write(self, state, flag, loss, lr):
        rec = {
            "iteration": state.iteration,
            "flag": flag,
            "loss": loss,
            "lr": lr,
            "wall_time": round(time.perf_counter() - self._t0, 6),
        }
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")


def save_train_state(path, state, cfg):
    save_checkpoint(
        path,
        state.model,
        iteration=state.iteration,
        optimizer=state.optimizer.state_dict(),
        rng=state.rng.bit_generator.state,
        passes=dict(state.passes),
        train_config=cfg.to_dict(),
    )


def latest_checkpoint(out_dir):
    found = sorted(Path(out_dir).glob("ckpt_*.pt"))
    return found[-1] if found else None


def load_train_state(path, cfg, variant_name=None):
    """Resume: rebuild model, optimizer moments, rng and counters from a checkpoint."""
    payload = read_checkpoint(path)
    arch = ArchConfig(**payload["manifest"])
    model = DyNet(arch, resolve_variant(arch, variant_name or cfg.variants[0]))
    model.load_state_dict(payload["params"], strict=True)
    state = init_state(model, cfg)
    if "optimizer" in payload:
        state.optimizer.load_state_dict(payload["optimizer"])
    if "rng" in payload:
        state.rng.bit_generator.state = payload["rng"]
    state.iteration = int(payload.get("iteration", 0))
    state.passes = dict(payload.get("passes", {}))
    return state


def _maybe_checkpoint(state, cfg, force=False):
    if not cfg.out_dir:
        return None
    every = cfg.checkpoint_every
    if force or (every and state.iteration % every == 0):
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"ckpt_{state.iteration:08d}.pt"
        save_train_state(path, state, cfg)
        return path
    return None


def _final_checkpoint(state, cfg, ran):
    # skip when nothing ran or the cadence already saved this iteration
    every = cfg.checkpoint_every
    if ran and not (every and state.iteration % every == 0):
        _maybe_checkpoint(state, cfg, force=True)


def pretrain(state, patches, cfg, recipe=None, iterations=None, run_log=None):
    """Dynamic pre-training loop; one randomly chosen variant per iteration."""
    recipe = recipe or CorruptionRecipe(crop_size=cfg.crop_size)
    iterations = cfg.iterations if iterations is None else iterations
    dtype = next(state.model.parameters()).dtype
    if not len(patches):
        raise ValueError("pre-training needs at least one patch")
    for _ in range(iterations):
        flag = select_variant(state.rng, cfg.variant_probability, cfg.variants)
        batch = pretrain_batch(patches, recipe, cfg.batch_size, state.rng, dtype)
        loss = pretrain_step(state, batch, flag, cfg.grad_clip)
        if run_log:
            run_log.write(state, flag, loss, cfg.lr)
        _maybe_checkpoint(state, cfg)
    _final_checkpoint(state, cfg, iterations)
    return state


def random_crop_pair(degraded, clean, size, rng):
    h, w = clean.shape[:2]
    if degraded.shape != clean.shape:
        raise ValueError(f"pair shape mismatch: {degraded.shape} vs {clean.shape}")
    if h < size or w < size:
        raise ValueError(f"training pair {h}x{w} smaller than crop size {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return degraded[y:y + size, x:x + size], clean[y:y + size, x:x + size]


def _epoch_loop(state, pairs, cfg, choose, run_log=None):
    dtype = next(state.model.parameters()).dtype
    for _ in range(cfg.epochs):
        order = state.rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [pairs[i] for i in order[start:start + cfg.batch_size]]
            crops = [random_crop_pair(d, c, cfg.crop_size, state.rng) for d, c in chunk]
            batch = (to_tensor([d for d, _ in crops], dtype), to_tensor([c for _, c in crops], dtype))
            flag = choose()
            loss = train_step(state, batch, flag, cfg.grad_clip)
            if run_log:
                run_log.write(state, flag, loss, cfg.lr)
            _maybe_checkpoint(state, cfg)
    return state


def merge_tasks(datasets, tasks=()):
    """Flatten ``{task: [(degraded, clean), ...]}``; every declared task must be present."""
    missing = [t for t in tasks if t not in datasets or not len(datasets[t])]
    if missing:
        raise ValueError(f"dataset manifest missing declared task(s): {missing}")
    names = tasks or tuple(datasets)
    return [pair for t in names for pair in datasets[t]]


def finetune_all_in_one(state, datasets, cfg, run_log=None):
    """Variant-alternating fine-tuning on the merged task corpus (no masking)."""
    pairs = merge_tasks(datasets, cfg.tasks)
    choose = lambda: select_variant(state.rng, cfg.variant_probability, cfg.variants)
    _epoch_loop(state, pairs, cfg, choose, run_log)
    _final_checkpoint(state, cfg, cfg.epochs)
    return state


def finetune_single(state, dataset, cfg, run_log=None):
    """Fine-tune one task with a fixed variant (``cfg.fixed_variant``)."""
    if not len(dataset):
        raise ValueError("single-task fine-tuning needs a non-empty dataset")
    flag = cfg.fixed_variant
    _epoch_loop(state, list(dataset), cfg, lambda: flag, run_log)
    _final_checkpoint(state, cfg, cfg.epochs)
    return state

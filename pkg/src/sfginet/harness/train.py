"""Minibatch Adam training with validation early stopping."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import models as M
from .. import nn
from ..data import PairDataset
from ..errors import InputError, NumericError, ParseError, TrainingError
from .evaluate import evaluate

MODEL_KINDS = ("productnet", "siamese_deepsets", "wpce")


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "productnet"
    h_widths: tuple = (128, 128, 64)
    phi_widths: tuple = (128, 64)
    rho_widths: tuple = (64,)
    decoder_widths: tuple = (100, 100)
    n_out: int = 256
    pooling: str = "sum"
    weight_as_feature: bool = False
    baseline_weighted: bool = False
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    max_steps: int | None = None
    lam: float = 0.1
    sinkhorn_eps: float = 0.1
    seed: int = 0
    target: str | None = None

    def __post_init__(self):
        for key in ("h_widths", "phi_widths", "rho_widths", "decoder_widths"):
            object.__setattr__(self, key, tuple(int(w) for w in getattr(self, key)))
        if self.model_kind not in MODEL_KINDS:
            raise InputError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if not self.lr >= 0:
            raise InputError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1 or self.n_out < 1:
            raise InputError("batch_size, patience and n_out must be >= 1 and max_epochs >= 0")
        if self.sinkhorn_eps <= 0:
            raise InputError("sinkhorn_eps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("h_widths", "phi_widths", "rho_widths", "decoder_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        try:
            return TrainConfig.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from exc


def build_model(cfg: TrainConfig, dim: int, rng: np.random.Generator):
    if cfg.model_kind == "productnet":
        return M.make_productnet(dim, rng, cfg.h_widths, cfg.phi_widths, cfg.rho_widths, cfg.pooling,
                                 cfg.weight_as_feature)
    if cfg.model_kind == "siamese_deepsets":
        return M.make_siamese(dim, rng, cfg.h_widths, cfg.phi_widths, cfg.baseline_weighted)
    return M.make_wpce(dim, rng, cfg.n_out, cfg.h_widths, cfg.phi_widths, cfg.decoder_widths,
                       cfg.baseline_weighted)


@dataclass
class TrainResult:
    model: object
    steps: list = field(default_factory=list)    # (step, epoch, batch, loss)
    epochs: list = field(default_factory=list)   # (epoch, mean train loss, val mre)
    best_epoch: int = 0
    best_val: float = float("inf")
    stopped_early: bool = False


def _val_score(model, pairs) -> float:
    if not pairs:
        return float("nan")
    return evaluate(model, pairs).mean_rel_error


def train(cfg: TrainConfig, dataset: PairDataset, model=None) -> TrainResult:
    """Train on ``dataset.train``; returns the best model on ``dataset.val``.

    Without validation pairs the last model is returned.
    """
    pairs = dataset.train
    if not pairs:
        raise InputError("dataset has no training pairs")
    if cfg.target is not None and any(p.label_kind != cfg.target for p in dataset.pairs):
        raise InputError(f"dataset labels are not all {cfg.target}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng, shuffle_rng = (np.random.Generator(np.random.PCG64(s)) for s in seeds)
    if model is None:
        model = build_model(cfg, pairs[0].A.dim, init_rng)
    flat = M.get_flat(model)
    adam = nn.AdamState.zeros(flat.size, lr=cfg.lr)
    labels = np.array([p.label for p in pairs])
    result = TrainResult(model)
    best_flat = flat.copy()
    bad_epochs = 0
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        losses = []
        for batch, start in enumerate(range(0, len(pairs), cfg.batch_size)):
            idx = order[start: start + cfg.batch_size]
            As = [pairs[i].A for i in idx]
            Bs = [pairs[i].B for i in idx]
            tape = nn.Tape()
            loss, _ = M.batch_loss(model, As, Bs, labels[idx], tape, cfg.sinkhorn_eps, cfg.lam)
            value = float(nn.value_of(loss))
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch} (step {step + 1})")
            nn.backward(tape, loss)
            try:
                nn.adam_step(adam, flat, M.flat_grad(model, tape))
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {batch}: {exc}") from exc
            M.set_flat(model, flat)
            step += 1
            losses.append(value)
            result.steps.append((step, epoch, batch, value))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        val = _val_score(model, dataset.val)
        result.epochs.append((epoch, float(np.mean(losses)), val))
        if not dataset.val or val < result.best_val:
            result.best_val, result.best_epoch = val, epoch
            best_flat = flat.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
        if bad_epochs >= cfg.patience:
            result.stopped_early = True
            break
    M.set_flat(model, best_flat)
    return result


def write_loss_curve(result: TrainResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "batch", "loss"])
        for step, epoch, batch, loss in result.steps:
            w.writerow([step, epoch, batch, format(loss, ".17g")])


def write_epoch_curve(result: TrainResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_mean_rel_error"])
        for epoch, loss, val in result.epochs:
            w.writerow([epoch, format(loss, ".17g"), format(val, ".17g")])


def moving_average(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return np.array([values.mean()]) if len(values) else values
    return np.convolve(values, np.ones(window) / window, mode="valid")

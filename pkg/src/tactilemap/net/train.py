"""Masked cosine loss, Adam and the accumulate-then-step training loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from .model import ModelWeights, NetConfig, NormalNet, build_input

log = logging.getLogger(__name__)

COS_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


def masked_cosine_loss(pred, gt, mask, grad=False):
    """Mean of ``1 - cos(pred, gt)`` over the pixels where ``mask`` is set.

    ``|pred|`` is evaluated as ``sqrt(|pred|^2 + eps^2)`` so a zero
    prediction gives cos = 0 instead of a division by zero. With
    ``grad=True`` returns ``(loss, dloss/dpred)``.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt, dtype=pred.dtype if pred.dtype.kind == "f" else np.float64)
    m = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[:-1] != m.shape:
        raise ValueError("pred, gt and mask shapes disagree")
    count = int(m.sum())
    if count == 0:
        raise ValueError("mask selects no pixels")
    p = pred[m]
    g = gt[m]
    g_unit = g / np.linalg.norm(g, axis=-1, keepdims=True)
    q = np.sqrt(np.sum(p * p, axis=-1, keepdims=True) + COS_EPS ** 2)
    dot = np.sum(p * g_unit, axis=-1, keepdims=True)
    cos = dot / q
    loss = float(np.sum(1.0 - cos) / count)
    if not grad:
        return loss
    dp = -(g_unit / q - dot * p / q ** 3) / count
    dpred = np.zeros_like(pred)
    dpred[m] = dp
    return loss, dpred


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    lr_decay_per_epoch: float = 0.95
    weight_decay: float = 1e-5
    grad_accum: int = 32
    batch: int = 1
    mask_gamma: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.grad_accum < 1 or self.batch != 1:
            raise ValueError("invalid schedule (batch must be 1)")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if not 0 < self.mask_gamma < 1:
            raise ValueError("mask_gamma must lie in (0, 1)")


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p[1].params[p[2]]) for p in params]
        self.v = [np.zeros_like(p[1].params[p[2]]) for p in params]

    def step(self, scale=1.0):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (_, layer, name, _) in enumerate(self.params):
            w = layer.params[name]
            g = layer.grads[name] * scale
            if self.wd:
                g = g + self.wd * w
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            update = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            layer.params[name] = (w - update).astype(w.dtype)


def _sample_fields(sample):
    x = build_input(sample.image, sample.untouched)
    return x, sample.gt_normals.data, sample.mask


def train(dataset, net_cfg=NetConfig(), train_cfg=TrainConfig(), callback=None):
    """Fit a :class:`NormalNet` to indentation samples.

    Samples are visited in a seeded per-epoch permutation; gradients of
    ``grad_accum`` consecutive samples are averaged before each Adam step
    (a shorter tail at epoch end is stepped too). The learning rate decays
    by ``lr_decay_per_epoch`` after every epoch.

    Returns ``(ModelWeights, history)`` with one history row per epoch.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    net = NormalNet(net_cfg, seed=train_cfg.seed)
    params = list(net.named_params())
    opt = Adam(params, train_cfg.lr, (train_cfg.beta1, train_cfg.beta2), train_cfg.adam_eps,
               train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    history = []
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        lr = train_cfg.lr * train_cfg.lr_decay_per_epoch ** epoch
        opt.lr = lr
        order = rng.permutation(len(samples))
        net.zero_grad()
        pending = 0
        losses = []
        for sid in order:
            x, gt, mask = _sample_fields(samples[sid])
            out = net.forward(x, train=True)
            loss, dout = masked_cosine_loss(out, gt, mask, grad=True)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, sample {sid}")
            net.backward(dout.astype(out.dtype))
            losses.append(loss)
            pending += 1
            if pending == train_cfg.grad_accum:
                if lr > 0:
                    opt.step(1.0 / pending)
                net.zero_grad()
                pending = 0
        if pending:
            if lr > 0:
                opt.step(1.0 / pending)
            net.zero_grad()
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr}
        history.append(row)
        log.info("epoch %d loss %.5f lr %.2e (%.1fs)", epoch, row["mean_loss"], lr, time.perf_counter() - t0)
        if callback is not None:
            callback(row, net)
    weights = ModelWeights.from_net(net)
    if not weights.is_finite():
        raise TrainingError("training produced non-finite weights")
    return weights, history


def evaluate(weights, dataset):
    """Mean masked cosine loss of inference-mode predictions."""
    net = weights.to_net() if isinstance(weights, ModelWeights) else weights
    losses = []
    for s in dataset:
        x, gt, mask = _sample_fields(s)
        losses.append(masked_cosine_loss(net.forward(x, train=False), gt, mask))
    return float(np.mean(losses))


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "mean_loss", "lr"])
        w.writeheader()
        for row in history:
            w.writerow(row)

"""End-to-end training of the label predictor on a scene source."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tinynet
from .grid import resize_nearest
from .losses import TERM_NAMES, LossConfig, total_loss
from .sampling import SamplerConfig, sample_pairs, stratified_offsets, sample_pairs_stratified
from .tinynet import NetConfig, OptState, TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    scenes_per_step: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    net: NetConfig = field(default_factory=NetConfig)
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    optimizer: str = "sgd"
    lr_schedule: str = "constant"
    lr_final_fraction: float = 0.05
    grad_clip: float = 0.0
    checkpoint_interval: int = 0
    log_interval: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.scenes_per_step < 1:
            raise ValueError("scenes_per_step must be >= 1")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class TrainResult:
    params: tinynet.ParamSet
    opt: OptState
    trace: list
    net: NetConfig


def scene_order(n_scenes, steps, seed):
    """Epoch-wise shuffled scene indices, one per step."""
    rng = np.random.default_rng([seed, 7])
    order = []
    while len(order) < steps:
        order.extend(int(i) for i in rng.permutation(n_scenes))
    return order[:steps]


def learning_rate(tc: TrainConfig, step):
    if tc.lr_schedule == "constant":
        return tc.lr
    frac = tc.lr_final_fraction
    return tc.lr * (frac + (1 - frac) * 0.5 * (1 + math.cos(math.pi * step / tc.steps)))


def scene_loss(params, net, scene, tc: TrainConfig, step, offsets=None):
    """Forward, loss and backward for one scene; returns ``(loss, grads)``."""
    f, tape = tinynet.forward(params, net, scene.image)
    gt = resize_nearest(scene.gt, net.downsample_factor)
    if tc.sampler.mode == "random":
        pairs = sample_pairs(gt, replace(tc.sampler, seed=(tc.sampler.seed * 1_000_003 + step) % 2**63))
    else:
        pairs = sample_pairs_stratified(gt, tc.sampler, offsets)
    loss = total_loss(f, gt, pairs, tc.loss)
    for name in TERM_NAMES:
        if not math.isfinite(loss.terms[name]):
            raise TrainingError(f"non-finite {name} loss at step {step}")
    grads = tinynet.backward(tape, net, loss.grad)
    return loss, grads


def train(tc: TrainConfig, dataset, checkpoint_cb=None, progress=None) -> TrainResult:
    """Run ``tc.steps`` SGD steps over ``dataset`` (a sequence of scenes).

    ``checkpoint_cb(params, opt, step)`` is called every
    ``checkpoint_interval`` steps and once at the end.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    net = tc.net
    net.check_label_head()
    params = tinynet.init(net)
    opt = OptState(lr=tc.lr, momentum=tc.momentum, weight_decay=tc.weight_decay, kind=tc.optimizer)
    offsets = stratified_offsets(tc.sampler) if tc.sampler.mode == "stratified" else None
    order = scene_order(len(dataset), tc.steps * tc.scenes_per_step, tc.seed)
    trace = []
    for step in range(tc.steps):
        acc = None
        terms = dict.fromkeys(TERM_NAMES, 0.0)
        total = 0.0
        for j in range(tc.scenes_per_step):
            scene = dataset[order[step * tc.scenes_per_step + j]]
            loss, grads = scene_loss(params, net, scene, tc, step, offsets)
            total += loss.value / tc.scenes_per_step
            for name in TERM_NAMES:
                terms[name] += loss.terms[name] / tc.scenes_per_step
            if acc is None:
                acc = grads
            else:
                for k in acc:
                    acc[k] = acc[k] + grads[k]
        if tc.scenes_per_step > 1:
            acc = {k: v / tc.scenes_per_step for k, v in acc.items()}
        if not math.isfinite(total):
            raise TrainingError(f"non-finite total loss at step {step}")
        if tc.grad_clip > 0:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in acc.values()))
            if norm > tc.grad_clip:
                acc = {k: v * (tc.grad_clip / norm) for k, v in acc.items()}
        opt.lr = learning_rate(tc, step)
        tinynet.step(params, acc, opt)
        if step % tc.log_interval == 0 or step == tc.steps - 1:
            row = {"step": step, **terms, "total": total}
            trace.append(row)
            if progress is not None:
                progress(row)
        if checkpoint_cb is not None and tc.checkpoint_interval and (step + 1) % tc.checkpoint_interval == 0:
            checkpoint_cb(params, opt, step + 1)
    if checkpoint_cb is not None:
        checkpoint_cb(params, opt, tc.steps)
    return TrainResult(params, opt, trace, net)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", *TERM_NAMES, "total"])
        for row in trace:
            writer.writerow([row["step"]] + [repr(float(row[k])) for k in (*TERM_NAMES, "total")])

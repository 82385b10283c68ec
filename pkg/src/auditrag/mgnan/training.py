"""Supervised graph-level training with hand-written reverse-mode gradients."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ..errors import DataError, NumericError
from ..graph_store import KnowledgeGraph
from .model import Link, MGnanModel, Structure, softplus

logger = logging.getLogger(__name__)


class Task(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass
class Sample:
    """One training graph: structure, node features (ascending id order) and
    a length-K target (one-hot for softmax classification)."""

    graph: KnowledgeGraph
    features: np.ndarray
    target: np.ndarray
    qid: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if self.features.shape[0] != len(self.graph):
            raise DataError("one feature row per graph node is required")

    @cached_property
    def structure(self) -> Structure:
        return Structure.from_graph(self.graph)

    @classmethod
    def from_subgraph(cls, sub, store, target, qid: str | None = None) -> "Sample":
        g = sub.graph if hasattr(sub, "graph") else sub
        return cls(g, store.rows(g.node_ids), target, qid if qid is not None else getattr(sub, "qid", ""))


def _task_for(link: Link) -> Task:
    return Task.REGRESSION if link is Link.IDENTITY else Task.CLASSIFICATION


def _stack(model: MGnanModel, batch: Sequence[Sample]):
    max_d = max(s.structure.max_distance for s in batch)
    profile = np.zeros((sum(len(s.graph) for s in batch), max_d + 1))
    pos = 0
    offsets = []
    for s in batch:
        p = s.structure.profile
        profile[pos : pos + p.shape[0], : p.shape[1]] = p
        offsets.append(pos)
        pos += p.shape[0]
    features = np.concatenate([s.features for s in batch])
    seg = np.repeat(np.arange(len(batch)), [len(s.graph) for s in batch])
    targets = np.stack([s.target for s in batch])
    if targets.shape[1] != model.n_outputs:
        raise DataError(f"targets have {targets.shape[1]} channels, model has {model.n_outputs}")
    return profile, features, seg, np.array(offsets), targets


def _per_sample_loss(link: Link, z: np.ndarray, t: np.ndarray):
    """Per-sample loss and d(loss)/dz for the link's natural loss."""
    k = z.shape[1]
    if link is Link.IDENTITY:
        diff = z - t
        return (diff**2).mean(axis=1), 2.0 * diff / k
    if link is Link.SIGMOID:
        loss = (softplus(z) - t * z).mean(axis=1)
        return loss, (link.apply(z) - t) / k
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -(t * logp).sum(axis=1), np.exp(logp) * t.sum(axis=1, keepdims=True) - t


def loss_and_gradients(model: MGnanModel, batch: Sequence[Sample], task: Task | str | None = None):
    """Mean batch loss and its exact gradient for every parameter.

    Regression (identity link) uses mean squared error over channels;
    classification uses binary cross-entropy per channel (sigmoid) or
    categorical cross-entropy (softmax).
    """
    if not batch:
        raise DataError("empty batch")
    task = Task(task) if task is not None else _task_for(model.link)
    if task is not _task_for(model.link):
        raise DataError(f"task {task.value} does not match link {model.link.value}")
    profile, features, seg, offsets, targets = _stack(model, batch)
    n_samples = len(batch)
    rho = model.rho
    t_in = 1.0 / (1.0 + np.arange(profile.shape[1]))
    interp = rho.interpolation_matrix(t_in)
    weights = profile @ rho(t_in)

    groups = model.grouping.groups
    shapes, caches = [], []
    for g, cols in enumerate(groups):
        out, acts = model.shape_forward(g, features[:, list(cols)], keep=True)
        shapes.append(out)
        caches.append(acts)
    contrib = sum(shapes) * weights[:, None]
    z = np.add.reduceat(contrib, offsets, axis=0)

    losses, dz = _per_sample_loss(model.link, z, targets)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        s = batch[bad[0]]
        raise NumericError(f"non-finite loss for sample {bad[0]} ({s.qid or 'unnamed'})")
    loss = float(losses.mean())
    dz = dz / n_samples

    grads: dict[str, np.ndarray] = {}
    dz_rows = dz[seg]
    d_weights = np.zeros(len(weights))
    n_layers = len(model.hidden) + 1
    for g in range(len(groups)):
        d_weights += (shapes[g] * dz_rows).sum(axis=1)
        delta = dz_rows * weights[:, None]
        acts = caches[g]
        for layer in reversed(range(n_layers)):
            grads[f"shape{g}.W{layer}"] = acts[layer].T @ delta
            grads[f"shape{g}.b{layer}"] = delta.sum(axis=0)
            if layer:
                delta = (delta @ model.params[f"shape{g}.W{layer}"].T) * (1.0 - acts[layer] ** 2)
    g_rho_vals = profile.T @ d_weights
    g_base, g_inc = rho.knot_grad_to_params(interp.T @ g_rho_vals)
    grads["rho.base"] = np.array(g_base)
    grads["rho.increments"] = g_inc
    for name, arr in grads.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient for {name} in a batch of {n_samples} "
                               f"(first sample {batch[0].qid or 'unnamed'})")
    return loss, {name: grads[name] for name in model.params}


def batch_loss(model: MGnanModel, batch: Sequence[Sample]) -> float:
    return loss_and_gradients(model, batch)[0]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("lr, epochs must be non-negative and batch_size positive")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for k in params:
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * grads[k]
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * grads[k] ** 2
            step = c.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + c.eps)
            params[k] = params[k] - step


def train(model: MGnanModel, dataset: Sequence[Sample], cfg: TrainConfig = TrainConfig()):
    """Minibatch Adam.  Returns a trained copy of ``model`` and the per-epoch
    mean training loss (size-weighted over minibatches, measured before each
    update)."""
    if not dataset:
        raise DataError("training set is empty")
    model = model.copy()
    opt = Adam(model.params, cfg)
    rng = np.random.default_rng(cfg.seed)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            try:
                loss, grads = loss_and_gradients(model, batch)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from None
            total += loss * len(batch)
            opt.step(model.params, grads)
        epoch_loss = total / len(dataset)
        if not np.isfinite(epoch_loss):
            raise NumericError(f"training diverged at epoch {epoch}")
        curve.append(epoch_loss)
        logger.debug("epoch %d loss %.6g", epoch, epoch_loss)
    return model, curve

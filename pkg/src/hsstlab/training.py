"""Heterogeneous semi-siamese training and the plain-training baseline.

One HSST step:

1. sample identities that are in neither prototype queue, one (NIR, VIS)
   pair per identity, and flip a fair coin per pair deciding which image
   goes to the probe-net;
2. the probe-net embeds the probe-role images (with gradients), the
   gallery-net embeds the gallery-role images (without);
3. each pair is scored against the queue of the *other* domain: an NIR probe
   feature is contrasted with VIS prototypes and vice versa;
4. the batch-mean loss is back-propagated into the probe-net only and one
   SGD step is taken;
5. the gallery-net moves toward the probe-net by exponential moving average;
6. the gallery-role features are pushed into their own domain's queue.

Pairs whose negative queue is still empty (the first few steps) are skipped.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .checkpoint import Checkpoint, save_checkpoint
from .data import NIR, VIS, Dataset, pretraining_pool
from .errors import ConfigError, InputError, NumericError
from .losses import LossConfig
from .model import Arch, ModelPair, NetworkParams, ema_update, forward, init_pair, init_params

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ config

@dataclass
class TrainConfig:
    mode: str = "hsst"
    steps: int = 2000
    batch_size: int = 16
    lr: float = 0.05
    milestones: list | None = None
    momentum: float = 0.0
    weight_decay: float = 0.0
    queue_capacity: int = 64
    ema_weight: float = 0.999
    fold: int = 0
    train_masked: bool = True
    pretrain_steps: int = 1500
    pretrain_identities: int = 400
    pretrain_per_identity: int = 4
    pretrain_lr: float = 0.1
    pretrain_head: str = "am_softmax"
    init_checkpoint: str = ""

    def __post_init__(self):
        if self.mode not in ("hsst", "plain"):
            raise ConfigError(f"train.mode must be 'hsst' or 'plain', got {self.mode!r}")
        if self.steps < 0:
            raise ConfigError("train.steps must be >= 0")
        if self.batch_size <= 0:
            raise ConfigError("train.batch_size must be positive")
        if self.queue_capacity < 0:
            raise ConfigError("train.queue_capacity must be >= 0")
        if not 0.0 <= self.ema_weight <= 1.0:
            raise ConfigError("train.ema_weight must lie in [0, 1]")
        if self.lr < 0 or self.pretrain_lr < 0:
            raise ConfigError("learning rates must be >= 0")

    def resolved_milestones(self) -> list:
        """Explicit milestones, or the 60% / 80% points of the run."""
        if self.milestones is not None:
            return sorted(int(m) for m in self.milestones)
        return [int(round(0.6 * self.steps)), int(round(0.8 * self.steps))]

    def min_identities(self) -> int:
        # the two queues can jointly hold 2 * capacity distinct identities
        return self.batch_size + 2 * self.queue_capacity


def lr_at(step: int, base_lr: float, milestones) -> float:
    """Learning rate divided by 10 at every milestone already reached."""
    drops = sum(1 for m in milestones if step >= m)
    return base_lr * (0.1 ** drops)


# ------------------------------------------------------------------ queues

class PrototypeQueue:
    """Fixed-capacity FIFO of (unit feature, identity) from one domain."""

    def __init__(self, domain: str, capacity: int = 128, dim: int | None = None):
        if domain not in (NIR, VIS):
            raise InputError(f"queue domain must be NIR or VIS, got {domain!r}")
        if capacity < 0:
            raise ConfigError("queue capacity must be >= 0")
        self.domain = domain
        self.capacity = int(capacity)
        self.dim = dim
        self._entries = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._entries)

    def enqueue(self, feature, identity: int) -> None:
        if self.capacity == 0:
            return
        f = np.asarray(feature, dtype=np.float64).copy()
        if abs(np.linalg.norm(f) - 1.0) > 1e-5:
            raise InputError("queue entries must be unit-norm features")
        self._entries.append((f, int(identity)))

    def features(self) -> np.ndarray:
        if not self._entries:
            return np.zeros((0, self.dim or 0))
        return np.stack([f for f, _ in self._entries])

    def identities(self) -> list:
        return [i for _, i in self._entries]

    def identity_set(self) -> set:
        return {i for _, i in self._entries}

    def copy(self) -> "PrototypeQueue":
        q = PrototypeQueue(self.domain, self.capacity, self.dim)
        for f, i in self._entries:
            q._entries.append((f.copy(), i))
        return q


# ------------------------------------------------------------------ sampling

class PairSource:
    """Per-identity sample index lists for two views (NIR side, VIS side).

    ``same_pool`` marks sources whose two views come from one list (the
    VIS-only pretraining pool); then two distinct samples are drawn.
    """

    def __init__(self, images, ids, first: dict, second: dict, same_pool: bool = False):
        self.images = images
        self.ids = list(ids)
        self.first = first
        self.second = second
        self.same_pool = same_pool
        for i in self.ids:
            if len(first.get(i, ())) == 0 or len(second.get(i, ())) == 0:
                raise ConfigError(f"identity {i} lacks samples in one of the two domains")

    @classmethod
    def heterogeneous(cls, dataset: Dataset, identities, nir_masked: bool) -> "PairSource":
        ids = sorted(int(i) for i in identities)
        nir, vis = {}, {}
        for i in ids:
            nir[i] = dataset.select([i], NIR, nir_masked)
            vis[i] = dataset.select([i], VIS)
        return cls(dataset.images, ids, nir, vis)

    @classmethod
    def single_domain(cls, dataset: Dataset) -> "PairSource":
        ids = sorted(set(int(i) for i in dataset.identity))
        groups = {i: np.flatnonzero(dataset.identity == i) for i in ids}
        return cls(dataset.images, ids, groups, groups, same_pool=True)


@dataclass
class PairBatch:
    identities: np.ndarray
    nir_images: np.ndarray
    vis_images: np.ndarray
    nir_probe: np.ndarray  # True: the NIR image feeds the probe-net

    def __post_init__(self):
        self.identities = np.asarray(self.identities, dtype=np.int64)
        self.nir_probe = np.asarray(self.nir_probe, dtype=bool)
        n = len(self.identities)
        if not (len(self.nir_images) == len(self.vis_images) == len(self.nir_probe) == n):
            raise InputError("pair batch fields have inconsistent lengths")
        if len(set(self.identities.tolist())) != n:
            raise InputError("batch identities must be pairwise distinct")

    def __len__(self):
        return len(self.identities)

    def probe_images(self) -> np.ndarray:
        return np.where(self.nir_probe[:, None, None, None], self.nir_images, self.vis_images)

    def gallery_images(self) -> np.ndarray:
        return np.where(self.nir_probe[:, None, None, None], self.vis_images, self.nir_images)


def _draw_pairs(source: PairSource, chosen, rng: np.random.Generator):
    nir_idx, vis_idx = [], []
    for i in chosen:
        if source.same_pool and len(source.first[i]) > 1:
            a, b = rng.choice(source.first[i], 2, replace=False)
        else:
            a = rng.choice(source.first[i])
            b = rng.choice(source.second[i])
        nir_idx.append(a)
        vis_idx.append(b)
    return source.images[nir_idx], source.images[vis_idx]


def sample_batch(source: PairSource, state: "TrainState", batch_size: int) -> PairBatch:
    """Identity-disjoint pair batch with one fair role bit per pair."""
    queued = state.queue_nir.identity_set() | state.queue_vis.identity_set()
    available = [i for i in source.ids if i not in queued]
    if len(available) < batch_size:
        need = batch_size + state.queue_nir.capacity + state.queue_vis.capacity
        raise ConfigError(
            f"only {len(available)} identities are outside the prototype queues but the batch "
            f"needs {batch_size}; the training split needs at least {need} identities "
            f"(batch_size + capacity of both queues)"
        )
    chosen = state.rng.choice(np.asarray(available), size=batch_size, replace=False)
    nir_images, vis_images = _draw_pairs(source, chosen, state.rng)
    roles = state.rng.integers(0, 2, size=batch_size).astype(bool)
    return PairBatch(chosen, nir_images, vis_images, roles)


def sample_plain_batch(source: PairSource, rng: np.random.Generator, batch_size: int) -> PairBatch:
    """Pair batch without queue constraints (plain training / pretraining)."""
    if len(source.ids) < batch_size:
        raise ConfigError(f"need at least {batch_size} identities, have {len(source.ids)}")
    chosen = rng.choice(np.asarray(source.ids), size=batch_size, replace=False)
    nir_images, vis_images = _draw_pairs(source, chosen, rng)
    return PairBatch(chosen, nir_images, vis_images, np.ones(batch_size, dtype=bool))


# ------------------------------------------------------------------ optimizer

@dataclass
class SGDState:
    base_lr: float
    milestones: list
    momentum: float = 0.0
    weight_decay: float = 0.0
    buffers: dict = field(default_factory=dict)

    def lr(self, step: int) -> float:
        return lr_at(step, self.base_lr, self.milestones)

    def apply(self, tensors: "OrderedDict[str, torch.Tensor]", grads: dict, lr: float):
        """Return new tensors after one SGD step (inputs are left untouched)."""
        out = OrderedDict()
        with torch.no_grad():
            for name, p in tensors.items():
                g = grads.get(name)
                if g is None:
                    out[name] = p.detach().clone()
                    continue
                if self.weight_decay:
                    g = g + self.weight_decay * p
                if self.momentum:
                    buf = self.buffers.get(name)
                    buf = g.clone() if buf is None else buf * self.momentum + g
                    self.buffers[name] = buf
                    g = buf
                out[name] = p.detach() - lr * g
        return out


# ------------------------------------------------------------------ HSST

@dataclass
class StepMetrics:
    step: int
    loss: float | None
    loss_nv: float | None
    loss_vn: float | None
    mean_pos_cos: float
    mean_neg_cos: float | None
    feature_std: float
    lr: float
    active_pairs: int
    queue_nir: int = 0
    queue_vis: int = 0

    def to_log(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    pair: ModelPair
    queue_nir: PrototypeQueue
    queue_vis: PrototypeQueue
    rng: np.random.Generator
    optimizer: SGDState
    step: int = 0

    def queue_for(self, domain: str) -> PrototypeQueue:
        return self.queue_nir if domain == NIR else self.queue_vis


def init_train_state(seed: int, cfg: TrainConfig, arch: Arch = None, init: NetworkParams = None) -> TrainState:
    arch = arch or (init.arch if init is not None else Arch())
    if init is not None:
        probe = init.to(torch.float32)
        pair = ModelPair(probe, probe.clone(), cfg.ema_weight)
    else:
        pair = init_pair(seed, arch, cfg.ema_weight)
    return TrainState(
        pair=pair,
        queue_nir=PrototypeQueue(NIR, cfg.queue_capacity, arch.embedding_dim),
        queue_vis=PrototypeQueue(VIS, cfg.queue_capacity, arch.embedding_dim),
        rng=np.random.default_rng([int(seed), 0x55]),
        optimizer=SGDState(cfg.lr, cfg.resolved_milestones(), cfg.momentum, cfg.weight_decay),
    )


def _mean_or_none(values):
    return float(np.mean(values)) if len(values) else None


def train_step(state: TrainState, batch: PairBatch, cfg: LossConfig):
    """One HSST update; returns ``(state, StepMetrics)``.

    ``state`` is updated in place (new parameter tensors, queues, step
    counter) and also returned.  On a non-finite loss nothing is modified.
    """
    queued = state.queue_nir.identity_set() | state.queue_vis.identity_set()
    clash = queued.intersection(batch.identities.tolist())
    if clash:
        raise InputError(f"batch identities {sorted(clash)[:5]} are still in a prototype queue")

    pair = state.pair
    probe = pair.probe.clone().requires_grad_(True)
    probe_feats = forward(probe, batch.probe_images())
    with torch.no_grad():
        gallery_feats = forward(pair.gallery, batch.gallery_images()).double().numpy()
    x = probe_feats.detach().double().numpy()

    negatives = {NIR: state.queue_vis.features(), VIS: state.queue_nir.features()}
    grad = np.zeros_like(x)
    per_domain = {NIR: [], VIS: []}
    pos_cos = np.einsum("ij,ij->i", x, gallery_feats)
    neg_cos = []
    active = []
    for i in range(len(batch)):
        domain = NIR if batch.nir_probe[i] else VIS
        negs = negatives[domain]
        if len(negs) == 0:
            continue
        try:
            out = losses.pair_loss(x[i], gallery_feats[i], negs, cfg)
        except NumericError as exc:
            exc.details["pair_index"] = i
            exc.details["step"] = state.step
            raise
        if not math.isfinite(out.value):
            raise NumericError("non-finite loss", {"pair_index": i, "step": state.step})
        grad[i] = out.grad_feature
        per_domain[domain].append(out.value)
        neg_cos.append(negs @ x[i])
        active.append(i)

    n_active = len(active)
    lr = state.optimizer.lr(state.step)
    if n_active:
        grad /= n_active
        probe_feats.backward(torch.as_tensor(grad, dtype=probe_feats.dtype))
        grads = {k: v.grad for k, v in probe.tensors.items()}
    else:
        grads = {}
    new_probe = NetworkParams(pair.arch, state.optimizer.apply(probe.tensors, grads, lr))
    if not new_probe.is_finite():
        raise NumericError("probe parameters became non-finite", {"step": state.step})
    state.pair = ema_update(ModelPair(new_probe, pair.gallery, pair.ema_weight))

    for i in range(len(batch)):
        domain = VIS if batch.nir_probe[i] else NIR
        state.queue_for(domain).enqueue(gallery_feats[i], int(batch.identities[i]))

    all_neg = np.concatenate(neg_cos) if neg_cos else np.zeros(0)
    values = per_domain[NIR] + per_domain[VIS]
    metrics = StepMetrics(
        step=state.step,
        loss=_mean_or_none(values),
        loss_nv=_mean_or_none(per_domain[NIR]),
        loss_vn=_mean_or_none(per_domain[VIS]),
        mean_pos_cos=float(pos_cos.mean()),
        mean_neg_cos=float(all_neg.mean()) if all_neg.size else None,
        feature_std=float(x.std(axis=0).mean()),
        lr=lr,
        active_pairs=n_active,
        queue_nir=len(state.queue_nir),
        queue_vis=len(state.queue_vis),
    )
    state.step += 1
    return state, metrics


# ------------------------------------------------------------------ plain training

@dataclass
class PlainState:
    params: NetworkParams
    classifier: torch.Tensor
    class_index: dict
    rng: np.random.Generator
    optimizer: SGDState
    step: int = 0


def init_plain_state(seed: int, cfg: TrainConfig, identities, arch: Arch = None,
                     init: NetworkParams = None, lr: float | None = None,
                     milestones=None) -> PlainState:
    arch = arch or (init.arch if init is not None else Arch())
    params = init.to(torch.float32) if init is not None else init_params(seed, arch)
    ids = sorted(int(i) for i in identities)
    w_rng = np.random.default_rng([int(seed), 0xC1A5])
    w = w_rng.normal(size=(len(ids), arch.embedding_dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return PlainState(
        params=params,
        classifier=torch.as_tensor(w, dtype=torch.float32),
        class_index={i: k for k, i in enumerate(ids)},
        rng=np.random.default_rng([int(seed), 0x55]),
        optimizer=SGDState(cfg.lr if lr is None else lr,
                           cfg.resolved_milestones() if milestones is None else milestones,
                           cfg.momentum, cfg.weight_decay),
    )


def plain_step(state: PlainState, batch: PairBatch, cfg: LossConfig):
    """Single-network update on a mixed NIR+VIS batch.

    Softmax heads classify every image against the trainable class-weight
    matrix (rows L2-normalized, no bias).  The triplet head uses, for every
    image, the other-domain image of its identity as positive and the rest
    of the batch as negatives.
    """
    params = state.params.clone().requires_grad_(True)
    images = np.concatenate([batch.nir_images, batch.vis_images])
    feats_t = forward(params, images)
    x = feats_t.detach().double().numpy()
    n = len(batch)
    ids = np.concatenate([batch.identities, batch.identities])
    gx = np.zeros_like(x)
    values = []

    w_raw = state.classifier.clone().requires_grad_(True)
    if cfg.head == "triplet":
        for i in range(2 * n):
            partner = i + n if i < n else i - n
            neg_rows = np.flatnonzero(ids != ids[i])
            out = losses.triplet_loss(x[i], x[partner], x[neg_rows], cfg.triplet_margin)
            gx[i] += out.grad_feature
            gx[partner] += out.grad_positive
            gx[neg_rows] += out.grad_negatives
            values.append(out.value)
        gx /= 2 * n
        feats_t.backward(torch.as_tensor(gx, dtype=feats_t.dtype))
        w_grad = None
    else:
        w_norm = w_raw / w_raw.norm(dim=1, keepdim=True)
        wn = w_norm.detach().double().numpy()
        gw = np.zeros_like(wn)
        rows = np.arange(len(wn))
        for i in range(2 * n):
            y = state.class_index[int(ids[i])]
            others = rows != y
            out = losses.proto_softmax_loss(x[i], wn[y], wn[others], cfg)
            gx[i] = out.grad_feature
            gw[y] += out.grad_positive
            gw[others] += out.grad_negatives
            values.append(out.value)
        gx /= 2 * n
        gw /= 2 * n
        torch.autograd.backward(
            [feats_t, w_norm],
            [torch.as_tensor(gx, dtype=feats_t.dtype), torch.as_tensor(gw, dtype=w_norm.dtype)],
        )
        w_grad = w_raw.grad

    if not all(math.isfinite(v) for v in values):
        raise NumericError("non-finite loss in plain step", {"step": state.step})
    lr = state.optimizer.lr(state.step)
    grads = {k: v.grad for k, v in params.tensors.items()}
    state.params = NetworkParams(params.arch, state.optimizer.apply(params.tensors, grads, lr))
    if w_grad is not None:
        state.classifier = state.optimizer.apply(
            OrderedDict(classifier=w_raw), {"classifier": w_grad}, lr)["classifier"]

    pos = np.einsum("ij,ij->i", x[:n], x[n:])
    cross = x[:n] @ x[n:].T
    neg = cross[~np.eye(n, dtype=bool)]
    metrics = StepMetrics(
        step=state.step,
        loss=float(np.mean(values)),
        loss_nv=float(np.mean(values[:n])),
        loss_vn=float(np.mean(values[n:])),
        mean_pos_cos=float(pos.mean()),
        mean_neg_cos=float(neg.mean()) if neg.size else None,
        feature_std=float(x.std(axis=0).mean()),
        lr=lr,
        active_pairs=n,
    )
    state.step += 1
    return state, metrics


# ------------------------------------------------------------------ runs

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    checkpoint_path: str | None = None


class _LogWriter:
    def __init__(self, path):
        self.records = []
        self._fh = open(path, "w") if path else None

    def write(self, metrics: StepMetrics):
        rec = metrics.to_log()
        self.records.append(rec)
        if self._fh:
            self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        if self._fh:
            self._fh.flush()
            self._fh.close()


def pretrain(seed: int, cfg: TrainConfig, arch: Arch = None) -> NetworkParams:
    """Classification pretraining on a VIS-only pool of extra identities."""
    arch = arch or Arch()
    pool = pretraining_pool(seed, cfg.pretrain_identities, cfg.pretrain_per_identity, arch.input_size)
    source = PairSource.single_domain(pool)
    steps = cfg.pretrain_steps
    milestones = [int(round(0.6 * steps)), int(round(0.8 * steps))]
    state = init_plain_state(seed, cfg, source.ids, arch, lr=cfg.pretrain_lr, milestones=milestones)
    head = LossConfig(head=cfg.pretrain_head)
    for _ in range(steps):
        batch = sample_plain_batch(source, state.rng, cfg.batch_size)
        state, _ = plain_step(state, batch, head)
    return state.params


def _finish(ckpt: Checkpoint, writer: _LogWriter, out_dir) -> TrainResult:
    path = None
    if out_dir:
        path = str(save_checkpoint(Path(out_dir) / "checkpoint.hsst", ckpt))
    return TrainResult(ckpt, writer.records, path)


def train(seed: int, cfg: TrainConfig, loss_cfg: LossConfig, dataset: Dataset,
          arch: Arch = None, init: NetworkParams = None, out_dir=None) -> TrainResult:
    """Full HSST run on the training identities of ``cfg.fold``."""
    train_ids = dataset.manifest.train_identities(cfg.fold)
    if len(train_ids) < cfg.min_identities():
        raise ConfigError(
            f"fold {cfg.fold} has {len(train_ids)} training identities; HSST with batch_size="
            f"{cfg.batch_size} and queue_capacity={cfg.queue_capacity} needs at least "
            f"{cfg.min_identities()}"
        )
    source = PairSource.heterogeneous(dataset, train_ids, cfg.train_masked)
    state = init_train_state(seed, cfg, arch, init)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    writer = _LogWriter(out / "train_log.jsonl" if out else None)
    try:
        for _ in range(cfg.steps):
            batch = sample_batch(source, state, cfg.batch_size)
            state, metrics = train_step(state, batch, loss_cfg)
            writer.write(metrics)
    finally:
        writer.close()
    ckpt = Checkpoint(
        probe=state.pair.probe,
        gallery=state.pair.gallery,
        ema_weight=state.pair.ema_weight,
        kind="hsst",
        meta={"seed": seed, "steps": cfg.steps, "fold": cfg.fold, "head": loss_cfg.head},
    )
    return _finish(ckpt, writer, out)


def plain_train(seed: int, cfg: TrainConfig, loss_cfg: LossConfig, dataset: Dataset,
                arch: Arch = None, init: NetworkParams = None, out_dir=None) -> TrainResult:
    """Baseline: one network plus a trainable class-weight matrix."""
    train_ids = dataset.manifest.train_identities(cfg.fold)
    source = PairSource.heterogeneous(dataset, train_ids, cfg.train_masked)
    state = init_plain_state(seed, cfg, source.ids, arch, init)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    writer = _LogWriter(out / "train_log.jsonl" if out else None)
    try:
        for _ in range(cfg.steps):
            batch = sample_plain_batch(source, state.rng, cfg.batch_size)
            state, metrics = plain_step(state, batch, loss_cfg)
            writer.write(metrics)
    finally:
        writer.close()
    ckpt = Checkpoint(
        probe=state.params,
        classifier=state.classifier.numpy() if loss_cfg.head != "triplet" else None,
        kind="plain",
        meta={"seed": seed, "steps": cfg.steps, "fold": cfg.fold, "head": loss_cfg.head},
    )
    return _finish(ckpt, writer, out)

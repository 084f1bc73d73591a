"""Prototype-based classification losses, the triplet loss and cosine diagnostics.

Everything here is plain float64 numpy with hand-derived gradients.  Features
and prototypes are expected to be unit vectors so that a dot product is the
cosine of the angle between them.  Gradients are taken with respect to the
vectors as free coordinates in R^d (no projection onto the sphere); the
normalization that makes them unit length lives in the network and is
differentiated there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, NumericError

HEADS = ("softmax", "am_softmax", "arc_softmax", "triplet")

DEFAULT_MARGINS = {"softmax": 0.0, "am_softmax": 0.35, "arc_softmax": 0.5, "triplet": 0.0}

# keeps d/dc cos(arccos(c) + m) finite at c = +-1
_ARC_SIN_FLOOR = 1e-12


@dataclass
class LossConfig:
    head: str = "softmax"
    scale: float = 30.0
    margin: float | None = None
    triplet_margin: float = 0.3

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"loss.head must be one of {HEADS}, got {self.head!r}")
        if self.margin is None:
            self.margin = DEFAULT_MARGINS[self.head]
        self.scale = float(self.scale)
        self.margin = float(self.margin)
        self.triplet_margin = float(self.triplet_margin)
        if not self.scale > 0:
            raise ConfigError(f"loss.scale must be positive, got {self.scale}")
        if self.margin < 0:
            raise ConfigError(f"loss.margin must be >= 0, got {self.margin}")
        if self.head == "arc_softmax" and self.margin >= math.pi / 2:
            raise ConfigError(f"arc_softmax margin must be < pi/2, got {self.margin}")
        if self.triplet_margin < 0:
            raise ConfigError(f"loss.triplet_margin must be >= 0, got {self.triplet_margin}")

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "scale": self.scale,
            "margin": self.margin,
            "triplet_margin": self.triplet_margin,
        }


@dataclass
class LossOutput:
    """Loss value plus gradients.

    ``positive_logit`` and ``max_negative_logit`` are the scaled logits for the
    softmax heads and raw cosines for the triplet head.  ``grad_positive`` and
    ``grad_negatives`` are provided for callers that train the prototypes
    themselves (the plain-training baseline); HSST ignores them.
    """

    value: float
    grad_feature: np.ndarray
    positive_logit: float
    max_negative_logit: float
    grad_positive: np.ndarray | None = None
    grad_negatives: np.ndarray | None = None


@dataclass
class DiagnosticsReport:
    mean_pos_cos: float
    mean_neg_cos: float
    feature_std: float
    per_dim_std: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "mean_pos_cos": self.mean_pos_cos,
            "mean_neg_cos": self.mean_neg_cos,
            "feature_std": self.feature_std,
        }


def _as_matrix(vectors, name: str) -> np.ndarray:
    m = np.asarray(vectors, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[0] == 0:
        raise InputError(f"{name} must be a non-empty list of vectors")
    return m


def cosine_logits(feature, prototypes) -> np.ndarray:
    """Dot product of a unit feature with each unit prototype."""
    x = np.asarray(feature, dtype=np.float64)
    protos = _as_matrix(prototypes, "prototypes")
    if protos.shape[1] != x.shape[-1]:
        raise InputError(f"prototype dim {protos.shape[1]} != feature dim {x.shape[-1]}")
    return protos @ x


def margin_adjust(cos_theta: float, m: float, kind: str) -> float:
    """Margin-penalized positive cosine for the given head."""
    return _margin_and_slope(cos_theta, m, kind)[0]


def _margin_and_slope(cos_theta: float, m: float, kind: str):
    c = min(1.0, max(-1.0, float(cos_theta)))
    if kind in ("softmax", "triplet") or m == 0.0:
        return float(cos_theta), 1.0
    if kind == "am_softmax":
        return float(cos_theta) - m, 1.0
    if kind == "arc_softmax":
        theta = math.acos(c)
        # d/dc cos(theta + m) = sin(theta + m) / sin(theta)
        slope = math.sin(theta + m) / max(math.sin(theta), _ARC_SIN_FLOOR)
        return math.cos(theta + m), slope
    raise ConfigError(f"unknown margin kind {kind!r}")


def proto_softmax_loss(probe_feat, positive_proto, queue_protos, cfg: LossConfig) -> LossOutput:
    """Softmax cross-entropy of one probe feature against one positive
    prototype and a queue of negative prototypes.

    The margin (if any) applies to the positive cosine only.  Prototypes are
    treated as constants for ``grad_feature``; their own gradients are
    returned separately.
    """
    x = np.asarray(probe_feat, dtype=np.float64)
    pos = np.asarray(positive_proto, dtype=np.float64)
    negs = np.asarray(queue_protos, dtype=np.float64)
    if negs.ndim != 2 or negs.shape[0] == 0:
        raise InputError("queue of negative prototypes must be non-empty")
    if pos.shape != x.shape or negs.shape[1] != x.shape[0]:
        raise InputError("feature and prototype dimensions disagree")
    s = cfg.scale
    head = cfg.head if cfg.head != "triplet" else "softmax"

    c_pos = float(pos @ x)
    c_neg = negs @ x
    adjusted, slope = _margin_and_slope(c_pos, cfg.margin, head)
    z_pos = s * adjusted
    z_neg = s * c_neg
    # value = log(1 + sum_j exp(z_j - z_pos)), shifted by the max for stability
    rel = z_neg - z_pos
    top = float(rel.max())
    if top <= 0.0:
        value = math.log1p(float(np.sum(np.exp(rel))))
    else:
        value = top + math.log(math.exp(-top) + float(np.sum(np.exp(rel - top))))
    p_neg = np.exp(rel - value)

    d_pos = s * math.expm1(-value) * slope
    d_neg = s * p_neg
    grad = d_pos * pos + d_neg @ negs
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericError(
            "non-finite softmax loss",
            {"positive_cos": c_pos, "negative_cos": c_neg.tolist(), "scale": s},
        )
    return LossOutput(
        value=max(value, 0.0),
        grad_feature=grad,
        positive_logit=float(z_pos),
        max_negative_logit=float(z_neg.max()),
        grad_positive=d_pos * x,
        grad_negatives=np.outer(d_neg, x),
    )


def triplet_loss(anchor, positive, negatives, margin: float) -> LossOutput:
    """Hinge on cos(a, p) against the hardest (highest-cosine) negative."""
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.ndim != 2 or negs.shape[0] == 0:
        raise InputError("triplet loss needs at least one negative")
    c_pos = float(a @ p)
    c_neg = negs @ a
    hard = int(np.argmax(c_neg))
    value = margin - c_pos + float(c_neg[hard])
    grad_neg = np.zeros_like(negs)
    if value > 0.0:
        grad = negs[hard] - p
        grad_pos = -a
        grad_neg[hard] = a
    else:
        value = 0.0
        grad = np.zeros_like(a)
        grad_pos = np.zeros_like(a)
    return LossOutput(
        value=float(value),
        grad_feature=grad,
        positive_logit=c_pos,
        max_negative_logit=float(c_neg[hard]),
        grad_positive=grad_pos,
        grad_negatives=grad_neg,
    )


def pair_loss(feature, positive, negatives, cfg: LossConfig) -> LossOutput:
    """Dispatch on ``cfg.head``."""
    if cfg.head == "triplet":
        return triplet_loss(feature, positive, negatives, cfg.triplet_margin)
    return proto_softmax_loss(feature, positive, negatives, cfg)


def diagnostics(pos_cosines, neg_cosines, features) -> DiagnosticsReport:
    pos = np.asarray(pos_cosines, dtype=np.float64).ravel()
    neg = np.asarray(neg_cosines, dtype=np.float64).ravel()
    feats = _as_matrix(features, "features")
    if pos.size == 0 or neg.size == 0:
        raise InputError("diagnostics need non-empty positive and negative cosine lists")
    # shifted two-pass variance: an all-identical batch gives exactly zero
    dev = feats - feats[0]
    per_dim = np.sqrt(np.maximum((dev**2).mean(axis=0) - dev.mean(axis=0) ** 2, 0.0))
    return DiagnosticsReport(
        mean_pos_cos=float(pos.mean()),
        mean_neg_cos=float(neg.mean()),
        feature_std=float(per_dim.mean()),
        per_dim_std=per_dim,
    )

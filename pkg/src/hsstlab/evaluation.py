"""Identification and verification metrics with k-fold aggregation.

Similarity is always cosine on unit-norm embeddings.  Only one parameter set
(the probe-net) is ever passed in; the gallery-net never takes part in
evaluation.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NIR, VIS, Dataset
from .errors import InputError
from .model import NetworkParams, embed

DEFAULT_FARS = (0.01, 0.001)


class FARResolutionWarning(UserWarning):
    """Requested FAR is below 1 / (number of impostor scores)."""


def far_key(far: float) -> str:
    return f"vr@far={far:g}"


@dataclass
class EvalReport:
    """Metrics for one fold, or the aggregate of several.

    For an aggregate, ``rank1`` and ``vr_at_far`` hold fold means and
    ``per_fold`` lists the individual reports.
    """

    rank1: float
    vr_at_far: dict
    fold: int | None = None
    per_fold: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        out = {"rank1": self.rank1}
        for far, v in sorted(self.vr_at_far.items(), reverse=True):
            out[far_key(far)] = v
        return out

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "rank1": self.rank1,
            "vr_at_far": {str(k): v for k, v in self.vr_at_far.items()},
            "mean": self.mean,
            "std": self.std,
            "counts": self.counts,
            "per_fold": [r.to_dict() for r in self.per_fold],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            rank1=d["rank1"],
            vr_at_far={float(k): v for k, v in d["vr_at_far"].items()},
            fold=d.get("fold"),
            per_fold=[cls.from_dict(r) for r in d.get("per_fold", [])],
            mean=d.get("mean", {}),
            std=d.get("std", {}),
            counts=d.get("counts", {}),
        )


def extract_embeddings(probe_params: NetworkParams, images) -> np.ndarray:
    return embed(probe_params, images)


def similarity_matrix(probe_feats, gallery_feats) -> np.ndarray:
    p = np.asarray(probe_feats, dtype=np.float64)
    g = np.asarray(gallery_feats, dtype=np.float64)
    if p.ndim != 2 or g.ndim != 2 or len(p) == 0 or len(g) == 0:
        raise InputError("probe and gallery feature sets must be non-empty 2D arrays")
    if p.shape[1] != g.shape[1]:
        raise InputError(f"feature dims differ: {p.shape[1]} vs {g.shape[1]}")
    return p @ g.T


def rank1_from_scores(scores, probe_ids, gallery_ids) -> float:
    """Ties go to the lowest gallery index (``np.argmax`` semantics)."""
    scores = np.asarray(scores)
    best = np.argmax(scores, axis=1)
    return float(np.mean(np.asarray(gallery_ids)[best] == np.asarray(probe_ids)))


def rank1(probe_feats, probe_ids, gallery_feats, gallery_ids) -> float:
    return rank1_from_scores(similarity_matrix(probe_feats, gallery_feats), probe_ids, gallery_ids)


def vr_at_far(genuine, impostor, far: float) -> float:
    """Verification rate at the smallest impostor-score threshold ``t`` with
    #{impostor > t} <= far * N_imp; a genuine pair is accepted when its score > t.
    """
    gen = np.sort(np.asarray(genuine, dtype=np.float64).ravel())
    imp = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    if gen.size == 0 or imp.size == 0:
        raise InputError("genuine and impostor score lists must be non-empty")
    if not 0.0 < far <= 1.0:
        raise InputError(f"far must lie in (0, 1], got {far}")
    n_imp = imp.size
    allowed = far * n_imp
    if allowed < 1.0:
        warnings.warn(
            f"FAR {far:g} is finer than 1/{n_imp} impostor scores; using the zero-accept threshold",
            FARResolutionWarning,
            stacklevel=2,
        )
    # candidates ascending; count strictly above each is non-increasing
    above = n_imp - np.searchsorted(imp, imp, side="right")
    t = imp[np.argmax(above <= allowed)]
    accepted = gen.size - np.searchsorted(gen, t, side="right")
    return float(accepted / gen.size)


def verification_scores(scores, probe_ids, gallery_ids):
    """Split a probe x gallery score matrix into genuine and impostor lists."""
    same = np.asarray(probe_ids)[:, None] == np.asarray(gallery_ids)[None, :]
    return scores[same], scores[~same]


def collapse_gallery(scores, gallery_ids):
    """One column per gallery identity holding the max similarity over its images.

    Identities keep the order of their first image, so the lowest-index tie
    rule carries over.
    """
    scores = np.asarray(scores)
    gallery_ids = np.asarray(gallery_ids)
    uniq, first = np.unique(gallery_ids, return_index=True)
    uniq = uniq[np.argsort(first)]
    if len(uniq) == len(gallery_ids):
        return scores, gallery_ids
    cols = np.stack([scores[:, gallery_ids == g].max(axis=1) for g in uniq], axis=1)
    return cols, uniq


def evaluate_features(probe_feats, probe_ids, gallery_feats, gallery_ids,
                      fars=DEFAULT_FARS, fold=None) -> EvalReport:
    """Rank-1 and VR@FAR; a multi-image gallery identity scores by its best image."""
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    missing = set(probe_ids.tolist()) - set(gallery_ids.tolist())
    if missing:
        raise InputError(f"{len(missing)} probe identities have no gallery image")
    n_gallery = len(gallery_ids)
    scores, gallery_ids = collapse_gallery(similarity_matrix(probe_feats, gallery_feats), gallery_ids)
    genuine, impostor = verification_scores(scores, probe_ids, gallery_ids)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FARResolutionWarning)
        vr = {float(f): vr_at_far(genuine, impostor, f) for f in fars}
    return EvalReport(
        rank1=rank1_from_scores(scores, probe_ids, gallery_ids),
        vr_at_far=vr,
        fold=fold,
        counts={"probes": int(len(probe_ids)), "gallery": n_gallery,
                "genuine": int(genuine.size), "impostor": int(impostor.size)},
    )


def fold_protocol(dataset: Dataset, test_ids, probe_masked: bool, gallery_per_identity: int = 1):
    """Probe = all NIR samples (masked or not) of the test ids; gallery = the first
    ``gallery_per_identity`` VIS samples of each test id."""
    probes = dataset.select(test_ids, NIR, probe_masked)
    vis = dataset.select(test_ids, VIS)
    gallery = vis[dataset.index[vis] < gallery_per_identity]
    return probes, gallery


def evaluate_fold(params: NetworkParams, dataset: Dataset, fold: int, probe_masked: bool,
                  fars=DEFAULT_FARS, gallery_per_identity: int = 1) -> EvalReport:
    test_ids = dataset.manifest.test_identities(fold)
    probes, gallery = fold_protocol(dataset, test_ids, probe_masked, gallery_per_identity)
    pf = extract_embeddings(params, dataset.images[probes])
    gf = extract_embeddings(params, dataset.images[gallery])
    return evaluate_features(pf, dataset.identity[probes], gf, dataset.identity[gallery],
                             fars=fars, fold=fold)


def kfold_report(reports) -> EvalReport:
    """Mean and population standard deviation of every metric across folds."""
    reports = list(reports)
    if not reports:
        raise InputError("kfold_report needs at least one fold")
    # canonical order so the aggregate does not depend on how folds were listed
    reports = sorted(reports, key=lambda r: (r.fold is None, r.fold or 0, tuple(r.metrics().values())))
    names = list(reports[0].metrics())
    table = np.array([[r.metrics()[n] for n in names] for r in reports], dtype=np.float64)
    mean = dict(zip(names, (float(v) for v in table.mean(axis=0))))
    std = dict(zip(names, (float(v) for v in table.std(axis=0))))
    fars = sorted(reports[0].vr_at_far)
    return EvalReport(
        rank1=mean["rank1"],
        vr_at_far={f: mean[far_key(f)] for f in fars},
        per_fold=reports,
        mean=mean,
        std=std,
    )


# ---------------------------------------------------------------- report output

def write_report(report: EvalReport, out_dir, stem: str = "eval") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2))
    csv_path = out / f"{stem}.csv"
    folds = report.per_fold or [report]
    names = list(folds[0].metrics())
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold"] + names)
        for r in folds:
            w.writerow([r.fold] + [f"{r.metrics()[n]:.6f}" for n in names])
        if report.per_fold:
            w.writerow(["mean"] + [f"{report.mean[n]:.6f}" for n in names])
            w.writerow(["std"] + [f"{report.std[n]:.6f}" for n in names])
    return {"json": str(json_path), "csv": str(csv_path)}


def format_table(report: EvalReport) -> str:
    folds = report.per_fold or [report]
    names = list(folds[0].metrics())
    header = f"{'fold':>6} " + " ".join(f"{n:>14}" for n in names)
    lines = [header]
    for r in folds:
        lines.append(f"{str(r.fold):>6} " + " ".join(f"{100 * r.metrics()[n]:>14.2f}" for n in names))
    if report.per_fold:
        lines.append(f"{'mean':>6} " + " ".join(f"{100 * report.mean[n]:>14.2f}" for n in names))
        lines.append(f"{'std':>6} " + " ".join(f"{100 * report.std[n]:>14.2f}" for n in names))
    return "\n".join(lines)


def plot_training_log(records, out_dir, stem: str = "train") -> list:
    """Loss and cosine-statistics curves from per-step log records."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in records]
    paths = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in ("loss", "loss_nv", "loss_vn"):
        ys = [r.get(key) for r in records]
        if any(y is not None for y in ys):
            ax.plot(steps, [np.nan if y is None else y for y in ys], label=key, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    p = out / f"{stem}_loss.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(str(p))

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for key in ("mean_pos_cos", "mean_neg_cos"):
        ys = [r.get(key) for r in records]
        ax.plot(steps, [np.nan if y is None else y for y in ys], label=key, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("cosine")
    ax.legend()
    fig.tight_layout()
    p = out / f"{stem}_cosine.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(str(p))
    return paths

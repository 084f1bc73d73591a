"""Table I style comparison of plain training and HSST on the synthetic corpus.

For one seed: build the corpus (data seed = run seed), pretrain a network on
the VIS-only pool, then fine-tune it with each method on non-masked and on
masked NIR training pairs.  Each fine-tuned probe-net is evaluated on the
test identities of ``train.fold`` with masked and non-masked NIR probes.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import Dataset
from .evaluation import evaluate_fold, far_key
from .training import plain_train, pretrain, train

log = logging.getLogger(__name__)

METHODS = ("plain", "hsst")
# (train masked, test masked); the first three are the reference rows
COMBOS = ((False, False), (False, True), (True, True), (True, False))


def _label(masked: bool) -> str:
    return "masked" if masked else "non-masked"


@dataclass
class TableCell:
    method: str
    train_masked: bool
    test_masked: bool
    rank1: float
    vr_at_far: dict
    final_pos_cos: float | None = None
    first_pos_cos: float | None = None
    final_neg_cos: float | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["vr_at_far"] = {str(k): v for k, v in self.vr_at_far.items()}
        return d


@dataclass
class TableOne:
    seed: int
    cells: list

    def get(self, method: str, train_masked: bool, test_masked: bool) -> TableCell:
        for c in self.cells:
            if (c.method, c.train_masked, c.test_masked) == (method, train_masked, test_masked):
                return c
        raise KeyError((method, train_masked, test_masked))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "cells": [c.to_dict() for c in self.cells]}

    def format(self) -> str:
        fars = sorted(self.cells[0].vr_at_far, reverse=True) if self.cells else []
        cols = ["train", "test", "rank-1"] + [far_key(f) for f in fars]
        lines = [f"seed {self.seed}"]
        for method in METHODS:
            rows = [c for c in self.cells if c.method == method]
            if not rows:
                continue
            lines.append(f"[{'Plain training' if method == 'plain' else 'HSST'}]")
            lines.append("  ".join(f"{c:>12}" for c in cols))
            for c in rows:
                vals = [_label(c.train_masked), _label(c.test_masked), f"{100 * c.rank1:.2f}"]
                vals += [f"{100 * c.vr_at_far[f]:.2f}" for f in fars]
                lines.append("  ".join(f"{v:>12}" for v in vals))
        return "\n".join(lines)


def run_table_one(cfg: RunConfig, seed: int | None = None, methods=METHODS, combos=COMBOS,
                  out_dir=None, dataset: Dataset | None = None, init=None) -> TableOne:
    """Train once per (method, train condition) and evaluate every requested test condition.

    ``init`` skips pretraining and starts every run from the given parameters.
    """
    seed = cfg.seed if seed is None else int(seed)
    if dataset is None:
        dataset = Dataset.generate(dataclasses.replace(cfg.data, seed=seed))
    tcfg = cfg.train
    if init is None and tcfg.pretrain_steps > 0:
        t0 = time.time()
        init = pretrain(seed, tcfg, cfg.arch)
        log.info("seed %d: pretraining done in %.0fs", seed, time.time() - t0)

    cells = []
    for method in methods:
        for train_masked in sorted({tm for tm, _ in combos}):
            run_cfg = dataclasses.replace(tcfg, train_masked=train_masked, mode=method)
            fn = train if method == "hsst" else plain_train
            t0 = time.time()
            res = fn(seed, run_cfg, cfg.loss, dataset, cfg.arch, init=init)
            log.info("seed %d: %s on %s data in %.0fs", seed, method, _label(train_masked), time.time() - t0)
            pos = [r["mean_pos_cos"] for r in res.log]
            negs = [r["mean_neg_cos"] for r in res.log if r["mean_neg_cos"] is not None]
            for tm, test_masked in combos:
                if tm != train_masked:
                    continue
                rep = evaluate_fold(res.checkpoint.probe, dataset, tcfg.fold, test_masked,
                                    fars=cfg.eval.fars, gallery_per_identity=cfg.eval.gallery_per_identity)
                cells.append(TableCell(
                    method=method, train_masked=train_masked, test_masked=test_masked,
                    rank1=rep.rank1, vr_at_far=rep.vr_at_far,
                    first_pos_cos=pos[0] if pos else None,
                    final_pos_cos=pos[-1] if pos else None,
                    final_neg_cos=negs[-1] if negs else None,
                ))
    order = {c: i for i, c in enumerate(combos)}
    cells.sort(key=lambda c: (METHODS.index(c.method), order[(c.train_masked, c.test_masked)]))
    table = TableOne(seed, cells)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"table1_seed{seed}.json").write_text(json.dumps(table.to_dict(), indent=2))
        (out / f"table1_seed{seed}.txt").write_text(table.format() + "\n")
    return table


def mean_over_seeds(tables, method: str, train_masked: bool, test_masked: bool, metric: str = "rank1"):
    vals = []
    for t in tables:
        c = t.get(method, train_masked, test_masked)
        vals.append(c.rank1 if metric == "rank1" else c.vr_at_far[float(metric)])
    return float(np.mean(vals))

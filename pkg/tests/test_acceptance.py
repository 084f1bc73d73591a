"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into the "acceptance criteria" section of the
pytest terminal summary (see conftest.py).
"""

import math
import time
import warnings

import mpmath
import numpy as np
import pytest

from hsstlab import masksynth as ms
from hsstlab.config import RunConfig
from hsstlab.data import NIR, DataConfig, Dataset
from hsstlab.evaluation import FARResolutionWarning, rank1_from_scores, vr_at_far
from hsstlab.experiments import run_table_one
from hsstlab.losses import LossConfig, proto_softmax_loss, triplet_loss
from hsstlab.model import Arch, ModelPair, ema_update, init_params, l2_normalize
from hsstlab.training import (
    PairSource,
    PrototypeQueue,
    TrainConfig,
    init_train_state,
    pretrain,
    sample_batch,
    train,
)

SEEDS = (7, 8, 9)


def unit(v):
    return v / np.linalg.norm(v)


def random_instance(rng, d, max_neg=16):
    x = unit(rng.normal(size=d))
    pos = unit(rng.normal(size=d) + 1.5 * x)
    negs = np.stack([unit(rng.normal(size=d)) for _ in range(int(rng.integers(1, max_neg + 1)))])
    return x, pos, negs


def central_difference(f, x, eps=1e-4):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = eps
        g[k] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_gradient_suite(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    for head in ("softmax", "am_softmax", "arc_softmax", "triplet"):
        cfg = LossConfig(head=head)
        checked, errs = 0, []
        while checked < 100:
            x, pos, negs = random_instance(rng, 8)
            if head == "triplet":
                out = triplet_loss(x, pos, negs, cfg.triplet_margin)
                c = np.sort(negs @ x)
                # hinge active and hardest negative unambiguous
                if out.value < 1e-3 or (len(c) > 1 and c[-1] - c[-2] < 1e-3):
                    continue
                f = lambda v: triplet_loss(v, pos, negs, cfg.triplet_margin).value
            else:
                out = proto_softmax_loss(x, pos, negs, cfg)
                f = lambda v: proto_softmax_loss(v, pos, negs, cfg).value
            errs.append(rel_err(out.grad_feature, central_difference(f, x)))
            checked += 1
        worst[head] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(e <= 1e-4 for e in worst.values()) and elapsed < 10
    detail = ", ".join(f"{h} max rel err {e:.1e}" for h, e in worst.items())
    acceptance(1, "gradient suite", ok, f"400 instances, d=8; {detail}; {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------------

def _mp_loss(x, pos, negs, cfg):
    mpmath.mp.dps = 50
    dot = lambda a, b: mpmath.fsum(mpmath.mpf(float(p)) * mpmath.mpf(float(q)) for p, q in zip(a, b))
    s, m = mpmath.mpf(cfg.scale), mpmath.mpf(cfg.margin)
    c = dot(x, pos)
    if cfg.head == "am_softmax":
        c -= m
    elif cfg.head == "arc_softmax":
        c = mpmath.cos(mpmath.acos(max(mpmath.mpf(-1), min(mpmath.mpf(1), c))) + m)
    num = mpmath.exp(s * c)
    return -mpmath.log(num / (num + mpmath.fsum(mpmath.exp(s * dot(x, n)) for n in negs)))


def test_criterion_2_loss_oracle(acceptance):
    rng = np.random.default_rng(2)
    heads = ("softmax", "am_softmax", "arc_softmax")
    worst = 0.0
    for k in range(1000):
        cfg = LossConfig(head=heads[k % 3])
        x, pos, negs = random_instance(rng, int(rng.integers(2, 9)))
        ref = float(_mp_loss(x, pos, negs, cfg))
        got = proto_softmax_loss(x, pos, negs, cfg).value
        worst = max(worst, abs(got - ref) / abs(ref))
    reduces = True
    for _ in range(200):
        x, pos, negs = random_instance(rng, 8)
        base = proto_softmax_loss(x, pos, negs, LossConfig(head="softmax"))
        for head in ("am_softmax", "arc_softmax"):
            o = proto_softmax_loss(x, pos, negs, LossConfig(head=head, margin=0.0))
            reduces &= o.value == base.value and np.array_equal(o.grad_feature, base.grad_feature)
    acceptance(2, "loss oracle", worst <= 1e-10 and reduces,
               f"1000 instances vs 50-digit evaluation, max rel err {worst:.1e}; m=0 reduction exact: {reduces}")


# -- 3 ------------------------------------------------------------------------------

def test_criterion_3_mechanics(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checks = {}

    q = PrototypeQueue(NIR, capacity=7, dim=8)
    fifo = True
    for k in range(30):
        q.enqueue(unit(rng.normal(size=8)), k)
        fifo &= q.identities() == list(range(max(0, k - 6), k + 1))
    checks["fifo/capacity"] = fifo

    cfg = TrainConfig(queue_capacity=64, batch_size=64)
    state = init_train_state(7, cfg, Arch(input_size=16, channels=(4, 8), embedding_dim=16))
    ids = np.arange(200)
    images = rng.uniform(size=(400, 2, 2, 3))
    source = PairSource(images, ids, {i: [2 * i] for i in ids}, {i: [2 * i + 1] for i in ids})
    disjoint = True
    for step in range(50):
        batch = sample_batch(source, state, 64)
        queued = state.queue_nir.identity_set() | state.queue_vis.identity_set()
        disjoint &= not queued & set(batch.identities.tolist())
        for i, nir_probe in zip(batch.identities, batch.nir_probe):
            (state.queue_vis if nir_probe else state.queue_nir).enqueue(unit(rng.normal(size=16)), int(i))
    checks["disjointness"] = disjoint

    role_state = init_train_state(7, TrainConfig(queue_capacity=0, batch_size=100), Arch())
    bits = np.concatenate([sample_batch(source, role_state, 100).nir_probe for _ in range(100)])
    frac = float(bits.mean())
    checks[f"role bits {frac:.4f}"] = 0.47 <= frac <= 0.53

    small = Arch(input_size=16, channels=(4, 8), embedding_dim=16)
    pair = ModelPair(init_params(1, small), init_params(2, small), 0.999)
    new = ema_update(pair)
    ema_err = max(float((new.gallery.tensors[k].double()
                         - (0.999 * pair.gallery.tensors[k].double() + 0.001 * pair.probe.tensors[k].double())
                         ).abs().max()) for k in pair.probe.tensors)
    checks[f"EMA err {ema_err:.1e}"] = ema_err <= 1e-7

    data = Dataset.generate(DataConfig(identities=60, vis_per_identity=2, nir_per_identity=2, image_size=16))
    tcfg = TrainConfig(steps=40, batch_size=8, queue_capacity=16)
    a = train(11, tcfg, LossConfig(), data, small)
    b = train(11, tcfg, LossConfig(), data, small)
    checks["determinism"] = [r["loss"] for r in a.log] == [r["loss"] for r in b.log] and \
        a.checkpoint.probe.equal(b.checkpoint.probe)

    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 30
    detail = ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items())
    acceptance(3, "mechanics suite", ok, f"{detail}; {elapsed:.1f}s")


# -- 4 ------------------------------------------------------------------------------

def test_criterion_4_mask_synthesis(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    local = idem = True
    for _ in range(200):
        h, w = rng.integers(2, 40, size=2)
        tex = rng.uniform(size=(h, w, 3))
        region = rng.uniform(size=(h, w)) < rng.uniform()
        tpl = ms.MaskTemplate(rng.uniform(size=3) * region[..., None], region)
        out = ms.composite(tex, tpl)
        local &= np.array_equal(out[~region], tex[~region])
        idem &= np.array_equal(ms.composite(out, tpl), out)
    round_trip = True
    for size in ((48, 48), (13, 29)):
        tex = rng.uniform(size=size + (3,))
        img = ms.render(tex, ms.identity_position_map(*size), np.ones(size, bool), size)
        round_trip &= np.array_equal(img, tex)
    tex = np.array([[[0.1] * 3, [0.8] * 3, [0.4] * 3]])
    pos = np.array([[[1.0, 1.0, 0.5], [1.3, 0.8, 0.5], [1.0, 1.0, 0.2]]])
    tie = ms.render(tex, pos, np.ones((1, 3), bool), (2, 2))[1, 1, 0] == 0.1
    pos[0, 2, 2] = 0.9
    nearer = ms.render(tex, pos, np.ones((1, 3), bool), (2, 2))[1, 1, 0] == 0.4
    elapsed = time.perf_counter() - t0
    ok = local and idem and round_trip and tie and nearer and elapsed < 10
    acceptance(4, "mask synthesis", ok,
               f"locality {local}, idempotence {idem}, identity round trip {round_trip}, "
               f"z tie keeps first texel {tie}, nearer z wins {nearer}; {elapsed:.1f}s")


# -- 5 ------------------------------------------------------------------------------

def _sweep(gen, imp, far):
    best = min(t for t in imp if sum(s > t for s in imp) / len(imp) <= far)
    return sum(g > best for g in gen) / len(gen)


def _brute_rank1(table, pid, gid):
    hits = 0
    for i, row in enumerate(table):
        j = max(range(len(row)), key=lambda k: (row[k], -k))
        hits += gid[j] == pid[i]
    return hits / len(table)


def test_criterion_5_metric_oracle(acceptance):
    rng = np.random.default_rng(5)
    exact = monotone = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FARResolutionWarning)
        for _ in range(200):
            gen = np.round(rng.normal(0.5, 0.25, int(rng.integers(1, 101))), 2)
            imp = np.round(rng.normal(0.2, 0.25, int(rng.integers(1, 101))), 2)
            far = float(rng.uniform(0.001, 1.0))
            exact &= vr_at_far(gen, imp, far) == _sweep(gen.tolist(), imp.tolist(), far)
            fars = np.sort(rng.uniform(0.001, 1.0, 6))
            vals = [vr_at_far(gen, imp, f) for f in fars]
            monotone &= all(a <= b for a, b in zip(vals, vals[1:]))
    hand = np.array([[0.9, 0.2, 0.1], [0.3, 0.8, 0.4], [0.7, 0.1, 0.5]])
    rank_ok = rank1_from_scores(hand, [0, 1, 2], [0, 1, 2]) == 2 / 3
    for _ in range(200):
        table = np.round(rng.uniform(-1, 1, tuple(rng.integers(1, 8, 2))), 1)
        gid = rng.integers(0, 4, table.shape[1]).tolist()
        pid = rng.choice(gid, table.shape[0]).tolist()
        rank_ok &= rank1_from_scores(table, pid, gid) == _brute_rank1(table, pid, gid)
    acceptance(5, "metric oracle", exact and monotone and rank_ok,
               f"vr_at_far == threshold sweep on 200 sets: {exact}; monotone in FAR: {monotone}; "
               f"rank1 == brute force: {rank_ok}")


# -- 6 and 7 ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def table_one_runs():
    """Per seed: pretrain once, then plain (non-masked and masked) and HSST (masked)."""
    cfg = RunConfig()  # 200 identities, 2000 steps, softmax head
    t0 = time.perf_counter()
    tables = []
    for seed in SEEDS:
        cfg.seed = seed
        data = Dataset.generate(DataConfig(identities=200, seed=seed))
        init = pretrain(seed, cfg.train, cfg.arch)
        plain = run_table_one(cfg, seed, methods=("plain",), dataset=data, init=init,
                              combos=((False, False), (False, True), (True, True)))
        hsst = run_table_one(cfg, seed, methods=("hsst",), combos=((True, True),), dataset=data, init=init)
        plain.cells += hsst.cells
        tables.append(plain)
    return tables, time.perf_counter() - t0


def _mean(tables, method, tm, pm, metric):
    cells = [t.get(method, tm, pm) for t in tables]
    return float(np.mean([c.rank1 if metric == "rank1" else c.vr_at_far[0.01] for c in cells]))


def test_criterion_6_directional_table_one(acceptance, table_one_runs):
    tables, elapsed = table_one_runs
    parts, ok = [], elapsed < 15 * 60
    for metric in ("rank1", "vr@1%"):
        nm = _mean(tables, "plain", False, False, metric)
        m = _mean(tables, "plain", False, True, metric)
        pm = _mean(tables, "plain", True, True, metric)
        hm = _mean(tables, "hsst", True, True, metric)
        a, b = nm - m >= 0.10, hm - pm >= 0.05
        ok &= a and b
        parts.append(f"{metric}: plain non-masked {nm:.3f} vs masked {m:.3f} (gap {nm - m:+.3f}, {'ok' if a else 'BAD'}); "
                     f"masked HSST {hm:.3f} vs plain {pm:.3f} (gain {hm - pm:+.3f}, {'ok' if b else 'BAD'})")
    acceptance(6, "directional Table I", ok,
               f"seeds {SEEDS}, mean over seeds; " + "; ".join(parts) + f"; {elapsed / 60:.1f} min")


def test_criterion_7_diagnostics_trend(acceptance, table_one_runs):
    tables, _ = table_one_runs
    ok, parts = True, []
    for t in tables:
        c = t.get("hsst", True, True)
        good = c.final_pos_cos > c.first_pos_cos and c.final_pos_cos > c.final_neg_cos
        ok &= good
        parts.append(f"seed {t.seed}: pos {c.first_pos_cos:.3f}->{c.final_pos_cos:.3f}, neg {c.final_neg_cos:.3f}")
    acceptance(7, "diagnostics trend", ok, "; ".join(parts))

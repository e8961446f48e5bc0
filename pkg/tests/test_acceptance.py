"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary under "acceptance criteria".
"""
import math
import time

import numpy as np
import pytest

import oracles
from msvol.confidence import likelihood
from msvol.imagio import DisparityMap, GrayImage, read_kitti_png, read_pfm, write_kitti_png, write_pfm
from msvol.matchers import CostVolume, MatcherConfig, box_sum, cost_census, cost_ncc, cost_sobel, cost_zsad
from msvol.metrics import bad_x, noc_mask_from_gt, random_dot_pair
from msvol.regress import (combined_cost, loss_smooth_l1, smooth_l1, soft_argmin,
                           soft_argmin_backward, total_loss, wta)
from msvol.toynet import (ToyNetConfig, conv3d_backward, conv3d_forward, evaluate_loss,
                          init_params, load_checkpoint, save_checkpoint, train_step,
                          transposed_conv3d_backward, transposed_conv3d_forward)
from msvol.volume import MatchingVolume, build_matching_volume, read_msv, write_msv
from test_toynet import full_gradient_check

CFG = MatcherConfig()
N_INSTANCES = 50


def _curve(c):
    c = np.asarray(c, dtype=float).reshape(-1, 1, 1)
    return CostVolume(c, np.ones_like(c, dtype=bool))


# 1 ------------------------------------------------------------------------

def _matcher_cases():
    return [
        ("ncc", cost_ncc, lambda L, R, D: oracles.ncc(L, R, D, CFG.ncc_radius), False),
        ("zsad", cost_zsad, lambda L, R, D: oracles.zsad(L, R, D, CFG.zsad_radius), False),
        ("census", cost_census, lambda L, R, D: oracles.census(L, R, D, CFG.census_radius), True),
        ("sobel", cost_sobel, lambda L, R, D: oracles.sobel(L, R, D, CFG.sobel_radius), False),
    ]


def test_c1_oracle_equivalence(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = {}

    def note(key, err):
        worst[key] = max(worst.get(key, 0.0), err)

    for _ in range(N_INSTANCES):
        H, W = (int(v) for v in rng.integers(4, 13, 2))
        D = int(rng.integers(1, 9))
        L, R = rng.uniform(0, 255, (H, W)), rng.uniform(0, 255, (H, W))
        for name, fn, oracle, exact in _matcher_cases():
            ref, ref_valid = oracle(L, R, D)
            for be in ("numba", "numpy"):
                cv = fn(L, R, D, CFG, backend=be)
                assert np.array_equal(cv.valid, ref_valid)
                err = float(np.abs(cv.cost - ref).max())
                note(f"{name}/{be}", err if not exact else float(err > 0))

        r = int(rng.integers(0, 4))
        P = rng.uniform(0, 255, (int(rng.integers(1, 33)), int(rng.integers(1, 33))))
        note("box_sum", float(np.abs(box_sum(P, r) - oracles.box_sum(P, r)).max()))

        ci, co, stride = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        shape = tuple(int(v) for v in rng.integers(2, 6, 3))
        x = rng.normal(size=(ci,) + shape)
        w = rng.normal(size=(co, ci, 3, 3, 3))
        b = rng.normal(size=co)
        y = conv3d_forward(x, w, b, stride)
        note("conv3d_forward", float(np.abs(y - oracles.conv3d(x, w, b, stride)).max()))
        g = rng.normal(size=y.shape)
        gx, gw, gb = conv3d_backward(x, w, g, stride)
        f = lambda: float((conv3d_forward(x, w, b, stride) * g).sum())
        for a, p in ((gx, x), (gw, w), (gb, b)):
            note("conv3d_backward", float(np.abs(a - oracles.numeric_grad(f, p)).max()))

        small = tuple(-(-n // 2) for n in shape)
        xt = rng.normal(size=(ci,) + small)
        wt = rng.normal(size=(ci, co, 3, 3, 3))
        yt = transposed_conv3d_forward(xt, wt, b, 2, shape)
        note("tconv3d_forward", float(np.abs(yt - oracles.transposed_conv3d(xt, wt, b, 2, shape)).max()))
        gt_ = rng.normal(size=yt.shape)
        gx, gw, gb = transposed_conv3d_backward(xt, wt, gt_, 2)
        f = lambda: float((transposed_conv3d_forward(xt, wt, b, 2, shape) * gt_).sum())
        for a, p in ((gx, xt), (gw, wt), (gb, b)):
            note("tconv3d_backward", float(np.abs(a - oracles.numeric_grad(f, p)).max()))

        gmap = DisparityMap(rng.uniform(0, 8, (H, W)), rng.random((H, W)) > 0.2)
        pmap = DisparityMap(np.round(rng.uniform(0, 8, (H, W)) * 4) / 4, rng.random((H, W)) > 0.1)
        if (gmap.valid & pmap.valid).any():
            thr = float(rng.choice([1.0, 2.0, 3.0]))
            res = bad_x(pmap, gmap, thr)
            bad, n, tot = oracles.bad_count(pmap.disp, gmap.disp, pmap.valid, gmap.valid, thr)
            note("bad_x_counts", float(res.n_evaluated != n or res.bad_rate != 100.0 * bad / n))
            note("bad_x_avg", abs(res.avg_err - tot / n))

    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-5 for k, v in worst.items()) and all(
        worst[k] == 0 for k in worst if k.startswith("census") or k == "bad_x_counts")
    ok = ok and elapsed < 120
    summary = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
    record("C1 oracle equivalence", ok, f"{elapsed:.1f}s; {summary}")
    assert ok, worst


# 2 ------------------------------------------------------------------------

def test_c2_likelihood_suite(record):
    rng = np.random.default_rng(202)
    c = rng.uniform(0, 300, (24, 20, 20))
    v = rng.random(c.shape) > 0.2
    v[0] = True
    norm_err = 0.0
    for be in ("numba", "numpy"):
        lik = likelihood(CostVolume(c, v), 50.0, backend=be)
        norm_err = max(norm_err, float(np.abs(lik.cost.sum(axis=0) - 1).max()))

    # dyadic costs and integer shifts: the C - Cmin gaps are exact in binary
    # floating point, so the identity must hold bitwise
    cd = rng.integers(0, 4000, (16, 10, 10)) / 8.0
    base = likelihood(CostVolume(cd, np.ones_like(cd, bool)), 8.0).cost
    shift_exact = all(
        np.array_equal(likelihood(CostVolume(cd + k, np.ones_like(cd, bool)), 8.0).cost, base)
        for k in (1.0, 17.0, -3.0, 1024.0))

    curves = rng.uniform(0, 100, (10_000, 12))
    vol = CostVolume(curves.T.reshape(12, 100, 100).copy(), np.ones((12, 100, 100), bool))
    lik = likelihood(vol, 10.0).cost
    arg_ok = bool(np.array_equal(lik.argmax(axis=0), vol.cost.argmin(axis=0)))

    ref = likelihood(_curve([0, 1, 2]), 1.0).cost.ravel()
    ref_ok = bool(np.allclose(ref, [0.5741, 0.3482, 0.0777], atol=1e-4))

    ok = norm_err <= 1e-5 and shift_exact and arg_ok and ref_ok
    record("C2 likelihood suite", ok,
           f"norm_err={norm_err:.1e} shift_exact={shift_exact} argmax==argmin={arg_ok} "
           f"ref={np.round(ref, 4).tolist()}")
    assert ok


# 3 ------------------------------------------------------------------------

def test_c3_soft_argmin_suite(record):
    rng = np.random.default_rng(303)
    cd = rng.integers(-200, 200, (10, 12, 12)) / 16.0
    base = soft_argmin(CostVolume(cd, np.ones_like(cd, bool)), 1.0).disp
    shift_exact = all(np.array_equal(
        soft_argmin(CostVolume(cd + k, np.ones_like(cd, bool)), 1.0).disp, base) for k in (2.0, -5.0, 64.0))
    cf = rng.normal(size=(10, 12, 12))
    shift_err = float(np.abs(soft_argmin(CostVolume(cf + 3.3, np.ones_like(cf, bool))).disp
                             - soft_argmin(CostVolume(cf, np.ones_like(cf, bool))).disp).max())

    uniform_ok = all(soft_argmin(_curve([0.7] * D)).disp[0, 0] == (D - 1) / 2 for D in range(1, 20))
    sym_ok = True
    for D in range(1, 20):
        half = rng.normal(size=(D + 1) // 2)
        curve = np.concatenate([half, half[: D // 2][::-1]])
        sym_ok &= soft_argmin(_curve(curve), 2.0).disp[0, 0] == (D - 1) / 2

    worst = 0.0
    h = 1e-6
    for _ in range(100):
        D = int(rng.integers(2, 12))
        c = rng.normal(size=(D, 1, 1)) * 2
        vol = CostVolume(c, np.ones_like(c, bool))
        g = soft_argmin_backward(vol, 1.0, np.ones((1, 1))).ravel()
        fd = np.empty(D)
        for k in range(D):
            cp, cm = c.copy(), c.copy()
            cp[k] += h
            cm[k] -= h
            fd[k] = (soft_argmin(CostVolume(cp, vol.valid)).disp[0, 0]
                     - soft_argmin(CostVolume(cm, vol.valid)).disp[0, 0]) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))

    ok = shift_exact and shift_err < 1e-12 and uniform_ok and bool(sym_ok) and worst < 1e-5
    record("C3 soft-argmin suite", ok,
           f"shift_exact={shift_exact} shift_err={shift_err:.1e} uniform={uniform_ok} "
           f"symmetric={bool(sym_ok)} grad_rel={worst:.1e}")
    assert ok


# 4 ------------------------------------------------------------------------

def test_c4_loss_suite(record):
    one = lambda x: loss_smooth_l1(DisparityMap(np.array([[x]]), np.ones((1, 1), bool)),
                                   DisparityMap(np.zeros((1, 1)), np.ones((1, 1), bool)))
    branch = [one(0.5), one(1.0), one(2.0)]
    branch_ok = branch == [0.125, 0.5, 1.5]
    e = 1e-6
    left, mid, right = smooth_l1(np.array([1 - e, 1.0, 1 + e]))
    cont_ok = abs(right - left) < 3 * e and abs((mid - left) / e - (right - mid) / e) < 1e-4
    tot = total_loss((1.0, 1.0, 1.0))
    ok = branch_ok and cont_ok and tot == 2.2
    record("C4 loss suite", ok, f"smoothL1={branch} continuity={cont_ok} total(1,1,1)={tot!r}")
    assert ok


# 5 ------------------------------------------------------------------------

def test_c5_invariance_suite(record):
    rng = np.random.default_rng(505)
    worst = {"ncc": 0.0, "zsad": 0.0, "census": 0.0}
    for _ in range(20):
        L, R = rng.uniform(0, 255, (24, 24)), rng.uniform(0, 255, (24, 24))
        D = int(rng.integers(1, 9))
        which = int(rng.integers(0, 2))

        def apply(f):
            return (f(L), R) if which == 0 else (L, f(R))

        a, b = rng.uniform(0.2, 3.0), rng.uniform(-100, 100)
        base = cost_ncc(L, R, D, CFG).cost
        worst["ncc"] = max(worst["ncc"], float(np.abs(cost_ncc(*apply(lambda I: a * I + b), D, CFG).cost - base).max()))
        base = cost_zsad(L, R, D, CFG).cost
        worst["zsad"] = max(worst["zsad"], float(np.abs(cost_zsad(*apply(lambda I: I + b), D, CFG).cost - base).max()))
        p = rng.uniform(0.3, 3.0)
        base = cost_census(L, R, D, CFG).cost
        mono = lambda I: 255.0 * (I / 255.0) ** p + 0.1 * I
        worst["census"] = max(worst["census"], float(np.abs(cost_census(*apply(mono), D, CFG).cost - base).max()))
    ok = worst["ncc"] <= 1e-4 and worst["zsad"] <= 1e-5 and worst["census"] == 0
    record("C5 invariance suite", ok, ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# 6 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c6_toy_training(record):
    t0 = time.perf_counter()
    cfg = ToyNetConfig(variant="psm")
    runs = []
    for seed in range(10):
        L, R, gt = random_dot_pair(64, 64, 8, seed=seed)
        vol = build_matching_volume(L, R, 8)
        net = init_params(cfg, seed)
        start = train_step(net, cfg, vol, gt, 0.25)
        for _ in range(99):
            train_step(net, cfg, vol, gt, 0.25)
        runs.append((start, evaluate_loss(net, cfg, vol, gt)))
    n_ok = sum(s > 1.5 and f < 0.5 for s, f in runs)
    grad_err = max(full_gradient_check(3, "gc"), full_gradient_check(3, "psm"))
    elapsed = time.perf_counter() - t0
    ok = n_ok >= 9 and grad_err < 1e-3 and elapsed < 300
    finals = " ".join(f"{s:.2f}->{f:.3f}" for s, f in runs)
    record("C6 toy training", ok, f"{n_ok}/10 seeds; grad_rel={grad_err:.1e}; {elapsed:.0f}s; {finals}")
    assert ok


# 7 ------------------------------------------------------------------------

def test_c7_classical_pipeline(record):
    L, R, gt = random_dot_pair(64, 64, 8, seed=0)
    pred = wta(combined_cost(build_matching_volume(L, R, 8)))
    res = bad_x(pred, gt, 1.0, noc_mask_from_gt(gt))
    ok = res.bad_rate < 15.0
    record("C7 classical pipeline", ok, f"bad1-noc={res.bad_rate:.2f}% over {res.n_evaluated} px")
    assert ok


# 8 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c8_performance(record):
    rng = np.random.default_rng(808)
    left = GrayImage(rng.uniform(0, 255, (256, 512)))
    right = GrayImage(np.roll(left.data, -10, axis=1))
    build_matching_volume(left.data[:16, :32], right.data[:16, :32], 8)  # JIT warm-up / cache load
    best = math.inf
    for _ in range(2):
        t0 = time.perf_counter()
        vol = build_matching_volume(left, right, 192, half_res=True)
        best = min(best, time.perf_counter() - t0)
    ok = vol.data.shape == (96, 128, 256, 8) and best <= 2.9
    record("C8 performance", ok, f"{best * 1000:.0f} ms for 256x512, D=192, half-res "
                                  "(limit 2900 ms)")
    assert ok


# 9 ------------------------------------------------------------------------

def test_c9_round_trips(record, tmp_path):
    rng = np.random.default_rng(909)
    counts = {"MSV1": 0, "MSNP": 0, "PFM": 0, "KITTI": 0}
    for i in range(20):
        D, H, W = (int(v) for v in rng.integers(1, 7, 3))
        vol = MatchingVolume(rng.random((D, H, W, 8)).astype(np.float32), rng.random((D, H, W)) > 0.5)
        write_msv(vol, tmp_path / "v.msv")
        back = read_msv(tmp_path / "v.msv")
        counts["MSV1"] += (back.data.tobytes() == vol.data.tobytes() and np.array_equal(back.valid, vol.valid)
                           and back.feature_names == vol.feature_names)

        net = init_params(ToyNetConfig(base_channels=int(rng.integers(1, 4)), levels=int(rng.integers(1, 3)),
                                       variant=("gc", "psm")[i % 2]), i)
        save_checkpoint(net, tmp_path / "n.msnp")
        nb = load_checkpoint(tmp_path / "n.msnp")
        counts["MSNP"] += list(nb) == list(net) and all(nb[k].tobytes() == net[k].tobytes() for k in net)

        disp = rng.uniform(0, 250, (H + 3, W + 3)).astype(np.float32).astype(np.float64)
        valid = rng.random(disp.shape) > 0.2
        m = DisparityMap(disp, valid)
        write_pfm(m, tmp_path / "d.pfm")
        b = read_pfm(tmp_path / "d.pfm")
        counts["PFM"] += np.array_equal(b.valid, m.valid) and np.array_equal(b.disp[b.valid], m.disp[m.valid])

        q = np.maximum(np.round(disp * 256) / 256, 1 / 256)
        mq = DisparityMap(q, valid)
        write_kitti_png(mq, tmp_path / "d.png")
        b = read_kitti_png(tmp_path / "d.png")
        counts["KITTI"] += np.array_equal(b.valid, mq.valid) and np.array_equal(b.disp[b.valid], mq.disp[mq.valid])
    ok = all(v == 20 for v in counts.values())
    record("C9 format round trips", ok, ", ".join(f"{k} {v}/20" for k, v in counts.items()))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

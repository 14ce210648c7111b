"""The ten acceptance criteria, at their stated tolerances.

Each test logs its outcome through the ``criterion`` fixture before asserting;
the terminal summary then prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

import cawm.blocks
from cawm import (CDSM, CAWMNet, NetConfig, SelectiveSSM, Tensor, WSSB, WeatherEmbedding,
                  apply_haze, apply_rain, apply_snow, dwt2, freq_scan, idwt2, load_model,
                  metric_ssim, no_grad, save_checkpoint, scan_2d_regular, ssm_recurrence,
                  synthetic_scene, zoh_discretize)
from cawm.checks import run_gradcheck
from cawm.data import make_triple
from cawm.ssm import count_steps
from cawm.train import RunConfig, train
from oracles import haar2d, selective_unrolled, zoh_reference

GOLDEN = Path(__file__).parent / "golden"
F64 = np.float64


# 1 ---------------------------------------------------------------------------

def test_c01_wavelet_round_trip(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_rec, worst_parseval, odd_seen = 0.0, 0.0, 0
    for _ in range(200):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)),
                 int(rng.integers(2, 18)), int(rng.integers(2, 24)))
        x = rng.normal(size=shape).astype(np.float32)
        pack = dwt2(Tensor(x))
        rec = idwt2(pack).data
        worst_rec = max(worst_rec, float(np.max(np.abs(rec - x))))
        if shape[2] % 2 == 0 and shape[3] % 2 == 0:
            e_in = float(np.sum(x.astype(F64) ** 2))
            e_out = sum(float(np.sum(b.data.astype(F64) ** 2)) for b in pack.bands().values())
            worst_parseval = max(worst_parseval, abs(e_out - e_in) / e_in)
        else:
            odd_seen += 1
    elapsed = time.perf_counter() - t0
    ok = worst_rec < 1e-5 and worst_parseval < 1e-4 and elapsed < 5.0 and odd_seen > 0
    criterion(1, "wavelet round trip", ok,
              f"max |rec-x| {worst_rec:.1e}, Parseval rel {worst_parseval:.1e}, "
              f"{odd_seen} odd shapes, {elapsed:.2f}s")
    assert worst_rec < 1e-5
    assert worst_parseval < 1e-4
    assert elapsed < 5.0
    assert odd_seen > 0


def test_c01_subbands_match_matrix_haar():
    # the layout the round trip relies on, against an explicit transform matrix
    rng = np.random.default_rng(102)
    for _ in range(20):
        h, w = 2 * int(rng.integers(1, 9)), 2 * int(rng.integers(1, 12))
        x = rng.normal(size=(h, w))
        got = dwt2(Tensor(x)).bands()
        want = haar2d(x)
        for band in want:
            np.testing.assert_allclose(got[band].data, want[band], atol=1e-12)


# 2 ---------------------------------------------------------------------------

def test_c02_zoh_closed_form(criterion):
    rng = np.random.default_rng(202)
    n_series = 300
    a = -np.exp(rng.uniform(np.log(1e-2), np.log(20.0), 1000))
    delta = np.exp(rng.uniform(np.log(1e-3), np.log(2.0), 1000))
    # push a block of pairs into |delta * A| < 1e-4, where the series branch runs
    delta[:n_series] = rng.uniform(1e-7, 1e-4, n_series) / np.abs(a[:n_series])
    a[n_series:n_series + 50] *= -1  # a few unstable (positive) A as well
    b = rng.normal(size=1000)
    got_a, got_b = zoh_discretize(Tensor(a), Tensor(b), Tensor(delta))
    want = np.array([zoh_reference(ai, di, bi) for ai, di, bi in zip(a, delta, b)])
    err_a = np.abs(got_a.data - want[:, 0]) / np.abs(want[:, 0])
    err_b = np.abs(got_b.data - want[:, 1]) / np.maximum(np.abs(want[:, 1]), 1e-300)
    worst = float(max(err_a.max(), err_b.max()))
    series = int(np.sum(np.abs(a * delta) < 1e-4))
    ok = worst < 1e-6 and series >= n_series
    criterion(2, "ZOH closed form", ok, f"max rel err {worst:.1e} over 1000 pairs, "
              f"{series} in the series branch")
    assert series >= n_series
    assert worst < 1e-6


# 3 ---------------------------------------------------------------------------

def test_c03_scan_oracle_and_transpose_duality(criterion):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        d, n, length = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 65))
        ssm = SelectiveSSM(d, n, rng).astype(F64)
        x = rng.normal(size=(length, d))
        with no_grad():
            got = ssm_recurrence(Tensor(x[None]), ssm).data[0]
        want = selective_unrolled(x, ssm.a_log.data, ssm.d_skip.data, ssm.proj_delta.weight.data,
                                  ssm.delta_bias.data, ssm.proj_b.weight.data,
                                  ssm.proj_c.weight.data)
        worst = max(worst, float(np.linalg.norm(got - want) / np.linalg.norm(want)))

    worst_dual = 0.0
    for _ in range(20):
        c, h, w = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        ssm = SelectiveSSM(c, int(rng.integers(1, 5)), rng).astype(F64)
        x = rng.normal(size=(int(rng.integers(1, 3)), c, h, w))
        xt = np.ascontiguousarray(x.transpose(0, 1, 3, 2))
        with no_grad():
            left = freq_scan(Tensor(xt), "HL", ssm).data
            right = freq_scan(Tensor(x), "LH", ssm).data.transpose(0, 1, 3, 2)
        worst_dual = max(worst_dual, float(np.max(np.abs(left - right))))
    ok = worst < 1e-4 and worst_dual < 1e-5
    criterion(3, "scan oracle", ok, f"unrolled rel err {worst:.1e} (50 systems, T<=64), "
              f"transpose duality {worst_dual:.1e} (20 cases)")
    assert worst < 1e-4
    assert worst_dual < 1e-5


# 4 ---------------------------------------------------------------------------

def test_c04_gradient_suite(criterion):
    t0 = time.perf_counter()
    results = run_gradcheck(seed=0, tol=1e-3)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    worst = max(r.worst for r in results)
    names = {r.name.lower() for r in results}
    required = {"wapm", "cfim", "cdsm", "weather_gate", "wssb", "channel_attention",
                "wavelet_loss", "intensity_loss", "color_loss", "perceptual_loss",
                "gradient_loss", "ssim_loss", "total_loss", "zoh_discretize",
                "linear_recurrence", "selective_ssm", "scan_2d_regular", "freq_scan_lh",
                "freq_scan_hl", "freq_scan_hh", "dwt2_idwt2", "conv2d_s1_p1", "softmax_joint"}
    missing = sorted(required - names)
    ok = not failed and not missing and elapsed < 120
    criterion(4, "gradient suite", ok, f"{len(results) - len(failed)}/{len(results)} cases, "
              f"worst rel err {worst:.1e}, {elapsed:.0f}s"
              + (f", failed {failed}" if failed else "") + (f", missing {missing}" if missing else ""))
    assert not missing
    assert not failed
    assert elapsed < 120


# 5 ---------------------------------------------------------------------------

def test_c05_normalization_invariants(criterion, monkeypatch):
    softmaxes, gates = [], []

    def spy_softmax(x, axis=-1):
        out = real_softmax(x, axis)
        softmaxes.append((out.data, axis))
        return out

    def spy_sigmoid(x):
        out = real_sigmoid(x)
        gates.append(out.data)
        return out

    real_softmax, real_sigmoid = cawm.blocks.softmax, cawm.blocks.sigmoid
    monkeypatch.setattr(cawm.blocks, "softmax", spy_softmax)
    monkeypatch.setattr(cawm.blocks, "sigmoid", spy_sigmoid)

    rng = np.random.default_rng(505)
    net = CAWMNet(NetConfig.tiny(), seed=5).astype(F64)
    with no_grad():
        for scale in (1.0, 5.0):
            net(Tensor(rng.uniform(size=(2, 3, 16, 16)) * scale),
                Tensor(rng.uniform(size=(2, 1, 16, 16)) * scale))
    sum_err = max(float(np.max(np.abs(o.sum(axis=ax) - 1.0))) for o, ax in softmaxes)
    gate_ok = all(np.all((g > 0) & (g < 1)) for g in gates)
    gate_lo = min(float(g.min()) for g in gates)
    gate_hi = max(float(g.max()) for g in gates)

    cdsm = CDSM(8, np.random.default_rng(506)).astype(F64).zero_()
    x = rng.normal(size=(2, 8, 7, 6))
    with no_grad():
        dev = float(np.max(np.abs(cdsm(Tensor(x)).data - x)))

    ok = sum_err < 1e-6 and gate_ok and dev < 1e-6 and softmaxes and gates
    criterion(5, "normalization invariants", ok,
              f"{len(softmaxes)} softmax maps, max |sum-1| {sum_err:.1e}; {len(gates)} sigmoid "
              f"gates in [{gate_lo:.2e}, {gate_hi:.6f}]; CDSM identity dev {dev:.1e}")
    assert softmaxes and gates
    assert sum_err < 1e-6
    assert gate_ok
    assert dev < 1e-6


# 6 ---------------------------------------------------------------------------

def _high_fraction(residual: np.ndarray) -> float:
    bands = [haar2d(c) for c in residual]
    e = {k: sum(float(np.sum(b[k] ** 2)) for b in bands) for k in ("ll", "lh", "hl", "hh")}
    return (e["lh"] + e["hl"] + e["hh"]) / sum(e.values())


def _scenes(n=20, size=64):
    return [(seed, synthetic_scene(size, size, seed)[0].data[0]) for seed in range(n)]


@pytest.mark.parametrize("kind, apply", [("rain", apply_rain), ("snow", apply_snow)])
def test_c06_rain_snow_residual_is_high_frequency(criterion, kind, apply):
    fractions = [_high_fraction(apply(clean[None], 0.5, seed).data[0] - clean)
                 for seed, clean in _scenes()]
    mean = float(np.mean(fractions))
    ok = mean > 0.5
    criterion(6, "frequency decoupling", ok, f"mean high-band fraction {mean:.3f} "
              f"(min {min(fractions):.3f}, max {max(fractions):.3f}) over 20 images",
              part=kind)
    assert mean > 0.5


def test_c06_haze_residual_sits_in_ll(criterion):
    ratios = []
    for seed, clean in _scenes():
        res = apply_haze(clean[None], 0.5, seed).data[0] - clean
        bands = [haar2d(c) for c in res]
        ll = np.mean([np.abs(b["ll"]).mean() for b in bands])
        high = np.mean([np.abs(b[k]).mean() for b in bands for k in ("lh", "hl", "hh")])
        ratios.append(ll / high)
    lo = float(min(ratios))
    ok = lo > 3.0
    criterion(6, "frequency decoupling", ok, f"LL/high L1 gap ratio min {lo:.1f} "
              f"(mean {np.mean(ratios):.1f}) over 20 images", part="haze")
    assert lo > 3.0


# 7 ---------------------------------------------------------------------------

def test_c07_tiny_overfit(criterion, tmp_path):
    cfg = RunConfig(preset="tiny", seed=0, lr=1e-3, steps=300, kinds=["haze", "rain"],
                    severity=0.5, image_size=32, n_pairs=1, out_dir=str(tmp_path))
    t0 = time.perf_counter()
    res = train(cfg, write=False)
    elapsed = time.perf_counter() - t0
    recs = res.records
    ratio = recs[-1]["total"] / recs[0]["total"]
    pair = make_triple(0, 32, cfg.degradation)
    with no_grad():
        fused = res.net(Tensor(pair.degraded_vi.data.astype(np.float32)),
                        Tensor(pair.ir.data.astype(np.float32)))
    score = metric_ssim(fused, pair.clean_vi)
    alpha_grads = [r["alpha_grad"] for r in recs]
    alpha_ok = np.isfinite(res.alpha) and any(g != 0 for g in alpha_grads)
    ok = ratio < 0.25 and score > 0.75 and alpha_ok and elapsed < 300
    criterion(7, "tiny overfit", ok, f"L_total {recs[0]['total']:.3f} -> {recs[-1]['total']:.3f} "
              f"(ratio {ratio:.3f}), SSIM {score:.3f}, alpha {res.alpha:.4f}, "
              f"max |alpha grad| {max(map(abs, alpha_grads)):.2e}, {elapsed:.0f}s")
    assert ratio < 0.25
    assert score > 0.75
    assert alpha_ok
    assert elapsed < 300


# 8 ---------------------------------------------------------------------------

def test_c08_freq_scan_step_counts(criterion):
    rng = np.random.default_rng(808)
    shapes = [(1, 1), (1, 7), (2, 2), (3, 5), (8, 8), (6, 11), (16, 4)]
    bad = []
    for h, w in shapes:
        ssm = SelectiveSSM(4, 2, rng)
        x = Tensor(rng.normal(size=(1, 4, h, w)).astype(np.float32))
        with no_grad():
            with count_steps() as reg:
                scan_2d_regular(x, ssm)
            if reg.steps != 4 * h * w:
                bad.append(("regular", h, w, reg.steps))
            for band in ("LH", "HL", "HH"):
                with count_steps() as fc:
                    freq_scan(x, band, ssm)
                if fc.steps != 2 * h * w:
                    bad.append((band, h, w, fc.steps))
    # inside a WSSB: one regular LL scan plus three subband scans on the half-size bands
    blk = WSSB(4, 2, rng)
    emb = WeatherEmbedding(Tensor(rng.normal(size=(1, 48)).astype(np.float32)))
    for h, w in [(8, 8), (6, 10)]:
        with no_grad(), count_steps() as c:
            blk(Tensor(rng.normal(size=(1, 4, h, w)).astype(np.float32)), emb)
        hw = (h // 2) * (w // 2)
        if c.steps != 4 * hw + 3 * 2 * hw:
            bad.append(("wssb", h, w, c.steps))
    ok = not bad
    criterion(8, "Freq-SSM cost", ok, f"2HW per subband, 4HW regular on {len(shapes)} shapes"
              + (f"; mismatches {bad}" if bad else ""))
    assert not bad


# 9 ---------------------------------------------------------------------------

def test_c09_golden_log_and_checkpoint_round_trip(criterion, tmp_path):
    cfg = RunConfig.load(GOLDEN / "run_config.json")
    cfg.out_dir = str(tmp_path / "run")
    res = train(cfg)
    log_same = (Path(cfg.out_dir) / "train_log.jsonl").read_bytes() == \
        (GOLDEN / "train_log.jsonl").read_bytes()

    pair = make_triple(0, 32, cfg.degradation)
    vi = Tensor(pair.degraded_vi.data.astype(np.float32))
    ir = Tensor(pair.ir.data.astype(np.float32))
    with no_grad():
        before = res.net(vi, ir).data
    path = tmp_path / "copy.cawm"
    save_checkpoint(path, res.net.param_store(), res.net.cfg, res.alpha)
    net2, alpha2 = load_model(path)
    with no_grad():
        after = net2(vi, ir).data
    ckpt_same = np.array_equal(before, after) and alpha2 == res.alpha
    ok = log_same and ckpt_same
    criterion(9, "determinism and serialization", ok,
              f"golden log {'bit-identical' if log_same else 'DIFFERS'} ({cfg.steps} steps), "
              f"checkpoint round trip {'bit-identical' if ckpt_same else 'DIFFERS'}")
    assert log_same
    assert ckpt_same


# 10 --------------------------------------------------------------------------

def test_c10_paper_preset_builds_and_runs(criterion):
    cfg = NetConfig.paper()
    t0 = time.perf_counter()
    net = CAWMNet(cfg, seed=0)
    n_params = net.num_parameters()
    rng = np.random.default_rng(1010)
    with no_grad():
        out = net(Tensor(rng.uniform(size=(1, 3, 64, 64)).astype(np.float32)),
                  Tensor(rng.uniform(size=(1, 1, 64, 64)).astype(np.float32)))
    elapsed = time.perf_counter() - t0
    ok = (out.shape == (1, 3, 64, 64) and out.is_valid()
          and cfg.block_counts == [8, 10, 10, 12, 10, 10, 8]
          and cfg.channel_schedule[0] == 48 and max(cfg.channel_schedule) == 384)
    criterion(10, "paper preset", ok, f"{n_params:,} parameters, forward on 64x64 gives "
              f"{out.shape}, {elapsed:.0f}s")
    del net
    assert ok

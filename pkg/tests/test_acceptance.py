"""One test per acceptance criterion; the terminal summary prints one PASS/FAIL line for each."""

import json
import time

import numpy as np

import svretarget.gradcheck as G
from svretarget import losses as L
from svretarget.cli import EXIT_OK, main
from svretarget.config import RunConfig
from svretarget.data import SyntheticScene, synthetic_clip, write_dataset
from svretarget.metrics import bds, bds_pair, ddr
from svretarget.pam import init_pam, pam_attention
from svretarget.params import ParamSet
from svretarget.pipeline import RetargetNet, retarget_clip, train, write_loss_curve
from svretarget.saliency import DisparityMap
from svretarget.shiftwarp import ShiftParams, retarget_mapping, shift_map, uniform_mapping, warp
from svretarget.svt import AttentionTrace, SVTConfig, TokenGrid, _head, encoder_forward, init_svt
from svretarget.tensor import Tensor

# every differentiable op of the tensor layer and every loss must be in the suite
REQUIRED_CASES = {
    "add", "sub", "mul", "relu", "abs", "exp", "sum", "mean", "reshape", "transpose", "matmul", "softmax",
    "layer_norm", "batch_norm_eval", "conv2d", "conv_column", "bilinear_sample",
    "warp", "inverse_warp", "svt_layer", "pam_full", "reconstruct",
    "mse", "perceptual_loss", "dwt_loss", "photometric_loss", "smoothness_loss", "combine_losses",
}


def test_ac01_gradient_suite(record_property):
    start = time.perf_counter()
    results = G.run_suite(seed=0)
    elapsed = time.perf_counter() - start
    names = {r.name for r in results}
    per_case = {n: sum(r.name == n for r in results) for n in names}
    failed = [r.line() for r in results if not r.passed]
    worst = max(r.error for r in results)
    record_property("detail", f"{len(results)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert G.STEP == 1e-4 and G.TOLERANCE == 1e-4
    assert REQUIRED_CASES <= names, REQUIRED_CASES - names
    assert min(per_case.values()) >= 3
    assert not failed, failed
    assert elapsed < 120


def test_ac02_warp_identities(record_property):
    clip = synthetic_clip(SyntheticScene(frames=4))
    cfg = RunConfig.toy()
    cfg.retarget.target_ratio = 1.0
    out = retarget_clip(clip, cfg, RetargetNet(cfg), saliency=(None, None), with_features=False)
    exact = (np.array_equal(out.left.frame.data, clip.left[clip.center])
             and np.array_equal(out.right.frame.data, clip.right[clip.center]))
    ramp = np.broadcast_to(np.arange(64, dtype=np.float64), (3, 5, 64)).copy()
    half = warp(ramp, shift_map(uniform_mapping(64, 32))).data
    err = np.abs(half - (2 * np.arange(32) + 0.5)).max()
    record_property("detail", f"identity exact={exact}, ramp decimation err {err:.1e}")
    assert exact
    assert err <= 1e-5


def test_ac03_mapping_exactness(record_property):
    rng = np.random.default_rng(3)
    worst, monotone = 0.0, True
    for ratio in (0.5, 0.7, 0.8, 1.5):
        p = ShiftParams(target_ratio=ratio)
        for _ in range(100):
            mask = rng.random((16, 48)) ** rng.uniform(1, 8)
            mask *= rng.random() < 0.9      # include all-zero masks
            m = retarget_mapping(mask, p)
            worst = max(worst, abs(m.tgt[-1] - p.target_width(48)))
            monotone &= bool(np.all(np.diff(m.tgt) > 0))
    record_property("detail", f"max |tgt[W]-W'| {worst:.1e}, strictly increasing={monotone}")
    assert worst <= 1e-4 and monotone


def test_ac04_salient_protection(record_property):
    rng = np.random.default_rng(4)
    w = 48
    margins = []
    for _ in range(20):
        lo = int(rng.integers(0, w - 4))
        hi = int(rng.integers(lo + 1, min(w, lo + 24)))
        mask = np.zeros((16, w))
        mask[:, lo:hi] = 1
        sal = np.zeros(w, bool)
        sal[lo:hi] = True
        for ratio in (0.3, 0.5, 0.7, 0.8, 0.9, 0.99):
            rho = retarget_mapping(mask, ShiftParams(target_ratio=ratio)).widths
            margins.append(rho[sal].mean() - rho[~sal].mean())
    record_property("detail", f"smallest salient-minus-other width {min(margins):.3f} over {len(margins)} cases")
    assert min(margins) > 0


def test_ac05_attention_properties(record_property):
    rng = np.random.default_rng(5)
    cfg = SVTConfig(t=1, h=2, w=2, d=12, layers=2, heads=3, mlp_dim=16, pos_grid=(2, 3))
    p = ParamSet(seed=5, dtype=np.float64)
    init_svt(p, cfg)
    traces = []
    grid = TokenGrid(Tensor(rng.normal(size=(3, 2, 3, 12))), Tensor(rng.normal(size=(2, 3, 12))))
    encoder_forward(grid, p, cfg, traces=traces)
    rows = [a.sum(axis=-1) for t in traces for a in t.weights]
    q = ParamSet(seed=5, dtype=np.float64)
    init_pam(q, 4)
    for a in pam_attention(Tensor(rng.normal(size=(4, 3, 5))), Tensor(rng.normal(size=(4, 3, 5))), q):
        rows.append(a.data.sum(axis=-1))
    row_err = max(np.abs(r - 1).max() for r in rows)

    wq, wk, wv = (p[f"svt.layer0.head0.{m}"] for m in ("wq", "wk", "wv"))
    disp = Tensor(rng.normal(size=(2, 3, 12)))
    x = rng.normal(size=(3, 2, 3, 12))
    base = _head(Tensor(x), disp, "spatial", wq, wk, wv, None).data
    x2 = x.copy()
    x2[0] += 3.0
    local = np.array_equal(_head(Tensor(x2), disp, "spatial", wq, wk, wv, None).data[1:], base[1:])
    wq, wk, wv = (p[f"svt.layer0.head1.{m}"] for m in ("wq", "wk", "wv"))
    base_t = _head(Tensor(x), disp, "temporal", wq, wk, wv, None).data
    x3 = x.copy()
    x3[:, 1] += 3.0
    local &= np.array_equal(_head(Tensor(x3), disp, "temporal", wq, wk, wv, None).data[:, 0], base_t[:, 0])

    wq, wk, wv = (p[f"svt.layer0.head0.{m}"] for m in ("wq", "wk", "wv"))
    perm = rng.permutation(6)
    xp = x.reshape(3, 6, 12)[:, perm].reshape(x.shape)
    out = base.reshape(3, 6, -1)[:, perm]
    outp = _head(Tensor(xp), disp, "spatial", wq, wk, wv, None).data.reshape(3, 6, -1)
    perm_err = np.abs(outp - out).max()
    record_property("detail", f"row-sum err {row_err:.1e}, locality exact={local}, permutation err {perm_err:.1e}")
    assert row_err <= 1e-6
    assert local
    # reordering the keys reorders floating-point sums; equality is to double-precision roundoff
    assert perm_err <= 1e-12


def test_ac06_token_counts(record_property):
    counts = SVTConfig(t=2, h=16, w=16).grid(4, 224, 224)
    record_property("detail", f"(n_t, n_h, n_w) = {counts}")
    assert counts == (2, 14, 14)


def test_ac07_dwt(record_property):
    rng = np.random.default_rng(7)
    pr, parseval = 0.0, 0.0
    for _ in range(100):
        h, w = 2 * rng.integers(1, 17, size=2)
        x = rng.normal(size=(3, h, w))
        bands = L.dwt2(x)
        pr = max(pr, np.abs(L.idwt2(bands).data - x).max())
        e = sum(float((b.data ** 2).sum()) for b in bands)
        parseval = max(parseval, abs(e - (x ** 2).sum()) / (x ** 2).sum())
    a, b = rng.random((3, 8, 10)), rng.random((3, 8, 10))
    same = L.dwt_loss(a, b, a, b).item()
    record_property("detail", f"reconstruction err {pr:.1e}, Parseval rel err {parseval:.1e}, identical loss {same}")
    assert pr <= 1e-5 and parseval <= 1e-4 and same == 0


def test_ac08_metric_oracles(record_property):
    rng = np.random.default_rng(8)
    v = [rng.random((3, 16, 20)) for _ in range(2)]
    self_bds = bds(v, v)
    patch = np.rint(rng.uniform(0.1, 0.8, (3, 7, 7)) * 255) / 255
    delta = 20 / 255
    one_patch = sum(bds_pair(patch, patch + delta))
    d = DisparityMap.dense(rng.uniform(0.5, 6, (6, 32)))
    ident = ddr([d], uniform_mapping(32, 32), uniform_mapping(32, 32))
    half = uniform_mapping(32, 16)
    const = ddr([DisparityMap.dense(np.full((6, 32), 5.0))], half, half)
    record_property("detail", f"bds(V,V)={self_bds}, one-patch err {abs(one_patch - 2 * delta ** 2):.1e}, "
                              f"ddr identity={ident}, ddr half={const[1]:.6f}")
    assert self_bds == 0
    assert abs(one_patch - 2 * delta ** 2) <= 1e-6
    assert ident == (0.0, 0.0)
    assert abs(const[0] - 0.5 * 5.0 / 5.0) <= 1e-6 and abs(const[1] - 0.5) <= 1e-6


def test_ac09_toy_training(tmp_path, record_property):
    cfg = RunConfig.toy()
    cfg.optim.iterations = 200
    assert cfg.optim.lr == 0.05 and cfg.data.synthetic_frames == 8
    start = time.perf_counter()
    _, curve = train(cfg)
    elapsed = time.perf_counter() - start
    write_loss_curve(tmp_path / "a.csv", curve)
    _, again = train(cfg)
    write_loss_curve(tmp_path / "b.csv", again)
    totals = np.array([r.total for r in curve])
    baseline = totals[:5].mean()
    final = totals[-1]
    reduction = 1 - final / baseline
    identical = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    record_property("detail", f"first-5 mean {baseline:.4f} -> step 200 {final:.4f} "
                              f"({100 * reduction:.1f}% lower), {elapsed:.0f}s, csv identical={identical}")
    assert np.all(np.isfinite(totals))
    # a run that blows up in its first steps inflates the baseline; require real progress too
    assert final < totals[0]
    assert reduction >= 0.30
    assert elapsed < 600
    assert identical


def test_ac10_bds_performance(record_property):
    rng = np.random.default_rng(10)
    src, ret = rng.random((3, 64, 128)), rng.random((3, 64, 128))
    start = time.perf_counter()
    value = sum(bds_pair(src, ret, 7, 2))
    elapsed = time.perf_counter() - start
    record_property("detail", f"bds {value:.4f} in {elapsed:.2f}s")
    assert elapsed < 10


def test_ac11_cli_identity_chain(tmp_path, record_property):
    root = tmp_path / "data"
    write_dataset(root, {"000000": synthetic_clip(SyntheticScene(frames=4))})
    cfg = RunConfig.toy()
    cfg.data.synthetic = False
    cfg.data.root = str(root)
    (tmp_path / "run.ini").write_text(cfg.to_ini())
    codes = [main(["retarget", "--config", str(tmp_path / "run.ini"), "--ratio", "1.0", "--out", str(tmp_path / "ret")])]
    codes.append(main(["evaluate", "--source", str(root), "--retargeted", str(tmp_path / "ret"),
                       "--metrics", "bds,ddr", "--out", str(tmp_path / "report.json")]))
    report = json.loads((tmp_path / "report.json").read_text())
    record_property("detail", f"exit codes {codes}, bds={report['bds']}, ddr={report['ddr_signed']}/{report['ddr_abs']}")
    assert codes == [EXIT_OK, EXIT_OK]
    assert report["bds"] == 0 and report["ddr_signed"] == 0 and report["ddr_abs"] == 0

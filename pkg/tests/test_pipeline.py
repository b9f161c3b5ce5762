import numpy as np
import pytest

from svretarget.config import RunConfig
from svretarget.data import SyntheticScene, ViewSaliency, synthetic_clip
from svretarget.pipeline import (Adam, RetargetNet, fan_in, forward_losses, lr_multipliers, make_extractor,
                                 retarget_clip, train, train_step)
from svretarget.saliency import Box


@pytest.fixture(scope="module")
def toy():
    cfg = RunConfig.toy()
    return cfg, synthetic_clip(SyntheticScene(frames=4, height=24, width=32))


def test_two_runs_give_identical_reports(toy):
    cfg, clip = toy
    reports = []
    for _ in range(2):
        net = RetargetNet(cfg)
        ex = make_extractor(cfg)
        opt = Adam(net.params, cfg.optim.lr, multipliers=lr_multipliers(net.params))
        reports.append([train_step(clip, cfg, net, ex, opt).as_row() for _ in range(2)])
    assert reports[0] == reports[1]


def test_zero_learning_rate_leaves_parameters(toy):
    cfg, clip = toy
    net = RetargetNet(cfg)
    before = {k: p.data.copy() for k, p in net.params.params.items()}
    opt = Adam(net.params, lr=0.0)
    train_step(clip, cfg, net, make_extractor(cfg), opt)
    # BN running statistics (buffers) still track the batch; learnable tensors must not move
    assert all(np.array_equal(before[k], p.data) for k, p in net.params.params.items())


def test_fan_in_multipliers():
    assert fan_in(np.zeros((8, 6, 3, 3))) == 54
    assert fan_in(np.zeros((24, 48))) == 24
    assert fan_in(np.zeros(5)) == 1
    cfg = RunConfig.toy()
    net = RetargetNet(cfg)
    assert lr_multipliers(net.params, "none") == [1.0] * len(net.params)


@pytest.mark.parametrize("ratio", [0.5, 0.7, 0.8, 1.0, 1.5])
def test_ratio_contract(toy, ratio):
    cfg, clip = toy
    cfg = RunConfig.toy()
    cfg.retarget.target_ratio = ratio
    out = retarget_clip(clip, cfg, RetargetNet(cfg))
    expected = int(np.floor(ratio * clip.width))
    for view in (out.left, out.right):
        assert view.frame.shape == (3, clip.height, expected)
        assert view.features.shape == (6, clip.height, expected)
        view.mapping.validate()


def test_identity_at_unit_ratio(toy):
    _, clip = toy
    cfg = RunConfig.toy()
    cfg.retarget.target_ratio = 1.0
    out = retarget_clip(clip, cfg, RetargetNet(cfg), saliency=(None, None))
    assert np.array_equal(out.left.frame.data, clip.left[clip.center])
    assert np.array_equal(out.right.frame.data, clip.right[clip.center])


def test_views_are_mapped_independently(toy):
    _, clip = toy
    cfg = RunConfig.toy()
    h, w = clip.height, clip.width
    left = np.zeros((h, w), np.float32)
    left[:, 2:10] = 1
    right = np.zeros((h, w), np.float32)
    right[:, 20:30] = 1
    frame = [Box(0, 0, w, h)]
    out = retarget_clip(clip, cfg, RetargetNet(cfg), saliency=(ViewSaliency(left, frame), ViewSaliency(right, frame)))
    assert not np.allclose(out.left.mapping.tgt, out.right.mapping.tgt)
    same = retarget_clip(clip, cfg, RetargetNet(cfg), saliency=(ViewSaliency(left, frame), ViewSaliency(left, frame)))
    assert np.array_equal(same.left.mapping.tgt, same.right.mapping.tgt)


def test_forward_losses_are_finite_and_non_negative(toy):
    cfg, clip = toy
    _, report = forward_losses(clip, cfg, RetargetNet(cfg), make_extractor(cfg))
    values = report.to_dict()
    assert all(np.isfinite(v) and v >= 0 for v in values.values())
    assert values["l_vgg_total"] == pytest.approx(values["l_vgg_entire"] + values["l_vgg_salient"])


def test_short_training_is_deterministic_end_to_end(tmp_path):
    cfg = RunConfig.toy()
    cfg.optim.iterations = 2
    a, curve_a = train(cfg)
    b, curve_b = train(cfg)
    a.save(tmp_path / "a.svrw")
    b.save(tmp_path / "b.svrw")
    assert (tmp_path / "a.svrw").read_bytes() == (tmp_path / "b.svrw").read_bytes()
    assert [r.as_row() for r in curve_a] == [r.as_row() for r in curve_b]

import numpy as np

from svretarget.params import ParamSet
from svretarget.reconstruction import RECON_CHANNELS, RECON_KERNELS, init_reconstruction, reconstruct
from svretarget.shiftwarp import build_mapping, uniform_mapping
from svretarget.tensor import Tensor

SMALL = dict(pam_channels=4, channels=(4, 5, 3), kernels=(3, 3, 3))


def _params(**kw):
    p = ParamSet(seed=0, dtype=np.float64)
    init_reconstruction(p, 6, **kw)
    return p


def test_stated_architecture():
    assert RECON_CHANNELS == (64, 128, 512, 128, 3)
    assert RECON_KERNELS == (5, 3, 3, 3, 3)
    p = ParamSet()
    init_reconstruction(p, 6)
    assert p["recon.conv0.weight"].shape == (64, 64, 5, 5)
    assert p["recon.conv4.weight"].shape == (3, 128, 3, 3)


def test_width_restoration(rng):
    p = _params(**SMALL)
    for target in (4, 7, 15):
        m = build_mapping(rng.random(10) + 0.1, 10, target)
        out = reconstruct(Tensor(rng.normal(size=(4, 3, target))), Tensor(rng.normal(size=(6, 3, target))), m, p)
        assert out.shape == (3, 3, 10)


def test_zero_in_zero_out():
    p = _params(**SMALL)
    out = reconstruct(Tensor(np.zeros((4, 5, 6))), Tensor(np.zeros((6, 5, 6))), uniform_mapping(12, 6), p)
    assert not out.data.any()


def test_locality(rng):
    p = _params(**SMALL)
    for name in list(p.params):
        if name.endswith("bias"):
            p[name].data[:] = rng.normal(size=p[name].shape) * 0.1
    m = uniform_mapping(24, 24)
    pam = rng.normal(size=(4, 12, 24))
    warped = rng.normal(size=(6, 12, 24))
    base = reconstruct(Tensor(pam), Tensor(warped), m, p).data
    y, x = 6, 12
    pam[:, y, x] += 1.0
    changed = np.abs(reconstruct(Tensor(pam), Tensor(warped), m, p).data - base).max(axis=0) > 0
    ys, xs = np.nonzero(changed)
    reach = 3 * 1            # three 3x3 convs
    assert changed.any()
    assert ys.min() >= y - reach and ys.max() <= y + reach
    assert xs.min() >= x - reach and xs.max() <= x + reach


def test_locality_through_reduced_mapping(rng):
    p = _params(**SMALL)
    m = build_mapping(rng.random(24) + 0.2, 24, 12)
    pam = rng.normal(size=(4, 6, 12))
    warped = rng.normal(size=(6, 6, 12))
    base = reconstruct(Tensor(pam), Tensor(warped), m, p).data
    u = 5
    pam[:, 3, u] += 1.0
    changed = np.abs(reconstruct(Tensor(pam), Tensor(warped), m, p).data - base).max(axis=(0, 1)) > 0
    pos = m.to_target(np.arange(24))
    footprint = np.flatnonzero(np.abs(pos - u) < 1)
    xs = np.flatnonzero(changed)
    assert xs.min() >= footprint.min() - 3 and xs.max() <= footprint.max() + 3

import numpy as np
import pytest
import torch

from cmfnet.baselines import PNN, PnnConfig, bicubic_baseline, bicubic_resize, bicubic_torch, pnn_forward
from cmfnet.core import BadShape

import oracles
from gradcheck import gradient_check


def test_bicubic_constant_and_shape():
    x = np.full((4, 64, 64), 0.37)
    y = bicubic_baseline(x, 4)
    assert y.shape == (4, 256, 256)
    np.testing.assert_allclose(y, 0.37, atol=1e-12)
    with pytest.raises(BadShape):
        bicubic_baseline(x, 3)


@pytest.mark.parametrize("ratio", [2, 4])
def test_bicubic_matches_kernel_oracle(ratio):
    x = np.random.default_rng(ratio).random((2, 6, 7))
    y = bicubic_resize(x, (6 * ratio, 7 * ratio))
    for b in range(2):
        np.testing.assert_allclose(y[b], oracles.bicubic_upsample(x[b], ratio), atol=1e-6, rtol=0)


def test_bicubic_torch_twin():
    x = np.random.default_rng(0).random((1, 4, 5, 5))
    t = bicubic_torch(torch.from_numpy(x), 4).numpy()
    np.testing.assert_allclose(t, bicubic_resize(x, (20, 20)), atol=1e-12)


@pytest.mark.parametrize("shift", [1, 2])
def test_bicubic_translation_equivariance(shift):
    r = 4
    x = np.random.default_rng(5).random((1, 16, 16))
    shifted = np.roll(x, shift, axis=2)
    y, ys = bicubic_baseline(x, r), bicubic_baseline(shifted, r)
    # compare away from the wrap-around seam and clamped borders
    lo, hi = (shift + 3) * r, (16 - 3) * r
    np.testing.assert_allclose(ys[:, :, lo:hi], np.roll(y, shift * r, axis=2)[:, :, lo:hi], atol=1e-12)


def test_pnn_shape_and_zero_params():
    model = PNN()
    ms, pan = torch.rand(1, 4, 64, 64), torch.rand(1, 1, 256, 256)
    assert tuple(pnn_forward(ms, pan, model).shape) == (1, 4, 256, 256)
    small = PNN()
    with torch.no_grad():
        for name, p in small.named_parameters():
            p.zero_()
        small.conv3.bias.copy_(torch.tensor([0.1, 0.2, 0.3, 0.4]))
    y = small(ms[..., :8, :8], pan[..., :32, :32]).detach()
    np.testing.assert_allclose(y[0].mean(dim=(1, 2)).numpy(), [0.1, 0.2, 0.3, 0.4], atol=1e-7)
    assert float(y.std(dim=(2, 3)).max()) == 0.0
    with pytest.raises(BadShape):
        model(ms, torch.rand(1, 1, 128, 128))
    with pytest.raises(ValueError):
        PnnConfig(kernels=(9, 5))


def test_pnn_gradient_check():
    torch.manual_seed(0)
    model = PNN(PnnConfig(widths=(8, 4)))
    ms, pan = torch.rand(1, 4, 4, 4), torch.rand(1, 1, 16, 16)
    gt = torch.rand(1, 4, 16, 16)
    for name, err in gradient_check(model, (ms, pan), gt):
        assert err <= 1e-3, name

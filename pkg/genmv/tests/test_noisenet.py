import pytest
import torch

from genmv.noisenet import NoiseNetConfig, NoisePredictor, timestep_encoding


def test_timestep_encoding_values():
    enc = timestep_encoding(torch.tensor([7]), 8)
    assert enc.shape == (1, 8)
    t = 7.0
    for i in range(4):
        rate = t / 10000 ** (2 * i / 8)
        assert float(enc[0, 2 * i]) == pytest.approx(torch.sin(torch.tensor(rate)).item(), abs=1e-6)
        assert float(enc[0, 2 * i + 1]) == pytest.approx(torch.cos(torch.tensor(rate)).item(), abs=1e-6)


def test_noise_net_shapes_and_determinism():
    torch.manual_seed(0)
    net = NoisePredictor(NoiseNetConfig(latent_dim=16))
    x = torch.randn(3, 50, 4)
    t = torch.tensor([1, 40, 100])
    z = torch.randn(3, 16)
    out1 = net(x, t, z)
    out2 = net(x, t, z)
    assert out1.shape == (3, 50, 4)
    assert torch.equal(out1, out2)


def test_noise_net_default_widths():
    net = NoisePredictor(NoiseNetConfig(latent_dim=8))
    dims = [(layer.lin.in_features, layer.lin.out_features)
            for layer in net.layers]
    assert dims == [(4, 128), (128, 256), (256, 512), (512, 256),
                    (256, 128), (128, 4)]
    # context = timestep encoding (32) + latent (8)
    assert net.layers[0].gate.in_features == 40
    assert net.layers[0].bias.bias is None


def test_noise_net_gradient_matches_finite_differences():
    torch.manual_seed(1)
    net = NoisePredictor(NoiseNetConfig(widths=(4, 16, 16, 4), time_dim=8,
                                        latent_dim=6)).double()
    x = torch.randn(1, 1, 4, dtype=torch.float64, requires_grad=True)
    t = torch.tensor([3])
    z = torch.randn(1, 6, dtype=torch.float64)
    out = net(x, t, z).sum()
    grad, = torch.autograd.grad(out, x)
    h = 1e-6
    for j in range(4):
        xp = x.detach().clone()
        xm = x.detach().clone()
        xp[0, 0, j] += h
        xm[0, 0, j] -= h
        fd = (net(xp, t, z).sum() - net(xm, t, z).sum()) / (2 * h)
        assert float(grad[0, 0, j]) == pytest.approx(float(fd), rel=1e-4, abs=1e-8)


def test_noise_net_rejects_odd_time_dim():
    with pytest.raises(ValueError):
        NoiseNetConfig(time_dim=7)
    with pytest.raises(ValueError):
        NoiseNetConfig(widths=(4, 8, 3))

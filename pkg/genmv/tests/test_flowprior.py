import math

import pytest
import torch

from genmv.encoder import LatentCode
from genmv.flowprior import AffineCoupling, FlowPrior, kl_to_flow_prior


def test_identity_initialization_gives_zero_logdet():
    flow = FlowPrior(dim=8)
    w = torch.randn(16, 8)
    z, logdet = flow(w)
    assert torch.allclose(z, w)
    assert torch.all(logdet == 0)


def _perturbed_flow(dim, seed=0):
    torch.manual_seed(seed)
    flow = FlowPrior(dim=dim)
    with torch.no_grad():
        for layer in flow.layers:
            layer.net[-1].weight.normal_(0, 0.3)
            layer.net[-1].bias.normal_(0, 0.1)
    return flow


def test_flow_bijection_roundtrip():
    flow = _perturbed_flow(8, seed=1).double()
    z = torch.randn(32, 8, dtype=torch.float64)
    w, _ = flow.inverse(z)
    z_back, _ = flow(w)
    assert torch.max(torch.abs(z_back - z)) < 1e-6


def test_logdet_matches_finite_difference_jacobian():
    flow = _perturbed_flow(4, seed=2).double()
    w = torch.randn(1, 4, dtype=torch.float64)
    _, logdet = flow(w)
    h = 1e-6
    jac = torch.zeros(4, 4, dtype=torch.float64)
    for j in range(4):
        wp, wm = w.clone(), w.clone()
        wp[0, j] += h
        wm[0, j] -= h
        zp, _ = flow(wp)
        zm, _ = flow(wm)
        jac[:, j] = (zp - zm)[0] / (2 * h)
    fd_logdet = torch.logdet(jac).item()
    assert float(logdet[0]) == pytest.approx(fd_logdet, abs=1e-4)


def test_inverse_logdet_is_negated_forward():
    flow = _perturbed_flow(8, seed=3).double()
    w = torch.randn(5, 8, dtype=torch.float64)
    z, ld_fwd = flow(w)
    _, ld_inv = flow.inverse(z)
    assert torch.allclose(ld_inv, -ld_fwd, atol=1e-10)


def test_kl_identity_flow_standard_normal_is_zero_mean():
    torch.manual_seed(4)
    flow = FlowPrior(dim=6)  # identity init: prior is standard normal
    n = 10_000
    z_noise = torch.randn(n, 6)
    latent = LatentCode(mean=torch.zeros(n, 6), std=torch.ones(n, 6),
                        sample=z_noise)
    kl = kl_to_flow_prior(latent, flow)
    # q = p: the single-sample estimates average to zero
    assert abs(float(kl.mean())) < 0.05


def test_kl_nonnegative_in_expectation_for_shifted_posterior():
    torch.manual_seed(5)
    flow = FlowPrior(dim=6)
    n = 10_000
    mean = torch.full((n, 6), 0.8)
    std = torch.full((n, 6), 0.7)
    sample = mean + std * torch.randn(n, 6)
    kl = kl_to_flow_prior(LatentCode(mean, std, sample), flow)
    # analytic KL(N(0.8, 0.49) || N(0, 1)) per dim
    per_dim = 0.5 * (0.49 + 0.64 - 1.0 - math.log(0.49))
    assert float(kl.mean()) == pytest.approx(6 * per_dim, rel=0.05)
    assert float(kl.mean()) > 0


def test_kl_rejects_nonpositive_std():
    flow = FlowPrior(dim=4)
    latent = LatentCode(mean=torch.zeros(2, 4), std=torch.zeros(2, 4),
                        sample=torch.zeros(2, 4))
    with pytest.raises(ValueError):
        kl_to_flow_prior(latent, flow)


def test_coupling_alternating_masks_cover_all_dims():
    flow = _perturbed_flow(8, seed=6)
    w = torch.randn(4, 8)
    z, _ = flow(w)
    # with alternating masks every coordinate is transformed somewhere
    assert torch.all(torch.any(z != w, dim=0))

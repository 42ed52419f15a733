"""Forward corruption and reverse generation over shape-EM point clouds."""

from __future__ import annotations

import torch

from .schedule import DiffusionSchedule

NOISE_CONVENTIONS = ("std", "literal", "none")


def diffuse_forward(x0: torch.Tensor, t, eps: torch.Tensor,
                    schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t in 1..T.

    ``t`` may be a scalar or a (batch,) tensor matching x0's leading dim.
    """
    t = torch.as_tensor(t)
    if torch.any(t < 1):
        raise ValueError("diffuse_forward requires t >= 1")
    abar = schedule.alpha_bar(t).to(x0.dtype)
    while abar.dim() < x0.dim():
        abar = abar.unsqueeze(-1)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * eps


def reverse_step(x_t: torch.Tensor, t: int, eps_hat: torch.Tensor,
                 schedule: DiffusionSchedule, noise: torch.Tensor | None,
                 convention: str = "std") -> torch.Tensor:
    """One reverse-transition draw.

    The mean is (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t). The
    injected-noise scale follows ``convention``: "std" uses sqrt(beta_tilde)
    (the reverse transition has variance beta_tilde), "literal" multiplies
    the noise by beta_tilde itself, "none" suppresses it. At t = 1 the
    coefficient vanishes either way and the step is deterministic.
    """
    if convention not in NOISE_CONVENTIONS:
        raise ValueError(f"convention must be one of {NOISE_CONVENTIONS}")
    alpha = schedule.alpha(t).to(x_t.dtype)
    abar = schedule.alpha_bar(torch.as_tensor(t)).to(x_t.dtype)
    mean = (x_t - (1.0 - alpha) / torch.sqrt(1.0 - abar) * eps_hat) \
        / torch.sqrt(alpha)
    if convention == "none" or noise is None or t == 1:
        return mean
    btilde = schedule.beta_tilde(torch.as_tensor(t)).to(x_t.dtype)
    scale = torch.sqrt(btilde) if convention == "std" else btilde
    return mean + scale * noise


def sample_reverse(z: torch.Tensor, schedule: DiffusionSchedule, predictor,
                   num_points: int, point_dim: int = 4,
                   convention: str = "std",
                   generator: torch.Generator | None = None,
                   x_start: torch.Tensor | None = None) -> torch.Tensor:
    """Generate a point cloud by iterating the reverse transitions.

    ``predictor(x_t, t, z)`` returns the per-point noise estimate; ``z`` is
    (batch, d_z). Starts from x_T ~ N(0, I) unless ``x_start`` is given.
    """
    batch = z.shape[0]
    shape = (batch, num_points, point_dim)
    if x_start is not None:
        x = x_start.clone()
        if x.shape != shape:
            raise ValueError(f"x_start must have shape {shape}")
    else:
        x = torch.randn(shape, generator=generator, dtype=z.dtype,
                        device=z.device)
    for t in range(schedule.num_steps, 0, -1):
        t_vec = torch.full((batch,), t, dtype=torch.long, device=z.device)
        eps_hat = predictor(x, t_vec, z)
        noise = None
        if convention != "none" and t > 1:
            noise = torch.randn(shape, generator=generator, dtype=z.dtype,
                                device=z.device)
        x = reverse_step(x, t, eps_hat, schedule, noise, convention)
        if not torch.all(torch.isfinite(x)):
            raise FloatingPointError(f"non-finite state at reverse step t={t}")
    return x

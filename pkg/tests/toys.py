"""A two-parameter, two-layer toy network for finite-difference gradient checks."""

import torch

from stmdenoise.objectives import (
    adv_discriminator_loss,
    adv_generator_loss,
    cycle_loss,
    fa_generator_term,
    feature_alignment_loss,
)


def toy_net(theta, x):
    # layer 1: scale + tanh; layer 2: scale + shift
    return theta[1] * torch.tanh(theta[0] * x) + 0.1


def _inputs():
    g = torch.Generator().manual_seed(0)
    a = torch.randn(2, 1, 4, 4, generator=g, dtype=torch.float64)
    b = torch.randn(2, 1, 4, 4, generator=g, dtype=torch.float64)
    return a, b


def loss_cases():
    a, b = _inputs()
    return {
        "adv_discriminator": lambda t: adv_discriminator_loss(toy_net(t, a), toy_net(t, b)),
        "adv_generator_saturating": lambda t: adv_generator_loss(toy_net(t, b), "saturating"),
        "adv_generator_non_saturating": lambda t: adv_generator_loss(toy_net(t, b), "non_saturating"),
        "cycle": lambda t: cycle_loss(a, toy_net(t, a)),
        "feature_alignment": lambda t: feature_alignment_loss(toy_net(t, a), toy_net(t, b)),
        "fa_generator_saturating": lambda t: fa_generator_term(toy_net(t, a), toy_net(t, b), "saturating"),
        "fa_generator_non_saturating": lambda t: fa_generator_term(toy_net(t, a), toy_net(t, b), "non_saturating"),
    }


def gradient_relative_error(loss_fn, theta0=(0.7, -1.3), h=1e-6):
    theta = torch.tensor(theta0, dtype=torch.float64, requires_grad=True)
    (analytic,) = torch.autograd.grad(loss_fn(theta), theta)
    numeric = torch.zeros(2, dtype=torch.float64)
    with torch.no_grad():
        for i in range(2):
            e = torch.zeros(2, dtype=torch.float64)
            e[i] = h
            numeric[i] = (loss_fn(theta + e) - loss_fn(theta - e)) / (2 * h)
    return float((analytic - numeric).norm() / numeric.norm().clamp_min(1e-12))

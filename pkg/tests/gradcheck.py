"""Central finite-difference gradient check shared by the model tests."""

import numpy as np
import torch


def gradient_check(model, inputs, target, n_params=3, seed=0, h=1e-6):
    """Relative errors between autograd and central differences for random scalars."""
    model = model.double()
    inputs = [x.double() for x in inputs]
    target = target.double()
    loss_fn = lambda: torch.nn.functional.mse_loss(model(*inputs), target)
    model.zero_grad()
    loss_fn().backward()
    named = [(n, p) for n, p in model.named_parameters()]
    for n, p in named:
        assert p.grad is not None and torch.isfinite(p.grad).all(), n
    rng = np.random.default_rng(seed)
    errors = []
    while len(errors) < n_params:
        name, prm = named[rng.integers(len(named))]
        idx = tuple(int(rng.integers(s)) for s in prm.shape)
        analytic = float(prm.grad[idx])
        if abs(analytic) < 1e-7:
            continue
        with torch.no_grad():
            orig = float(prm[idx])
            prm[idx] = orig + h
            up = float(loss_fn())
            prm[idx] = orig - h
            down = float(loss_fn())
            prm[idx] = orig
        numeric = (up - down) / (2 * h)
        errors.append((name, abs(analytic - numeric) / max(abs(analytic), abs(numeric))))
    return errors

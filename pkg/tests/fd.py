"""Central finite-difference oracle for parameter gradients."""

import torch


def max_relative_errors(model, loss_fn, h=1e-5):
    """Per-tensor ||analytic - numeric|| / max(||analytic||, ||numeric||) for a float64 model."""
    model.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone()
        numeric = torch.zeros_like(p)
        flat, nflat = p.data.view(-1), numeric.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * h)
        scale = max(analytic.norm().item(), numeric.norm().item())
        errors[name] = 0.0 if scale == 0 else (analytic - numeric).norm().item() / scale
    return errors

"""
utils functions
"""
import random

import numpy as np

from .exceptions import ConfigError, InvalidFold


def _check_random_state(random_state):
    if random_state is None or isinstance(random_state, (int, np.integer)):
        random_state = np.random.RandomState(random_state)
    elif isinstance(random_state, (list, tuple)):
        random_state = np.random.RandomState(list(random_state))
    elif not isinstance(random_state, np.random.RandomState):
        raise TypeError("random_state should be an int or a RandomState instance")

    return random_state


def _check_positive(name, value, strict=True):
    if not isinstance(value, (int, float, np.integer, np.floating)) or isinstance(value, bool):
        raise TypeError(f"{name} should be a number, got {type(value).__name__}")
    if value < 0 or (strict and value == 0):
        qualifier = "strictly positive" if strict else "positive"
        raise ValueError(f"{name} should be {qualifier}, got {value}")
    return value


def _check_probability(name, value):
    if not 0 <= value <= 1:
        raise ValueError(f"{name} should be between 0 and 1, got {value}")
    return float(value)


def _check_fold(fold):
    if isinstance(fold, bool) or not isinstance(fold, (int, np.integer)) or not 1 <= fold <= 5:
        raise InvalidFold(f"fold should be an integer in 1..5, got {fold!r}")
    return int(fold)


def _check_device(device=None):
    import torch

    if device is None:
        return torch.device("cpu")
    try:
        return torch.device(device)
    except RuntimeError as e:
        raise ConfigError(f"unknown device {device!r}") from e


def seed_everything(seed):
    """seed python, numpy and torch generators at once"""
    import torch

    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def gradient_check(func, parameters, eps=1e-6, max_entries=None, random_state=None, floor=1e-3):
    """
    Compare analytic gradients against central finite differences, entry by entry

    Parameters
    ----------
    func: callable
        takes no argument and returns a scalar tensor, deterministic
    parameters: iterable of torch.Tensor
        leaf tensors to perturb, preferably in double precision
    eps: float, default=1e-6
        perturbation step
    max_entries: int, default=None
        if set, check only this many randomly chosen entries per tensor
    random_state: int or RandomState, default=None
        used to draw entries when ``max_entries`` is set
    floor: float, default=1e-3
        fraction of the largest analytic gradient under which errors are
        no longer relative, for entries whose gradient cancels out

    Returns
    -------
    float
        largest relative error ``|g_a - g_n| / max(|g_a| + |g_n|, floor * max |g_a|)``
        over all checked entries

    Notes
    -----
    A ReLU switching inside ``[x - eps, x + eps]`` biases central differences.
    Entries with an error above ``1e-6`` are estimated again with a step
    a hundred times smaller, and the smaller error is kept.

    Examples
    --------
    >>> import torch
    >>> w = torch.tensor([1.0, -2.0], dtype=torch.float64, requires_grad=True)
    >>> gradient_check(lambda: (w ** 3).sum(), [w]) < 1e-8
    True
    """
    import torch

    rng = _check_random_state(random_state)
    parameters = list(parameters)
    for param in parameters:
        param.grad = None
    func().backward()

    checked = list()
    for param in parameters:
        flat = param.view(-1)
        grad = param.grad.view(-1) if param.grad is not None else torch.zeros_like(flat)
        entries = np.arange(flat.numel())
        if max_entries is not None and len(entries) > max_entries:
            entries = rng.choice(entries, max_entries, replace=False)
        checked.append((flat, grad.detach().cpu().numpy(), entries))
    scale = floor * max((np.abs(grad[entries]).max(initial=0) for _, grad, entries in checked), default=0)
    scale = max(scale, np.finfo(float).tiny)

    def _numeric(flat, k, step):
        orig = flat[k].item()
        flat[k] = orig + step
        plus = func().item()
        flat[k] = orig - step
        minus = func().item()
        flat[k] = orig
        return (plus - minus) / (2 * step)

    def _error(analytic, numeric):
        return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), scale)

    worst = 0.0
    with torch.no_grad():
        for flat, grad, entries in checked:
            for k in entries:
                err = _error(grad[k], _numeric(flat, k, eps))
                if err > 1e-6:
                    err = min(err, _error(grad[k], _numeric(flat, k, eps / 100)))
                worst = max(worst, err)
    return float(worst)

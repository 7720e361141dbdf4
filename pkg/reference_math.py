"""
Straight-line NumPy re-implementations used as test oracles for the network modules.
They read weights out of the torch modules but share no code path with them.
"""

from typing import Callable, Tuple

import numpy as np
import torch
from scipy.special import erf
from torch import nn


def weights_of(layer: nn.Linear) -> Tuple[np.ndarray, np.ndarray]:
    return layer.weight.detach().double().numpy(), layer.bias.detach().double().numpy()


def linear(x: np.ndarray, layer: nn.Linear) -> np.ndarray:
    w, b = weights_of(layer)
    return x @ w.T + b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def layer_norm(x: np.ndarray, norm: nn.LayerNorm) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    w = norm.weight.detach().double().numpy()
    b = norm.bias.detach().double().numpy()
    return (x - mean) / np.sqrt(var + norm.eps) * w + b


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def feed_forward(x: np.ndarray, ff) -> np.ndarray:
    first, _, second = ff.net
    return linear(gelu(linear(x, first)), second)


def mha(query: np.ndarray, key: np.ndarray, value: np.ndarray, attn) -> Tuple[np.ndarray, np.ndarray]:
    """One (n, d) x (m, d) example, head by head"""
    q, k, v = linear(query, attn.q_proj), linear(key, attn.k_proj), linear(value, attn.v_proj)
    h, dh = attn.heads, attn.head_dim
    outputs, maps = [], []
    for i in range(h):
        cols = slice(i * dh, (i + 1) * dh)
        scores = q[:, cols] @ k[:, cols].T / np.sqrt(dh)
        weights = softmax(scores)
        maps.append(weights)
        outputs.append(weights @ v[:, cols])
    return linear(np.concatenate(outputs, axis=-1), attn.out_proj), np.stack(maps)


def central_difference(loss: Callable[[], float], tensor: torch.Tensor, step: float = 1e-3) -> np.ndarray:
    """Entrywise (loss(x + h) - loss(x - h)) / 2h, perturbing tensor in place and restoring it"""
    grad = np.zeros(tuple(tensor.shape))
    flat = tensor.detach().view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            up = loss()
            flat[i] = original - step
            down = loss()
            flat[i] = original
            grad.flat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm of the difference over the larger norm; gradients that vanish exactly (key biases) fall back to floor"""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_parameter_gradients(module: nn.Module, loss: Callable[[], torch.Tensor], prefixes, step: float = 1e-3,
                              tolerance: float = 1e-3) -> int:
    """
    Compare autograd against central differences for every parameter whose name equals or
    starts with one of prefixes. Returns the number of tensors checked.
    """
    module.zero_grad()
    loss().backward()
    checked = 0
    for name, p in module.named_parameters():
        if not any(name == prefix or name.startswith(prefix + ".") for prefix in prefixes):
            continue
        numeric = central_difference(lambda: float(loss()), p, step)
        error = relative_error(p.grad.detach().numpy(), numeric)
        assert error < tolerance, f"{name}: relative error {error:.2e}"
        checked += 1
    return checked

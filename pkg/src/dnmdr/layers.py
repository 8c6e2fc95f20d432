"""Graph attention and activation helpers shared by the patient and drug encoders."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

LEAKY_SLOPE = 0.2

ACTIVATIONS = {
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "elu": F.elu,
    "relu": torch.relu,
    "identity": lambda x: x,
}


def get_activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def uniform_(tensor: torch.Tensor, fan: int) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan)
    with torch.no_grad():
        return tensor.uniform_(-bound, bound)


def attention_coefficients(
    adjacency: torch.Tensor, z: torch.Tensor, attn: torch.Tensor, log_bias: bool = True
) -> torch.Tensor:
    """Row-stochastic attention over the support ``adjacency > 0``.

    Args:
        adjacency: ``(n, n)`` non-negative edge weights; the diagonal must be positive.
        z: ``(n, dim)`` transformed node features.
        attn: ``(heads, 2 * dim)`` attention vectors, source half first.
        log_bias: add ``log(adjacency)`` to the logits so edge weights
            modulate attention. Binary adjacencies are unaffected.

    Returns:
        ``(heads, n, n)`` attention weights.
    """
    dim = z.shape[1]
    src = z @ attn[:, :dim].T  # (n, heads)
    dst = z @ attn[:, dim:].T
    logits = F.leaky_relu(src.T[:, :, None] + dst.T[:, None, :], LEAKY_SLOPE)
    support = adjacency > 0
    if log_bias:
        logits = logits + torch.log(torch.where(support, adjacency, torch.ones_like(adjacency)))
    logits = logits.masked_fill(~support, float("-inf"))
    return torch.softmax(logits, dim=-1)


def gat_layer(
    adjacency: torch.Tensor,
    h: torch.Tensor,
    weight: torch.Tensor,
    attn: torch.Tensor,
    activation=torch.tanh,
    log_bias: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """One graph-attention layer; heads share ``weight`` and are averaged.

    Node features are rows, so the transform is ``h @ weight``.
    Returns the new features and the attention tensor.
    """
    z = h @ weight
    alpha = attention_coefficients(adjacency, z, attn, log_bias)
    out = (alpha @ z).mean(dim=0)
    return activation(out), alpha

"""Layers and probabilistic helpers built on :mod:`vpet.autodiff.tensor`."""
from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LOG_SIGMA_MIN = -8.0
LOG_SIGMA_MAX = 4.0

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": T.relu,
    "tanh": T.tanh,
    "softplus": T.softplus,
}


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Parameter container; parameters are found by walking attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing parameter {key!r}")
            arr = np.asarray(state[key], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter {key!r}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        self.weight = param(np.zeros((n_in, n_out)) if zero else kaiming_uniform(rng, n_in, (n_in, n_out)))
        self.bias = param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear expects {self.weight.shape[0]} features, got shape {x.shape}")
        if x.ndim == 1:
            return T.reshape(T.matmul(T.reshape(x, (1, -1)), self.weight), (-1,)) + self.bias
        return T.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Affine layers with an activation between them; the last layer is linear."""

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
        zero_last: bool = False,
    ):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.activation = activation
        n = len(widths) - 1
        self.layers = [
            Linear(widths[i], widths[i + 1], rng, zero=zero_last and i == n - 1) for i in range(n)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
        return x


def mlp_forward(mlp: MLP, x: Tensor) -> Tensor:
    return mlp(x)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3):
        self.weight = param(kaiming_uniform(rng, c_in * kernel, (kernel, c_in, c_out)))
        self.bias = param(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


# ---------------------------------------------------------------------------
# embeddings


def fourier_embed(x, num_freqs: int) -> Tensor:
    """Per scalar: ``[x, sin(2^k pi x), cos(2^k pi x)]`` for ``k < num_freqs``.

    Output layout along the last axis is ``[x | sin block | cos block]``, each
    block ordered frequency-major, so the width is ``d * (2K + 1)``.
    """
    if num_freqs < 1:
        raise ValueError("num_freqs must be >= 1")
    x = T.as_tensor(x)
    freqs = (2.0 ** np.arange(num_freqs)) * np.pi
    # (..., d) -> (..., K, d) -> (..., K*d)
    scaled = T.mul(T.reshape(x, x.shape[:-1] + (1, x.shape[-1])), freqs[:, None])
    scaled = T.reshape(scaled, x.shape[:-1] + (num_freqs * x.shape[-1],))
    return T.concat([x, T.sin(scaled), T.cos(scaled)], axis=-1)


def fourier_dim(d: int, num_freqs: int) -> int:
    return d * (2 * num_freqs + 1)


def time_embeddings(n_steps: int, dim: int = 128) -> Tensor:
    """Fixed sinusoidal table; row ``t`` is ``[sin(t w_0), cos(t w_0), ...]``."""
    if n_steps < 1:
        raise ValueError("need at least one time step")
    t = np.arange(n_steps, dtype=np.float64)[:, None]
    omega = 1.0 / (10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((n_steps, dim))
    table[:, 0::2] = np.sin(t * omega)
    table[:, 1::2] = np.cos(t * omega)
    return Tensor(table)


# ---------------------------------------------------------------------------
# Gaussian latent helpers


def clamp_log_sigma(log_sigma: Tensor) -> Tensor:
    return T.clamp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)


def sample_noise(shape, noise_seed) -> np.ndarray:
    rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
    return rng.standard_normal(shape)


def reparameterize(mu: Tensor, log_sigma: Tensor, noise_seed=None, eps: np.ndarray | None = None) -> Tensor:
    """``mu + exp(log_sigma) * eps`` with ``eps`` held constant for backward."""
    mu, log_sigma = T.as_tensor(mu), T.as_tensor(log_sigma)
    if mu.shape != log_sigma.shape:
        raise ShapeError(f"reparameterize: mu {mu.shape} vs log_sigma {log_sigma.shape}")
    if eps is None:
        eps = sample_noise(mu.shape, noise_seed)
    return mu + T.exp(log_sigma) * eps


def kl_diag_gaussian(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """``KL(N(mu, sigma^2) || N(0, I))`` summed over the last axis, averaged over the rest."""
    mu, log_sigma = T.as_tensor(mu), T.as_tensor(log_sigma)
    if mu.shape != log_sigma.shape:
        raise ShapeError(f"kl: mu {mu.shape} vs log_sigma {log_sigma.shape}")
    terms = T.square(mu) + T.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma
    per_row = 0.5 * T.tsum(terms, axis=-1)
    return T.mean(per_row)

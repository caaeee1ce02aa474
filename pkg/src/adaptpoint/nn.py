"""Neural building blocks on top of the autograd layer.

Modules register parameters and submodules through attribute assignment, so
`named_parameters()` yields dotted paths ("pe.layers.0.w") that double as
checkpoint keys. All initialization flows through an explicit numpy
Generator; construction order is fixed, hence fully reproducible.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """A leaf tensor updated by an optimizer; named when owned by a Module."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.requires_grad = True  # parameters track gradients even under no_grad construction
        self.name = name


class Module:
    def __setattr__(self, key, value):
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            path = f"{prefix}{key}" if prefix else key
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.named_parameters(prefix=prefix):
            if name in out:
                raise ValueError(f"duplicate parameter name {name!r}")
            out[name] = p.data.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        own = dict(self.named_parameters(prefix=prefix))
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    """Affine map x @ w + b. init: 'normal' (std 1/sqrt(fan_in) * gain) or 'zeros'."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "normal", gain: float = 1.0):
        if init == "zeros":
            w = np.zeros((n_in, n_out))
        elif init == "normal":
            w = rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ag.matmul(x, self.w)
        if self.b is not None:
            out = out + self.b
        return out


class MLP(Module):
    """Stack of Linear layers with relu between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator,
                 final_init: str = "normal", final_gain: float = 1.0):
        layers = []
        for i in range(len(widths) - 1):
            last = i == len(widths) - 2
            layers.append(Linear(widths[i], widths[i + 1], rng,
                                 init=final_init if last else "normal",
                                 gain=final_gain if last else 1.0))
        self.layers = layers

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x


class LayerNorm(Module):
    """Normalize over the last axis, then scale/shift (gamma, beta)."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / ag.sqrt(var + self.eps)
        return normed * self.gamma + self.beta


class MultiHeadAttention(Module):
    """Self-attention over a token set with a learned positional embedding.

    Positions (raw xyz) pass through a 2-layer MLP and are added to the tokens
    before the Q/K/V projections; the block ends with a residual connection
    and layer norm. Token count may vary between calls; the channel width C
    must be divisible by the head count.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ValueError(f"channel width {dim} not divisible by heads={heads}")
        self.dim = dim
        self.heads = heads
        self.pe = MLP([3, dim, dim], rng)
        self.wq = Linear(dim, dim, rng, bias=False)
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng, bias=False)
        self.wo = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)

    def __call__(self, tokens: Tensor, positions: np.ndarray) -> Tensor:
        """Tokens (T, C) with positions (T, 3), or batched (B, T, C) / (B, T, 3).

        Attention never crosses the batch axis: each batch row is its own
        token set. Projections run over all rows at once; the quadratic
        attention core runs per sample so the T*T score matrices stay small.
        """
        pos = positions.data if isinstance(positions, Tensor) else np.asarray(positions, dtype=np.float64)
        single = tokens.data.ndim == 2
        if single:
            b, (t, c) = 1, tokens.data.shape
        else:
            b, t, c = tokens.data.shape
        x = tokens.reshape(b * t, c) + self.pe(Tensor(pos.reshape(-1, 3)))
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        hd = self.dim // self.heads
        scale = 1.0 / np.sqrt(hd)
        outs = []
        for i in range(b):
            rows = slice(i * t, (i + 1) * t)
            qh = ag.swap_axes(q[rows, :].reshape(t, self.heads, hd), 0, 1)
            kh = ag.swap_axes(k[rows, :].reshape(t, self.heads, hd), 0, 1)
            vh = ag.swap_axes(v[rows, :].reshape(t, self.heads, hd), 0, 1)
            attn = ag.softmax(ag.matmul(qh, ag.swap_axes(kh, 1, 2)) * scale, axis=-1)
            outs.append(ag.swap_axes(ag.matmul(attn, vh), 0, 1).reshape(t, c))
        merged = outs[0] if b == 1 else ag.concat(outs, axis=0)
        out = self.norm(x + self.wo(merged))
        return out if single else out.reshape(b, t, c)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ag.matmul(x, w)
    return out if b is None else out + b


def sample_gumbel(shape, rng: np.random.Generator, eps: float = 1e-12) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + eps) + eps)


def gumbel_softmax(
    logits: Tensor,
    tau: float,
    hard: bool,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Gumbel-softmax rows: y = softmax((logits + G) / tau).

    hard=True emits exact one-hot rows forward while the backward pass uses
    the soft distribution (straight-through). Pass `noise` to freeze the
    Gumbel draws (e.g. for finite-difference checks).
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = ag.as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or frozen noise must be provided")
        noise = sample_gumbel(logits.data.shape, rng)
    soft = ag.softmax((logits + Tensor(noise)) * (1.0 / tau), axis=-1)
    if not hard:
        return soft
    idx = np.argmax(soft.data, axis=-1)
    hard_values = np.zeros_like(soft.data)
    np.put_along_axis(hard_values, idx[..., None], 1.0, axis=-1)
    return ag.straight_through(soft, hard_values)


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """-log softmax(logits)[label]: batch mean, or per-row with reduction='none'."""
    logits = ag.as_tensor(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be (B, K), got {logits.data.shape}")
    b, k = logits.data.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != b:
        raise ValueError(f"expected {b} labels, got {labels.shape[0]}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))  # constant shift, exact gradient
    z = logits - shift
    log_norm = ag.log(ag.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    picked = log_probs[np.arange(b), labels]
    if reduction == "none":
        return -picked
    if reduction == "mean":
        return -picked.mean()
    raise ValueError(f"unknown reduction {reduction!r}")

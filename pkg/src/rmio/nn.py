"""Network building blocks: parameters, layers, latent distributions,
the Adam optimizer, and the binary parameter-checkpoint format.

Everything is float64 and agent-shape agnostic: layers operate on the
last axis and broadcast over any leading batch/agent axes.
"""

from __future__ import annotations

import struct
from typing import Iterable, Iterator

import numpy as np

from rmio import autodiff as ad
from rmio.autodiff import Tensor
from rmio.errors import CheckpointError, DimensionError, NumericError

ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "elu": ad.elu}


class Parameter(Tensor):
    """Learnable leaf tensor with a permanently allocated gradient buffer."""

    def __init__(self, values: np.ndarray):
        super().__init__(np.array(values, dtype=np.float64), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self._is_param = True


class Module:
    """Parameter container; children are discovered by attribute scan."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix=f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(prefix=f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise CheckpointError(f"checkpoint is missing parameters: {missing}")
        for name, p in params.items():
            a = arrays[name]
            if a.shape != p.data.shape:
                raise CheckpointError(
                    f"parameter {name!r}: checkpoint width {a.shape} does not match "
                    f"configured width {p.data.shape}"
                )
            p.data[...] = a


def copy_state(module: Module) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in module.state_arrays().items()}


def restore_state(module: Module, snapshot: dict[str, np.ndarray]) -> None:
    for name, p in module.named_parameters().items():
        p.data[...] = snapshot[name]


def soft_update(dst: Module, src: Module, tau: float) -> None:
    """Polyak step: dst <- (1 - tau) * dst + tau * src."""
    src_params = src.named_parameters()
    for name, p in dst.named_parameters().items():
        p.data *= 1.0 - tau
        p.data += tau * src_params[name].data


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(glorot(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(
                f"linear layer expects width {self.in_dim}, got {x.shape[-1]}"
            )
        return ad.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Fully connected stack; `activation` is applied between layers only."""

    def __init__(self, sizes: Iterable[int], activation: str, rng: np.random.Generator):
        sizes = list(sizes)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        self.activation = activation
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes, sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if x.shape[-1] != layer.in_dim:
                raise DimensionError(
                    f"mlp layer {i} expects width {layer.in_dim}, got {x.shape[-1]}"
                )
            x = layer(x)
            if i != last:
                x = act(x)
        return x


def mlp_forward(x: Tensor, layers: Iterable[Linear], activation: str) -> Tensor:
    """Apply a stack of linear layers with `activation` after each one."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
    act = ACTIVATIONS[activation]
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    for i, layer in enumerate(layers):
        if x.shape[-1] != layer.in_dim:
            raise DimensionError(
                f"mlp layer {i} expects width {layer.in_dim}, got {x.shape[-1]}"
            )
        x = act(layer(x))
    return x


class GRUCell(Module):
    """Standard GRU update; `h_new = z * h_prev + (1 - z) * candidate`."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_reset = Parameter(glorot(rng, input_dim, hidden_dim))
        self.u_reset = Parameter(glorot(rng, hidden_dim, hidden_dim))
        self.b_reset = Parameter(np.zeros(hidden_dim))
        self.w_update = Parameter(glorot(rng, input_dim, hidden_dim))
        self.u_update = Parameter(glorot(rng, hidden_dim, hidden_dim))
        self.b_update = Parameter(np.zeros(hidden_dim))
        self.w_cand = Parameter(glorot(rng, input_dim, hidden_dim))
        self.u_cand = Parameter(glorot(rng, hidden_dim, hidden_dim))
        self.b_cand = Parameter(np.zeros(hidden_dim))

    def step(self, h_prev: Tensor, x: Tensor) -> Tensor:
        if h_prev.shape[-1] != self.hidden_dim:
            raise DimensionError(
                f"gru hidden width {self.hidden_dim} expected, got {h_prev.shape[-1]}"
            )
        if x.shape[-1] != self.input_dim:
            raise DimensionError(
                f"gru input width {self.input_dim} expected, got {x.shape[-1]}"
            )
        r = ad.sigmoid(ad.matmul(x, self.w_reset) + ad.matmul(h_prev, self.u_reset) + self.b_reset)
        z = ad.sigmoid(ad.matmul(x, self.w_update) + ad.matmul(h_prev, self.u_update) + self.b_update)
        cand = ad.tanh(ad.matmul(x, self.w_cand) + ad.matmul(r * h_prev, self.u_cand) + self.b_cand)
        return z * h_prev + (1.0 - z) * cand


class SelfAttention(Module):
    """Multi-head scaled dot-product attention over the second-to-last axis."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise DimensionError(f"token width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        *lead, n, _ = x.shape
        dk = self.dim // self.heads
        x = ad.reshape(x, tuple(lead) + (n, self.heads, dk))
        return ad.swapaxes(x, -3, -2)  # (..., heads, n, dk)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.ndim < 2 or tokens.shape[-2] < 1:
            raise ValueError("attention requires at least one token")
        if tokens.shape[-1] != self.dim:
            raise DimensionError(
                f"attention token width {self.dim} expected, got {tokens.shape[-1]}"
            )
        *lead, n, d = tokens.shape
        dk = self.dim // self.heads
        q = self._split_heads(self.q_proj(tokens))
        k = self._split_heads(self.k_proj(tokens))
        v = self._split_heads(self.v_proj(tokens))
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
        weights = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(weights, v)  # (..., heads, n, dk)
        mixed = ad.swapaxes(mixed, -3, -2)
        mixed = ad.reshape(mixed, tuple(lead) + (n, d))
        return self.out_proj(mixed)

    def attention_weights(self, tokens: Tensor) -> np.ndarray:
        """Per-head attention matrix (..., heads, n, n); diagnostic only."""
        with ad.no_grad():
            q = self._split_heads(self.q_proj(tokens))
            k = self._split_heads(self.k_proj(tokens))
            dk = self.dim // self.heads
            scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
            return ad.softmax(scores, axis=-1).data


# -- latent distributions -------------------------------------------------


class DiagonalGaussian:
    """Gaussian with diagonal covariance, reparameterized sampling."""

    kind = "diagonal-gaussian"

    def __init__(self, mean: Tensor, log_std: Tensor):
        self.mean = ad.as_tensor(mean)
        self.log_std = ad.as_tensor(log_std)

    @property
    def width(self) -> int:
        return self.mean.shape[-1]

    def _check_finite(self) -> None:
        if not (np.isfinite(self.mean.data).all() and np.isfinite(self.log_std.data).all()):
            raise NumericError("gaussian latent has non-finite parameters")

    def sample(self, rng: np.random.Generator) -> Tensor:
        self._check_finite()
        noise = rng.standard_normal(self.mean.shape)
        return self.mean + ad.exp(self.log_std) * noise

    def mode(self) -> Tensor:
        self._check_finite()
        return self.mean

    def log_prob(self, x) -> Tensor:
        x = ad.as_tensor(x).detach()
        z = (x - self.mean) * ad.exp(-self.log_std)
        per_dim = -0.5 * (z * z) - self.log_std - 0.5 * np.log(2.0 * np.pi)
        return ad.tsum(per_dim, axis=-1)

    def entropy(self) -> Tensor:
        return ad.tsum(self.log_std + 0.5 * (1.0 + np.log(2.0 * np.pi)), axis=-1)

    def kl(self, other: "DiagonalGaussian") -> Tensor:
        var_ratio = ad.exp(2.0 * (self.log_std - other.log_std))
        delta = (self.mean - other.mean) * ad.exp(-other.log_std)
        per_dim = other.log_std - self.log_std + 0.5 * (var_ratio + delta * delta) - 0.5
        return ad.tsum(per_dim, axis=-1)


class GroupedCategorical:
    """Mixture of independent categoricals (groups x classes); sampling is
    straight-through: one-hot forward, softmax gradients backward."""

    kind = "categorical-mixture"

    def __init__(self, logits: Tensor):
        logits = ad.as_tensor(logits)
        if logits.ndim < 2:
            raise DimensionError("categorical logits need shape (..., groups, classes)")
        self.logits = logits

    @property
    def groups(self) -> int:
        return self.logits.shape[-2]

    @property
    def classes(self) -> int:
        return self.logits.shape[-1]

    @property
    def width(self) -> int:
        return self.groups * self.classes

    def _check_finite(self) -> None:
        if not np.isfinite(self.logits.data).all():
            raise NumericError("categorical latent has non-finite logits")

    def probs(self) -> Tensor:
        return ad.softmax(self.logits, axis=-1)

    def _flatten(self, one_hot: np.ndarray, probs: Tensor) -> Tensor:
        st = (probs - probs.detach()) + one_hot  # forward exactly one-hot, backward softmax
        *lead, g, c = st.shape
        return ad.reshape(st, tuple(lead) + (g * c,))

    def sample(self, rng: np.random.Generator) -> Tensor:
        self._check_finite()
        probs = self.probs()
        cdf = np.cumsum(probs.data, axis=-1)
        u = rng.random(self.logits.shape[:-1] + (1,))
        idx = (u > cdf).sum(axis=-1, keepdims=True)
        idx = np.minimum(idx, self.classes - 1)
        one_hot = np.zeros_like(probs.data)
        np.put_along_axis(one_hot, idx, 1.0, axis=-1)
        return self._flatten(one_hot, probs)

    def mode(self) -> Tensor:
        self._check_finite()
        probs = self.probs()
        idx = probs.data.argmax(axis=-1)[..., None]
        one_hot = np.zeros_like(probs.data)
        np.put_along_axis(one_hot, idx, 1.0, axis=-1)
        return self._flatten(one_hot, probs)

    def kl(self, other: "GroupedCategorical") -> Tensor:
        lp = ad.log_softmax(self.logits, axis=-1)
        lq = ad.log_softmax(other.logits, axis=-1)
        return ad.tsum(ad.exp(lp) * (lp - lq), axis=(-2, -1))


StochasticLatent = DiagonalGaussian | GroupedCategorical


def latent_sample(dist: StochasticLatent, rng) -> Tensor:
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return dist.sample(rng)


def latent_kl(posterior: StochasticLatent, prior: StochasticLatent) -> Tensor:
    if type(posterior) is not type(prior):
        raise ValueError(
            f"latent kind mismatch: {posterior.kind} vs {prior.kind}"
        )
    return posterior.kl(prior)


# -- optimizer -------------------------------------------------------------


class Adam:
    """Adam with bias correction and optional global gradient-norm clipping."""

    def __init__(
        self,
        named_params: dict[str, Parameter],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = 100.0,
    ):
        self.names = list(named_params)
        self.params = [named_params[n] for n in self.names]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for name, p in zip(self.names, self.params):
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in parameter {name!r}")
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.params))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                for p in self.params:
                    p.grad *= scale
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {n: m.copy() for n, m in zip(self.names, self.m)},
            "v": {n: v.copy() for n, v in zip(self.names, self.v)},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.array(state["m"][n], dtype=np.float64) for n in self.names]
        self.v = [np.array(state["v"][n], dtype=np.float64) for n in self.names]


# -- checkpoint format ------------------------------------------------------

_CKPT_MAGIC = b"RMIOPAR\x00"
_CKPT_VERSION = 1


def save_parameters(path, arrays: dict[str, np.ndarray]) -> None:
    """Write a self-describing (name, shape, float64 row-major) container."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
            fh.write(arr.tobytes())


def load_parameters(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    off = len(_CKPT_MAGIC)
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            out[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out

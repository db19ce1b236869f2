"""Dense ReLU network with softmax cross-entropy, parameters held in a ParamStore."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamStore
from .rng import rng_for


class DivergenceError(FloatingPointError):
    """Loss became non-finite or exploded."""


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_widths) < 2 or any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"need >= 2 positive widths, got {self.layer_widths}")

    @classmethod
    def parse(cls, arch: str) -> "MlpSpec":
        """'784x32x10' -> MlpSpec((784, 32, 10))."""
        try:
            return cls(tuple(int(w) for w in arch.lower().split("x")))
        except ValueError as exc:
            raise ValueError(f"bad architecture {arch!r}: {exc}") from None

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def arch(self) -> str:
        return "x".join(map(str, self.layer_widths))


def layer_names(spec: MlpSpec) -> list[tuple[str, tuple[int, ...], str]]:
    out = []
    for k in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[k], spec.layer_widths[k + 1]
        out.append((f"fc{k}.weight", (fan_in, fan_out), f"fc{k}"))
        out.append((f"fc{k}.bias", (fan_out,), f"fc{k}"))
    return out


def init_params(spec: MlpSpec, seed: int) -> ParamStore:
    """Uniform(+-1/sqrt(fan_in)) weights and biases; bias shares its layer's group."""
    rng = rng_for(seed, "mlp.init")
    layers, groups = [], []
    for name, shape, group in layer_names(spec):
        bound = 1.0 / np.sqrt(spec.layer_widths[int(group[2:])])
        layers.append((name, shape, rng.uniform(-bound, bound, size=shape)))
        groups.append(group)
    return ParamStore(layers, groups)


def spec_from_shapes(shapes) -> MlpSpec:
    """Recover the architecture from (weight, bias) layer shapes."""
    shapes = [tuple(s) for s in shapes]
    if len(shapes) % 2 or not shapes:
        raise ValueError("expected alternating weight/bias shapes")
    widths = [shapes[0][0]]
    for w, b in zip(shapes[0::2], shapes[1::2]):
        if len(w) != 2 or b != (w[1],) or w[0] != widths[-1]:
            raise ValueError(f"inconsistent layer shapes {w} / {b}")
        widths.append(w[1])
    return MlpSpec(tuple(widths))


def _weights(spec: MlpSpec, flat: np.ndarray):
    pos = 0
    out = []
    for k in range(spec.n_layers):
        fi, fo = spec.layer_widths[k], spec.layer_widths[k + 1]
        W = flat[pos : pos + fi * fo].reshape(fi, fo)
        pos += fi * fo
        b = flat[pos : pos + fo]
        pos += fo
        out.append((W, b))
    return out


def _flat(params) -> np.ndarray:
    return params.flat if isinstance(params, ParamStore) else np.asarray(params, dtype=np.float64)


def logits(spec: MlpSpec, params, x: np.ndarray) -> np.ndarray:
    h = x
    layers = _weights(spec, _flat(params))
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_accuracy(spec: MlpSpec, params, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    z = logits(spec, params, x)
    logp = _log_softmax(z)
    loss = float(-logp[np.arange(len(y)), y].mean())
    acc = float((z.argmax(axis=1) == y).mean())
    return loss, acc


def forward_backward(spec: MlpSpec, params, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient (flat, store order)."""
    flat = _flat(params)
    layers = _weights(spec, flat)
    acts = [x]
    h = x
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    logp = _log_softmax(acts[-1])
    m = len(y)
    loss = float(-logp[np.arange(m), y].mean())
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")

    delta = np.exp(logp)
    delta[np.arange(m), y] -= 1.0
    delta /= m
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((acts[k].T @ delta, delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ W.T) * (acts[k] > 0)
    grads.reverse()
    return loss, np.concatenate([np.concatenate([gW.reshape(-1), gb]) for gW, gb in grads])

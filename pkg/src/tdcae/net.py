"""Minimal dense feed-forward engine: exact backprop, Adamax, Jacobians.

Everything is float64. The autoencoder this was sized for is the hourglass
24-24-24-8-24-24-24 (6 dense layers, tanh hidden and latent, identity
output), but the engine is shape-agnostic so tests can run micro-nets.

The latent layer of an hourglass network is located structurally: it is the
unique narrowest layer output. Its vector is interpreted as state/derivative
channel pairs: entry i is a state z_i, entry i + n/2 its derivative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "identity")


class CacheMismatchError(ValueError):
    """Backward called with a cache that does not match the parameters."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    """Ordered dense layers: weight matrices [out x in] and bias vectors [out]."""

    specs: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if not (len(self.specs) == len(self.weights) == len(self.biases)):
            raise ValueError("specs/weights/biases length mismatch")
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ValueError(f"parameter shape mismatch for spec {spec}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameter entries")
        for prev, cur in zip(self.specs, self.specs[1:]):
            if prev.out_dim != cur.in_dim:
                raise ValueError("consecutive layers are dimension-incompatible")

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    @property
    def input_dim(self) -> int:
        return self.specs[0].in_dim

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            specs=list(self.specs),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def autoencoder_specs(input_dim: int = 24, hidden_dim: int = 24, latent_dim: int = 8,
                      n_hidden: int = 2) -> list[LayerSpec]:
    """Hourglass layer specs, e.g. defaults give 24-24-24-8-24-24-24.

    Hidden and latent layers use tanh; the output layer is identity so that
    reconstructions of out-of-range (degraded) inputs are not clipped.
    """
    dims = [input_dim] + [hidden_dim] * n_hidden + [latent_dim] + [hidden_dim] * n_hidden + [input_dim]
    specs = [LayerSpec(a, b, "tanh") for a, b in zip(dims[:-2], dims[1:-1])]
    specs.append(LayerSpec(dims[-2], dims[-1], "identity"))
    return specs


def encoder_layer_count(params: NetworkParams) -> int:
    """Number of layers up to and including the (unique) bottleneck."""
    out_dims = [s.out_dim for s in params.specs]
    narrowest = min(out_dims)
    if out_dims.count(narrowest) != 1:
        raise ValueError("network has no unique bottleneck layer")
    return out_dims.index(narrowest) + 1


def latent_dim(params: NetworkParams) -> int:
    return params.specs[encoder_layer_count(params) - 1].out_dim


def init_params(specs: list[LayerSpec], rng: np.random.Generator) -> NetworkParams:
    """Glorot-uniform weights (scale-balanced for tanh), zero biases."""
    weights, biases = [], []
    for spec in specs:
        limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim)))
        biases.append(np.zeros(spec.out_dim))
    return NetworkParams(specs=specs, weights=weights, biases=biases)


@dataclass
class ForwardCache:
    """Post-activations per layer (index 0 is the input), kept 2-D [B x dim]."""

    activations: list[np.ndarray]
    n_layers: int
    squeeze: bool


def forward(params: NetworkParams, x: np.ndarray,
            n_layers: int | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Run the first n_layers (default all) on x, which may be [d] or [B x d].

    Returns (output, cache); the cache feeds backward(). tanh derivatives are
    recovered from post-activations, so pre-activations are not stored.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != network input dim {params.input_dim}")
    n_layers = params.n_layers if n_layers is None else n_layers
    if not 1 <= n_layers <= params.n_layers:
        raise ValueError("n_layers out of range")

    activations = [x]
    y = x
    for spec, w, b in zip(params.specs[:n_layers], params.weights, params.biases):
        pre = y @ w.T + b
        y = np.tanh(pre) if spec.activation == "tanh" else pre
        activations.append(y)
    cache = ForwardCache(activations=activations, n_layers=n_layers, squeeze=squeeze)
    return (y[0] if squeeze else y), cache


def _check_cache(params: NetworkParams, cache: ForwardCache) -> None:
    if len(cache.activations) != cache.n_layers + 1:
        raise CacheMismatchError("cache layer count inconsistent")
    if cache.activations[0].shape[1] != params.input_dim:
        raise CacheMismatchError("cache input dim does not match parameters")
    for spec, act in zip(params.specs[: cache.n_layers], cache.activations[1:]):
        if act.shape[1] != spec.out_dim:
            raise CacheMismatchError("cache activation shape does not match parameters")


def zero_grads(params: NetworkParams) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]


def add_grads(acc, extra):
    for (gw, gb), (ew, eb) in zip(acc, extra):
        gw += ew
        gb += eb
    return acc


def backward(params: NetworkParams, cache: ForwardCache, output_grad: np.ndarray,
             inject: dict[int, np.ndarray] | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact reverse-mode gradients for the layers covered by the cache.

    output_grad is dLoss/d(post-activation of the last cached layer), shaped
    like that activation. inject optionally adds extra gradient at other
    layers' post-activations (key = 0-based layer index), which is how a
    loss on the latent layer of a full autoencoder pass is wired in.
    Uncached (decoder) layers get zero gradients so results accumulate.
    """
    _check_cache(params, cache)
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze and output_grad.ndim == 1:
        output_grad = output_grad[None, :]
    if output_grad.shape != cache.activations[cache.n_layers].shape:
        raise CacheMismatchError("output_grad shape does not match cached output")

    grads = zero_grads(params)
    delta = output_grad
    for l in range(cache.n_layers - 1, -1, -1):
        if inject and l in inject:
            delta = delta + inject[l]
        y = cache.activations[l + 1]
        if params.specs[l].activation == "tanh":
            pre_grad = delta * (1.0 - y * y)
        else:
            pre_grad = delta
        grads[l] = (pre_grad.T @ cache.activations[l], pre_grad.sum(axis=0))
        delta = pre_grad @ params.weights[l]
    return grads


def encode(params: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encoder-only pass split into (state z, derivative z_dot) halves.

    The latent pairing is (i, i + n/2); an odd latent width is a
    configuration error.
    """
    n_enc = encoder_layer_count(params)
    n = latent_dim(params)
    if n % 2 != 0:
        raise ValueError(f"latent dimension {n} must be even to form state-derivative pairs")
    latent, _ = forward(params, x, n_layers=n_enc)
    half = n // 2
    return latent[..., :half], latent[..., half:]


def encoder_jacobian(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian [n x k] of the encoder at x, by forward-mode propagation."""
    n_enc = encoder_layer_count(params)
    J = encoder_jacobian_batch(params, np.asarray(x, dtype=np.float64)[None, :], n_enc)
    return J[0]


def encoder_jacobian_batch(params: NetworkParams, x: np.ndarray,
                           n_layers: int | None = None) -> np.ndarray:
    """Jacobians for a batch of inputs, [B x n x k]."""
    x = np.asarray(x, dtype=np.float64)
    n_layers = encoder_layer_count(params) if n_layers is None else n_layers
    _, cache = forward(params, x, n_layers=n_layers)
    B, k = x.shape
    J = np.broadcast_to(np.eye(k), (B, k, k)).copy()
    for l in range(n_layers):
        J = np.einsum("oi,bij->boj", params.weights[l], J)
        if params.specs[l].activation == "tanh":
            y = cache.activations[l + 1]
            J = J * (1.0 - y * y)[:, :, None]
    return J


# --- Adamax ------------------------------------------------------------------

@dataclass
class AdamaxState:
    """First-moment and infinity-norm accumulators per parameter tensor."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    u: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def init_adamax(params: NetworkParams, learning_rate: float = 0.003,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamaxState:
    state = AdamaxState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)
    state.m = zero_grads(params)
    state.u = zero_grads(params)
    return state


def adamax_step(params: NetworkParams, grads, state: AdamaxState) -> tuple[NetworkParams, AdamaxState]:
    """One Adamax update, in place:

        m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|)
        theta <- theta - lr/(1 - b1^t) * m / (u + eps)

    Non-finite gradients reject the step before any state is touched.
    """
    for gw, gb in grads:
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ValueError("non-finite gradient; step rejected")
    state.step_count += 1
    correction = 1.0 - state.beta1**state.step_count
    scale = state.learning_rate / correction
    for i, (gw, gb) in enumerate(grads):
        mw, mb = state.m[i]
        uw, ub = state.u[i]
        mw *= state.beta1
        mw += (1.0 - state.beta1) * gw
        mb *= state.beta1
        mb += (1.0 - state.beta1) * gb
        np.maximum(state.beta2 * uw, np.abs(gw), out=uw)
        np.maximum(state.beta2 * ub, np.abs(gb), out=ub)
        params.weights[i] -= scale * mw / (uw + state.eps)
        params.biases[i] -= scale * mb / (ub + state.eps)
    return params, state


# --- checkpoint format --------------------------------------------------------

CHECKPOINT_FORMAT = "tdcae-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_payload(params: NetworkParams, seed: int | None = None,
                       scaler=None, split=None, training_config: dict | None = None) -> dict:
    """JSON-serializable checkpoint. Floats round-trip exactly via repr."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "specs": [[s.in_dim, s.out_dim, s.activation] for s in params.specs],
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "seed": seed,
        "scaler": None,
        "split": None,
        "training_config": training_config,
    }
    if scaler is not None:
        payload["scaler"] = {"min": scaler.minimum.tolist(), "max": scaler.maximum.tolist()}
    if split is not None:
        payload["split"] = {
            "train_engines": sorted(split.train_engines),
            "test_engines": sorted(split.test_engines),
            "val_fraction": split.val_fraction,
        }
    return payload


def save_checkpoint(path: str | Path, params: NetworkParams, **kwargs) -> None:
    from .dataio import atomic_write_text

    atomic_write_text(path, json.dumps(checkpoint_payload(params, **kwargs), indent=1))


def load_checkpoint(path: str | Path) -> dict:
    """Load a checkpoint; returns a dict with 'params' plus stored metadata."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    specs = [LayerSpec(a, b, act) for a, b, act in payload["specs"]]
    params = NetworkParams(
        specs=specs,
        weights=[np.array(w, dtype=np.float64) for w in payload["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in payload["biases"]],
    )
    out = dict(payload)
    out["params"] = params
    if payload.get("scaler"):
        from .dataio import ScalerParams

        out["scaler"] = ScalerParams(
            minimum=np.array(payload["scaler"]["min"]),
            maximum=np.array(payload["scaler"]["max"]),
        )
    if payload.get("split"):
        from .dataio import DatasetSplit

        out["split"] = DatasetSplit(
            train_engines=frozenset(payload["split"]["train_engines"]),
            test_engines=frozenset(payload["split"]["test_engines"]),
            val_fraction=payload["split"]["val_fraction"],
        )
    return out

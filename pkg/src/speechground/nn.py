"""Minimal neural core: MLP and LSTM encoders with exact analytic gradients,
a bias-corrected Adam optimizer, and a step-decay learning-rate schedule.

Conventions
-----------
Weight matrices are stored (fan_in, fan_out) so a forward step is ``x @ W + b``
and works unchanged for a single vector ``(d,)`` or a batch ``(n, d)``.
Parameters are plain dicts of float64 arrays keyed by layer name; checkpoints
serialize them as float32 (see `containers`). Gradients returned by the
backward passes are exact reverse-mode derivatives of the forward code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .containers import read_container, write_container

ENCODER_MAGIC = b"SGENC01\n"

PROJECTION_DIM = 1024


class DimensionMismatchError(ValueError):
    """Input shape incompatible with the encoder's declared dims."""


class NonFiniteError(FloatingPointError):
    """NaN or infinity encountered where finite values are required."""


@dataclass(frozen=True)
class MlpSpec:
    """Two-hidden-layer ReLU network with a linear projection output."""

    input_dim: int
    hidden1: int = 2048
    hidden2: int = 1536
    output_dim: int = PROJECTION_DIM

    def __post_init__(self):
        for name in ("input_dim", "hidden1", "hidden2", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LstmSpec:
    """LSTM over per-frame features; the last `tail_states` hidden states are
    concatenated (zero-padded on the left for short sequences) and linearly
    projected to the output dimension."""

    input_dim: int
    hidden_dim: int = 64
    tail_states: int = 32
    output_dim: int = PROJECTION_DIM

    @property
    def concat_dim(self) -> int:
        return self.hidden_dim * self.tail_states

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "tail_states", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class EncoderParams:
    """One modality's projection network: architecture tag, dims, weights."""

    arch: str  # "mlp" | "lstm"
    dims: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.dims["input_dim"]

    @property
    def output_dim(self) -> int:
        return self.dims["output_dim"]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            arch=self.arch,
            dims=dict(self.dims),
            weights={k: v.copy() for k, v in self.weights.items()},
        )


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> EncoderParams:
    """He-style uniform fan-in init for the ReLU stack, zero biases."""
    weights = {
        "w1": _uniform(rng, spec.input_dim, (spec.input_dim, spec.hidden1)),
        "b1": np.zeros(spec.hidden1),
        "w2": _uniform(rng, spec.hidden1, (spec.hidden1, spec.hidden2)),
        "b2": np.zeros(spec.hidden2),
        "w3": _uniform(rng, spec.hidden2, (spec.hidden2, spec.output_dim)),
        "b3": np.zeros(spec.output_dim),
    }
    dims = {
        "input_dim": spec.input_dim,
        "hidden1": spec.hidden1,
        "hidden2": spec.hidden2,
        "output_dim": spec.output_dim,
    }
    return EncoderParams(arch="mlp", dims=dims, weights=weights)


def init_lstm(spec: LstmSpec, rng: np.random.Generator) -> EncoderParams:
    """Scaled-uniform init (1/sqrt(hidden)) for the recurrence, He-style for
    the projection head, zero biases."""
    h = spec.hidden_dim
    limit = 1.0 / np.sqrt(h)
    weights = {
        "wx": rng.uniform(-limit, limit, size=(spec.input_dim, 4 * h)),
        "wh": rng.uniform(-limit, limit, size=(h, 4 * h)),
        "b": np.zeros(4 * h),
        "wp": _uniform(rng, spec.concat_dim, (spec.concat_dim, spec.output_dim)),
        "bp": np.zeros(spec.output_dim),
    }
    dims = {
        "input_dim": spec.input_dim,
        "hidden_dim": h,
        "tail_states": spec.tail_states,
        "output_dim": spec.output_dim,
    }
    return EncoderParams(arch="lstm", dims=dims, weights=weights)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


def mlp_forward(params: EncoderParams, x: np.ndarray):
    """Project ``x`` through W3·relu(W2·relu(W1·x + b1) + b2) + b3.

    Accepts a single vector (d,) or a batch (n, d); the output matches.
    Returns (projection, cache) where the cache feeds `mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != params.dims["input_dim"]:
        raise DimensionMismatchError(
            f"expected input dim {params.dims['input_dim']}, got shape {x.shape}"
        )
    _check_finite(xb, "mlp input")
    w = params.weights
    z1 = xb @ w["w1"] + w["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w["w2"] + w["b2"]
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w["w3"] + w["b3"]
    cache = {"x": xb, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "single": single}
    return (out[0] if single else out), cache


def mlp_backward(params: EncoderParams, cache: dict, grad_out: np.ndarray):
    """Exact gradients of the MLP forward pass.

    Returns (grads, grad_input) with grads keyed like `params.weights`.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if cache["single"]:
        g = g[None, :]
    w = params.weights
    da2 = g @ w["w3"].T
    dz2 = da2 * (cache["z2"] > 0.0)
    da1 = dz2 @ w["w2"].T
    dz1 = da1 * (cache["z1"] > 0.0)
    grads = {
        "w3": cache["a2"].T @ g,
        "b3": g.sum(axis=0),
        "w2": cache["a1"].T @ dz2,
        "b2": dz2.sum(axis=0),
        "w1": cache["x"].T @ dz1,
        "b1": dz1.sum(axis=0),
    }
    dx = dz1 @ w["w1"].T
    return grads, (dx[0] if cache["single"] else dx)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_forward(params: EncoderParams, seq: np.ndarray):
    """Run the LSTM over a (T, input_dim) sequence and project the tail.

    Gate order in the stacked weights is input, forget, cell, output. The
    last `tail_states` hidden states are concatenated oldest-to-newest;
    sequences shorter than the tail are left-padded with zero states.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != params.dims["input_dim"]:
        raise DimensionMismatchError(
            f"expected sequence frames of dim {params.dims['input_dim']}, got shape {seq.shape}"
        )
    if seq.shape[0] == 0:
        raise ValueError("empty sequence")
    _check_finite(seq, "lstm input")
    w = params.weights
    h_dim = params.dims["hidden_dim"]
    tail = params.dims["tail_states"]
    T = seq.shape[0]

    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    steps = []
    hs = np.zeros((T, h_dim))
    for t in range(T):
        a = seq[t] @ w["wx"] + h @ w["wh"] + w["b"]
        i = _sigmoid(a[:h_dim])
        f = _sigmoid(a[h_dim : 2 * h_dim])
        g = np.tanh(a[2 * h_dim : 3 * h_dim])
        o = _sigmoid(a[3 * h_dim :])
        c_prev = c
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h_prev = h
        h = o * tanh_c
        hs[t] = h
        steps.append(
            {"x": seq[t], "h_prev": h_prev, "c_prev": c_prev, "i": i, "f": f,
             "g": g, "o": o, "tanh_c": tanh_c}
        )

    concat = np.zeros(tail * h_dim)
    n_real = min(T, tail)
    concat[(tail - n_real) * h_dim :] = hs[T - n_real :].ravel()
    out = concat @ w["wp"] + w["bp"]
    cache = {"steps": steps, "concat": concat, "T": T}
    return out, cache


def lstm_backward(params: EncoderParams, cache: dict, grad_out: np.ndarray):
    """Backpropagation through time for `lstm_forward`."""
    g_out = np.asarray(grad_out, dtype=np.float64)
    w = params.weights
    h_dim = params.dims["hidden_dim"]
    tail = params.dims["tail_states"]
    T = cache["T"]
    steps = cache["steps"]

    grads = {k: np.zeros_like(v) for k, v in w.items()}
    grads["wp"] = np.outer(cache["concat"], g_out)
    grads["bp"] = g_out.copy()
    d_concat = w["wp"] @ g_out

    # Per-step upstream grads on h_t coming from the tail concatenation.
    d_tail = np.zeros((T, h_dim))
    n_real = min(T, tail)
    d_tail[T - n_real :] = d_concat[(tail - n_real) * h_dim :].reshape(n_real, h_dim)

    dx = np.zeros((T, params.dims["input_dim"]))
    dh_next = np.zeros(h_dim)
    dc_next = np.zeros(h_dim)
    for t in range(T - 1, -1, -1):
        s = steps[t]
        dh = dh_next + d_tail[t]
        do = dh * s["tanh_c"]
        dc = dc_next + dh * s["o"] * (1.0 - s["tanh_c"] ** 2)
        di = dc * s["g"]
        dg = dc * s["i"]
        df = dc * s["c_prev"]
        dc_next = dc * s["f"]

        da = np.concatenate([
            di * s["i"] * (1.0 - s["i"]),
            df * s["f"] * (1.0 - s["f"]),
            dg * (1.0 - s["g"] ** 2),
            do * s["o"] * (1.0 - s["o"]),
        ])
        grads["wx"] += np.outer(s["x"], da)
        grads["wh"] += np.outer(s["h_prev"], da)
        grads["b"] += da
        dh_next = w["wh"] @ da
        dx[t] = w["wx"] @ da
    return grads, dx


def encode(params: EncoderParams, features: np.ndarray):
    """Forward pass dispatched on the architecture tag."""
    if params.arch == "mlp":
        return mlp_forward(params, features)
    if params.arch == "lstm":
        return lstm_forward(params, features)
    raise ValueError(f"unknown encoder arch {params.arch!r}")


def encode_backward(params: EncoderParams, cache: dict, grad_out: np.ndarray):
    if params.arch == "mlp":
        return mlp_backward(params, cache, grad_out)
    if params.arch == "lstm":
        return lstm_backward(params, cache, grad_out)
    raise ValueError(f"unknown encoder arch {params.arch!r}")


def lr_at_epoch(base_lr: float, epoch: int, decay_epochs: int = 100,
                decay_factor: float = 10.0) -> float:
    """Step-decay schedule: divide by `decay_factor` after each
    `decay_epochs` epochs (1e-3 -> 1e-4 at epoch 100 -> 1e-5 at 200)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr / decay_factor ** (epoch // decay_epochs)


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays.

    Moment accumulators mirror parameter shapes; the learning rate is passed
    per step so a schedule can drive it.
    """

    def __init__(self, weights: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}

    def step(self, weights: dict, grads: dict, lr: float) -> None:
        """Apply one in-place update. Raises on non-finite gradients."""
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {k!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            weights[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(weights: dict, grads: dict, state: Adam, lr: float) -> None:
    """Functional alias for `Adam.step`."""
    state.step(weights, grads, lr)


def save_encoder(path, params: EncoderParams, meta: dict | None = None) -> None:
    """Write an encoder checkpoint (versioned header + float32 payload)."""
    header = {"kind": "encoder", "arch": params.arch, "dims": params.dims}
    if meta:
        header["meta"] = meta
    write_container(path, ENCODER_MAGIC, header, params.weights)


def load_encoder(path) -> EncoderParams:
    meta, tensors = read_container(path, ENCODER_MAGIC)
    if meta.get("kind") != "encoder":
        raise ValueError(f"{path}: not an encoder checkpoint")
    weights = {k: v.astype(np.float64) for k, v in tensors.items()}
    return EncoderParams(arch=meta["arch"], dims=dict(meta["dims"]), weights=weights)

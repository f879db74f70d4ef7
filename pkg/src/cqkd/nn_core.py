"""Minimal differentiable multilayer perceptron.

Dense layers with a rectifier on every hidden layer and an identity
output.  Provides exact reverse-mode gradients, an AdamW optimizer with
decoupled weight decay, a single-cycle triangular learning-rate schedule,
a finite-difference gradient checker, and bit-exact checkpoint I/O.

Everything is float64 numpy.  ``forward``/``backward`` accept a single
input vector or a batch matrix (one row per sample); for a batch the
gradients are summed over rows.
"""

from __future__ import annotations

import math
import operator
import struct
from dataclasses import dataclass

import numpy as np

from ._binio import ByteReader
from .exceptions import FormatError

CHECKPOINT_MAGIC = b"CQKD"
CHECKPOINT_VERSION = 1


@dataclass
class LayerParams:
    """One dense layer: ``weights`` is (out, in), ``bias`` is (out,)."""

    weights: np.ndarray
    bias: np.ndarray


@dataclass
class ModelParams:
    """Ordered dense layers; rectifier on hidden layers, identity output."""

    layers: list

    @property
    def input_size(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_size(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def layer_sizes(self) -> list:
        return [self.input_size] + [lp.weights.shape[0] for lp in self.layers]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [LayerParams(lp.weights.copy(), lp.bias.copy()) for lp in self.layers]
        )


@dataclass
class ActivationTrace:
    """Per-layer inputs captured by :func:`forward` for the backward pass.

    ``layer_inputs[i]`` is the input fed to layer ``i``; for ``i >= 1``
    that is also the post-rectifier output of layer ``i - 1``.
    """

    layer_inputs: list


@dataclass
class OptimizerState:
    """AdamW accumulators; shapes mirror the model's parameters exactly."""

    step_count: int
    first_moment: list
    second_moment: list


@dataclass(frozen=True)
class ScheduleConfig:
    """Single triangular learning-rate cycle spanning ``total_steps``."""

    eta_max: float
    total_steps: int
    floor_fraction: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.eta_max) and self.eta_max > 0):
            raise ValueError(f"eta_max must be positive, got {self.eta_max!r}")
        if self.total_steps < 2:
            raise ValueError(f"total_steps must be >= 2, got {self.total_steps}")
        if not 0.0 <= self.floor_fraction < 1.0:
            raise ValueError(
                f"floor_fraction must be in [0, 1), got {self.floor_fraction!r}"
            )


def init_model(layer_sizes, seed) -> ModelParams:
    """Build a model with scaled-uniform weights and zero biases.

    Weights for a (fan_in -> fan_out) layer are drawn from
    ``U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`` using a
    generator seeded with ``seed``; the same arguments always produce
    bit-identical parameters.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError(f"layer_sizes needs at least 2 entries, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(LayerParams(weights=weights, bias=np.zeros(fan_out)))
    return ModelParams(layers)


def _check_input(model: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValueError(f"input must be a vector or a batch matrix, got ndim={x.ndim}")
    if x.shape[-1] != model.input_size:
        raise ValueError(
            f"input size {x.shape[-1]} does not match model input size {model.input_size}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    return x


def forward(model: ModelParams, x):
    """Run the network; returns ``(logits, trace)``.

    Logits are the final layer's pre-activation.  The trace retains each
    layer's input (equivalently, each hidden layer's rectified output)
    for :func:`backward`.
    """
    h = _check_input(model, x)
    last = len(model.layers) - 1
    layer_inputs = []
    for i, layer in enumerate(model.layers):
        layer_inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        h = np.maximum(z, 0.0) if i < last else z
    return h, ActivationTrace(layer_inputs=layer_inputs)


def backward(model: ModelParams, trace: ActivationTrace, logit_grad):
    """Exact gradients of ``sum(logits * logit_grad)`` w.r.t. all parameters.

    ``trace`` must come from :func:`forward` on the same (unmodified)
    model.  Returns one :class:`LayerParams` of gradients per layer.  The
    rectifier subgradient at exactly 0 is 0.
    """
    if len(trace.layer_inputs) != len(model.layers):
        raise ValueError(
            f"trace has {len(trace.layer_inputs)} layers, model has {len(model.layers)}"
        )
    g = np.asarray(logit_grad, dtype=np.float64)
    first = trace.layer_inputs[0]
    expected = first.shape[:-1] + (model.output_size,)
    if g.shape != expected:
        raise ValueError(f"logit_grad shape {g.shape}, expected {expected}")
    for lp, x in zip(model.layers, trace.layer_inputs):
        if x.shape[-1] != lp.weights.shape[1] or x.ndim != first.ndim:
            raise ValueError("trace is incompatible with this model")

    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        x = trace.layer_inputs[i]
        if g.ndim == 1:
            gw = np.outer(g, x)
            gb = g.copy()
        else:
            gw = g.T @ x
            gb = g.sum(axis=0)
        grads[i] = LayerParams(weights=gw, bias=gb)
        if i > 0:
            g = (g @ model.layers[i].weights) * (trace.layer_inputs[i] > 0.0)
    return grads


def init_optimizer_state(model: ModelParams) -> OptimizerState:
    """Zeroed AdamW state matching the model's parameter shapes."""
    zeros = lambda lp: LayerParams(np.zeros_like(lp.weights), np.zeros_like(lp.bias))
    return OptimizerState(
        step_count=0,
        first_moment=[zeros(lp) for lp in model.layers],
        second_moment=[zeros(lp) for lp in model.layers],
    )


def adamw_step(
    params: ModelParams,
    grads,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
):
    """One AdamW update, in place; returns the updated ``(params, state)``.

    Weight decay is decoupled: each parameter is first scaled by
    ``1 - lr * weight_decay``, then the bias-corrected Adam step is
    applied.  Mutates ``params`` and ``state``; callers must serialize
    steps per model.
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr!r}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"betas must be in [0, 1), got {beta1!r}, {beta2!r}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps!r}")
    if weight_decay < 0:
        raise ValueError(f"weight_decay must be >= 0, got {weight_decay!r}")
    if len(grads) != len(params.layers):
        raise ValueError(f"{len(grads)} gradient layers for {len(params.layers)} model layers")

    state.step_count += 1
    t = state.step_count
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for layer, grad, m, v in zip(params.layers, grads, state.first_moment, state.second_moment):
        for attr in ("weights", "bias"):
            p = getattr(layer, attr)
            g = getattr(grad, attr)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {attr} {p.shape}")
            mo = getattr(m, attr)
            ve = getattr(v, attr)
            p -= lr * weight_decay * p
            mo *= beta1
            mo += (1.0 - beta1) * g
            ve *= beta2
            ve += (1.0 - beta2) * g * g
            p -= lr * (mo / corr1) / (np.sqrt(ve / corr2) + eps)
    return params, state


def cyclical_lr(step: int, schedule: ScheduleConfig) -> float:
    """Triangular learning rate at ``step``.

    Ramps linearly from ``floor_fraction * eta_max`` at step 0 up to
    ``eta_max`` at ``total_steps // 2``, then linearly back to the floor
    at the final step.
    """
    step = operator.index(step)
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    floor = schedule.floor_fraction * schedule.eta_max
    mid = schedule.total_steps // 2
    if step <= mid:
        frac = step / mid
    else:
        frac = (schedule.total_steps - 1 - step) / (schedule.total_steps - 1 - mid)
    return floor + (schedule.eta_max - floor) * frac


def _param_arrays(layers):
    out = []
    for li, lp in enumerate(layers):
        out.append((li, "weights", lp.weights))
        out.append((li, "bias", lp.bias))
    return out


def grad_check(model: ModelParams, inputs, loss_fn, step: float = 1e-6,
               max_checks=None, seed: int = 0) -> float:
    """Compare :func:`backward` against central finite differences.

    ``loss_fn(logits)`` must return ``(value, dvalue_dlogits)`` for a
    batch logits matrix.  Checks every parameter, or a seeded random
    subset of ``max_checks`` coordinates when the model has more.
    Returns the worst relative error, with denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    logits, trace = forward(model, x)
    _, dlogits = loss_fn(logits)
    analytic = backward(model, trace, np.asarray(dlogits, dtype=np.float64))

    arrays = _param_arrays(model.layers)
    sizes = [arr.size for _, _, arr in arrays]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    if max_checks is not None and total > max_checks:
        coords = np.sort(np.random.default_rng(seed).choice(total, size=max_checks, replace=False))
    else:
        coords = np.arange(total)

    worst = 0.0
    for flat in coords:
        ai = int(np.searchsorted(offsets, flat, side="right") - 1)
        li, attr, arr = arrays[ai]
        k = int(flat - offsets[ai])
        orig = arr.flat[k]
        arr.flat[k] = orig + step
        f_plus = float(loss_fn(forward(model, x)[0])[0])
        arr.flat[k] = orig - step
        f_minus = float(loss_fn(forward(model, x)[0])[0])
        arr.flat[k] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(getattr(analytic[li], attr).flat[k])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def num_params(model: ModelParams) -> int:
    return sum(lp.weights.size + lp.bias.size for lp in model.layers)


def model_bytes(model: ModelParams) -> bytes:
    """Serialize to the checkpoint container (also used for byte-equality tests)."""
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", CHECKPOINT_VERSION, len(model.layers))
    for lp in model.layers:
        out_dim, in_dim = lp.weights.shape
        out += struct.pack("<II", out_dim, in_dim)
    for lp in model.layers:
        out += np.ascontiguousarray(lp.weights, dtype="<f8").tobytes()
        out += np.ascontiguousarray(lp.bias, dtype="<f8").tobytes()
    return bytes(out)


def save_model(model: ModelParams, path) -> None:
    """Write the checkpoint file; round-trips bit-exactly through :func:`load_model`."""
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = ByteReader(data, context=f"model file {path}")
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a model checkpoint (magic {magic!r})")
    version, n_layers = reader.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    dims = [reader.unpack("<II") for _ in range(n_layers)]
    for (out_prev, _), (_, in_next) in zip(dims[:-1], dims[1:]):
        if out_prev != in_next:
            raise FormatError(f"inconsistent layer dims in {path}: {dims}")
    layers = []
    for out_dim, in_dim in dims:
        weights = reader.array("<f8", out_dim * in_dim).reshape(out_dim, in_dim)
        bias = reader.array("<f8", out_dim)
        layers.append(LayerParams(weights=weights, bias=bias))
    reader.expect_end()
    if not layers:
        raise FormatError(f"checkpoint {path} contains no layers")
    return ModelParams(layers)

"""Dense-array layer primitives with exact forward math and hand-derived
backward passes.

Everything runs in double precision on plain numpy arrays. Each parameter
array has a same-shape gradient buffer; backward passes *add* into those
buffers, so callers zero them between optimizer steps. The 1-D convolution
is the cross-correlation s(i) = sum_c sum_j input[c, i + d*j] * w[c, j] + b
(no kernel flipping), with dilation d skipping input positions.
"""

from __future__ import annotations

import csv

import numpy as np


class ShapeMismatch(ValueError):
    """Array dimensions do not match the layer's parameters."""


# ---------------------------------------------------------------------------
# parameter containers


class ParamBlock:
    """Named parameter arrays, each paired with a same-shape gradient buffer."""

    def __init__(self):
        self._names: list[str] = []
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, array: np.ndarray) -> np.ndarray:
        setattr(self, name, array)
        self._names.append(name)
        self.grads[name] = np.zeros_like(array)
        return array

    def arrays(self):
        return [(name, getattr(self, name)) for name in self._names]

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0


class ConvLayerParams(ParamBlock):
    """1-D convolution parameters: kernel (out_ch, in_ch, k), bias (out_ch,)."""

    def __init__(self, out_channels: int, in_channels: int, kernel_size: int,
                 dilation: int = 1):
        super().__init__()
        if kernel_size < 1 or dilation < 1:
            raise ValueError("kernel_size and dilation must be >= 1")
        self.dilation = dilation
        self._register(
            "kernel",
            np.zeros((out_channels, in_channels, kernel_size), dtype=np.float64),
        )
        self._register("bias", np.zeros(out_channels, dtype=np.float64))

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]


class DenseParams(ParamBlock):
    """Affine map parameters: weights (n_in, n_out), bias (n_out,)."""

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self._register("weights", np.zeros((n_in, n_out), dtype=np.float64))
        self._register("bias", np.zeros(n_out, dtype=np.float64))


LSTM_GATES = ("i", "f", "o", "c")


class LstmCellParams(ParamBlock):
    """Per-gate LSTM weights.

    For each gate g in (i, f, o, c): input weights W_gx (hidden, features),
    recurrent weights W_gh (hidden, hidden) and bias b_g (hidden,).
    """

    def __init__(self, n_features: int, n_hidden: int):
        super().__init__()
        self.n_features = n_features
        self.n_hidden = n_hidden
        for g in LSTM_GATES:
            self._register(f"W_{g}x", np.zeros((n_hidden, n_features), dtype=np.float64))
            self._register(f"W_{g}h", np.zeros((n_hidden, n_hidden), dtype=np.float64))
            self._register(f"b_{g}", np.zeros(n_hidden, dtype=np.float64))


def named_parameters(params):
    """Flat (name, array, grad) triples for a ParamBlock or a composite
    exposing blocks() -> [(prefix, ParamBlock)]."""
    if isinstance(params, ParamBlock):
        for name, arr in params.arrays():
            yield name, arr, params.grads[name]
    else:
        for prefix, block in params.blocks():
            for name, arr in block.arrays():
                yield f"{prefix}.{name}", arr, block.grads[name]


def zero_grads(params):
    for _, _, g in named_parameters(params):
        g[...] = 0.0


def param_count(params) -> int:
    return sum(arr.size for _, arr, _ in named_parameters(params))


# ---------------------------------------------------------------------------
# activations (derivatives take the cached forward output)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(y):
    # derivative at 0 defined as 0
    return (y > 0).astype(np.float64)


def sigmoid(x):
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])  # branch on sign so exp never overflows
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


def sigmoid_grad(y):
    return y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y):
    return 1.0 - y * y


# ---------------------------------------------------------------------------
# 1-D dilated convolution (cross-correlation)


def _conv_check(inputs: np.ndarray, params: ConvLayerParams) -> tuple[np.ndarray, bool]:
    single = inputs.ndim == 2  # (channels, width) convenience form
    batch = inputs[None] if single else inputs
    if batch.ndim != 3:
        raise ShapeMismatch(f"expected 2- or 3-d input, got ndim {inputs.ndim}")
    if batch.shape[1] != params.in_channels:
        raise ShapeMismatch(
            f"input has {batch.shape[1]} channels, kernel expects {params.in_channels}"
        )
    min_width = 1 + params.dilation * (params.kernel_size - 1)
    if batch.shape[2] < min_width:
        raise ShapeMismatch(
            f"width {batch.shape[2]} < minimum {min_width} for k={params.kernel_size},"
            f" d={params.dilation}"
        )
    return batch, single


def conv1d_forward(inputs: np.ndarray, params: ConvLayerParams) -> np.ndarray:
    """Dilated cross-correlation over (batch, channels, width) or (channels, width).

    out[b, o, i] = sum_c sum_j inputs[b, c, i + d*j] * kernel[o, c, j] + bias[o]
    with out_width = width - d * (kernel_size - 1).
    """
    batch, single = _conv_check(inputs, params)
    k, d = params.kernel_size, params.dilation
    out_w = batch.shape[2] - d * (k - 1)
    out = np.empty((batch.shape[0], params.out_channels, out_w), dtype=np.float64)
    out[:] = params.bias[None, :, None]
    for j in range(k):
        out += np.einsum(
            "bcw,oc->bow", batch[:, :, j * d:j * d + out_w], params.kernel[:, :, j]
        )
    return out[0] if single else out


def conv1d_backward(
    upstream: np.ndarray, inputs: np.ndarray, params: ConvLayerParams
) -> np.ndarray:
    """Exact adjoint of conv1d_forward.

    Accumulates kernel/bias gradients into params.grads and returns the
    gradient with respect to the inputs (same shape as `inputs`).
    """
    batch, single = _conv_check(inputs, params)
    up = upstream[None] if single else upstream
    k, d = params.kernel_size, params.dilation
    out_w = batch.shape[2] - d * (k - 1)
    if up.shape != (batch.shape[0], params.out_channels, out_w):
        raise ShapeMismatch(
            f"upstream shape {up.shape} does not match forward output "
            f"{(batch.shape[0], params.out_channels, out_w)}"
        )
    params.grads["bias"] += up.sum(axis=(0, 2))
    d_input = np.zeros_like(batch)
    for j in range(k):
        window = batch[:, :, j * d:j * d + out_w]
        params.grads["kernel"][:, :, j] += np.einsum("bow,bcw->oc", up, window)
        d_input[:, :, j * d:j * d + out_w] += np.einsum(
            "bow,oc->bcw", up, params.kernel[:, :, j]
        )
    return d_input[0] if single else d_input


# ---------------------------------------------------------------------------
# dense layer


def dense_forward(inputs: np.ndarray, params: DenseParams) -> np.ndarray:
    """Affine map (batch, n_in) -> (batch, n_out); no activation."""
    if inputs.ndim != 2 or inputs.shape[1] != params.weights.shape[0]:
        raise ShapeMismatch(
            f"input shape {inputs.shape} incompatible with weights "
            f"{params.weights.shape}"
        )
    return inputs @ params.weights + params.bias


def dense_backward(
    upstream: np.ndarray, inputs: np.ndarray, params: DenseParams
) -> np.ndarray:
    if upstream.shape != (inputs.shape[0], params.weights.shape[1]):
        raise ShapeMismatch(
            f"upstream shape {upstream.shape} does not match output "
            f"{(inputs.shape[0], params.weights.shape[1])}"
        )
    params.grads["weights"] += inputs.T @ upstream
    params.grads["bias"] += upstream.sum(axis=0)
    return upstream @ params.weights.T


# ---------------------------------------------------------------------------
# LSTM cell and sequence (BPTT)


def lstm_cell_forward(x_t, h_prev, c_prev, params: LstmCellParams):
    """One LSTM step.

        i = sig(W_ix x + W_ih h_prev + b_i)      input gate
        f = sig(W_fx x + W_fh h_prev + b_f)      forget gate
        o = sig(W_ox x + W_oh h_prev + b_o)      output gate
        c~ = tanh(W_cx x + W_ch h_prev + b_c)    candidate cell
        c = f * c_prev + i * c~
        h = o * tanh(c)

    x_t is (batch, features); h_prev/c_prev are (batch, hidden). Returns
    (h, c, cache) where cache feeds lstm_cell_backward.
    """
    if x_t.ndim != 2 or x_t.shape[1] != params.n_features:
        raise ShapeMismatch(
            f"x_t shape {x_t.shape} incompatible with {params.n_features} features"
        )
    if h_prev.shape != (x_t.shape[0], params.n_hidden) or c_prev.shape != h_prev.shape:
        raise ShapeMismatch("h_prev/c_prev shapes do not match (batch, hidden)")
    i = sigmoid(x_t @ params.W_ix.T + h_prev @ params.W_ih.T + params.b_i)
    f = sigmoid(x_t @ params.W_fx.T + h_prev @ params.W_fh.T + params.b_f)
    o = sigmoid(x_t @ params.W_ox.T + h_prev @ params.W_oh.T + params.b_o)
    c_tilde = np.tanh(x_t @ params.W_cx.T + h_prev @ params.W_ch.T + params.b_c)
    c = f * c_prev + i * c_tilde
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = (x_t, h_prev, c_prev, i, f, o, c_tilde, tanh_c)
    return h, c, cache


def lstm_cell_backward(dh, dc, cache, params: LstmCellParams):
    """Adjoint of one LSTM step.

    dh/dc are gradients w.r.t. h_t and c_t. Accumulates parameter gradients
    and returns (dx, dh_prev, dc_prev).
    """
    x_t, h_prev, c_prev, i, f, o, c_tilde, tanh_c = cache
    do = dh * tanh_c
    dc_total = dc + dh * o * tanh_grad(tanh_c)
    df = dc_total * c_prev
    di = dc_total * c_tilde
    dc_tilde = dc_total * i
    dc_prev = dc_total * f

    pre = {
        "i": di * sigmoid_grad(i),
        "f": df * sigmoid_grad(f),
        "o": do * sigmoid_grad(o),
        "c": dc_tilde * tanh_grad(c_tilde),
    }
    dx = np.zeros_like(x_t)
    dh_prev = np.zeros_like(h_prev)
    for g, d_pre in pre.items():
        params.grads[f"W_{g}x"] += d_pre.T @ x_t
        params.grads[f"W_{g}h"] += d_pre.T @ h_prev
        params.grads[f"b_{g}"] += d_pre.sum(axis=0)
        dx += d_pre @ getattr(params, f"W_{g}x")
        dh_prev += d_pre @ getattr(params, f"W_{g}h")
    return dx, dh_prev, dc_prev


def lstm_sequence_forward(sequence, h0, c0, params: LstmCellParams):
    """Unroll the cell over (seq_len, batch, features); returns (h_T, c_T, caches)."""
    if sequence.ndim != 3:
        raise ShapeMismatch(f"expected (seq, batch, features), got {sequence.shape}")
    h, c = h0, c0
    caches = []
    for t in range(sequence.shape[0]):
        h, c, cache = lstm_cell_forward(sequence[t], h, c, params)
        caches.append(cache)
    return h, c, caches


def lstm_sequence_backward(dh_T, caches, params: LstmCellParams, dc_T=None):
    """Backpropagation through time from a gradient on the last hidden state.

    Accumulates parameter gradients across all steps; returns
    (d_sequence, dh0, dc0).
    """
    dh = dh_T
    dc = np.zeros_like(dh_T) if dc_T is None else dc_T
    d_steps = []
    for cache in reversed(caches):
        dx, dh, dc = lstm_cell_backward(dh, dc, cache, params)
        d_steps.append(dx)
    d_sequence = np.stack(d_steps[::-1], axis=0)
    return d_sequence, dh, dc


# ---------------------------------------------------------------------------
# finite-difference gradient verification


def grad_check(loss_fn, params, eps: float = 1e-5) -> float:
    """Central-difference check of every parameter gradient.

    loss_fn() must run a full forward+backward pass with the current
    parameter values, accumulating into the gradient buffers of `params`,
    and return the scalar loss. Returns the max relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    """
    triples = list(named_parameters(params))
    zero_grads(params)
    loss_fn()
    analytic = {name: g.copy() for name, _, g in triples}
    max_rel = 0.0
    for name, arr, _ in triples:
        flat = arr.reshape(-1)
        an = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            loss_plus = loss_fn()
            flat[idx] = orig - eps
            loss_minus = loss_fn()
            flat[idx] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            rel = abs(an[idx] - numeric) / max(abs(an[idx]), abs(numeric), 1e-12)
            max_rel = max(max_rel, rel)
    zero_grads(params)
    return max_rel


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_params_csv(params, path) -> None:
    """Flat `layer_name,index,value` rows, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer_name", "index", "value"])
        for name, arr, _ in named_parameters(params):
            for idx, value in enumerate(arr.reshape(-1)):
                writer.writerow([name, idx, f"{value:.17g}"])


def load_params_csv(params, path) -> None:
    """Fill the arrays of an already-constructed `params` in place."""
    values: dict[str, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["layer_name", "index", "value"]:
            raise ValueError(f"unexpected header {header!r}")
        for name, idx, value in reader:
            values.setdefault(name, {})[int(idx)] = float(value)
    for name, arr, _ in named_parameters(params):
        if name not in values:
            raise ValueError(f"checkpoint is missing array {name!r}")
        entries = values.pop(name)
        if len(entries) != arr.size:
            raise ValueError(
                f"array {name!r} expects {arr.size} values, checkpoint has "
                f"{len(entries)}"
            )
        flat = arr.reshape(-1)
        for idx, value in entries.items():
            flat[idx] = value
    if values:
        raise ValueError(f"checkpoint has unknown arrays: {sorted(values)}")

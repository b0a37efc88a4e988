"""Differentiable layer primitives for NCHW image tensors.

Convolution uses an im2col lowering so the heavy lifting is one BLAS
matrix product per call; the backward scatter loops only over kernel
offsets.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ShapeError
from .tensor import Parameter, Tensor, gate

__all__ = [
    "conv2d",
    "max_pool2d",
    "upsample2d",
    "fully_connected",
    "relu",
    "concat_channels",
    "dropout",
    "residual_block",
    "init_conv",
    "init_fc",
    "init_residual",
]


def _out_extent(size: int, k: int, stride: int, padding: int, what: str) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"{what}: extent {size} with kernel {k}, stride {stride}, padding {padding} "
            "does not give an integral output size"
        )
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x`` (B,Cin,H,W) with ``kernel`` (Cout,Cin,kh,kw)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ShapeError(f"conv2d: kernel expects {Ck} input channels, input has {C}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({O},)")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d: stride {stride} / padding {padding} invalid")
    Ho = _out_extent(H, kh, stride, padding, "conv2d height")
    Wo = _out_extent(W, kw, stride, padding, "conv2d width")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, Ho, Wo, C, kh, kw) -> rows of the im2col matrix
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    kmat = kernel.data.reshape(O, C * kh * kw)
    out = cols @ kmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ kmat).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=g.dtype)
            hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + hs:stride, j:j + ws:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor.from_op(np.ascontiguousarray(out), parents, backward)


def max_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Per-window maximum; gradient flows to the first maximal element in scan order."""
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ConfigurationError(f"max_pool2d: window {window} and stride {stride} must be >= 1")
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects a 4-D input, got {x.shape}")
    B, C, H, W = x.shape
    Ho = _out_extent(H, window, stride, 0, "max_pool2d height")
    Wo = _out_extent(W, window, stride, 0, "max_pool2d width")
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(B, C, Ho, Wo, window * window)
    idx = gate(flat.argmax(axis=-1))
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for o in range(window * window):
            di, dj = divmod(o, window)
            dx[:, :, di:di + hs:stride, dj:dj + ws:stride] += g * (idx == o)
        return (dx,)

    return Tensor.from_op(out, (x,), backward)


def upsample2d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    if factor < 1:
        raise ConfigurationError(f"upsample2d: factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return Tensor.from_op(
        out, (x,), lambda g: (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)
    )


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x (B,N), weight (M,N)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} != ({weight.shape[0]},)")
    a, w = x.data, weight.data
    out = a @ w.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        return (
            g @ w if x.requires_grad else None,
            g.T @ a if weight.requires_grad else None,
            g.sum(axis=0) if bias is not None else None,
        )

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)):
        tensors = tuple(tensors[0])
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError(
                f"concat_channels: shapes {first.shape} and {t.shape} differ outside the channel axis"
            )
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=1)))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def residual_block(x: Tensor, params: dict) -> Tensor:
    """conv3x3 -> ReLU -> conv3x3, added to an identity or 1x1-projected skip path.

    ``params`` holds ``conv1``/``conv2`` and optionally ``skip``, each a
    ``(kernel, bias)`` pair as returned by :func:`init_residual`.
    """
    k1, b1 = params["conv1"]
    k2, b2 = params["conv2"]
    h = conv2d(x, k1, b1, stride=1, padding=k1.shape[-1] // 2).relu()
    h = conv2d(h, k2, b2, stride=1, padding=k2.shape[-1] // 2)
    skip = params.get("skip")
    if skip is None:
        if h.shape[1] != x.shape[1]:
            raise ShapeError("residual_block: channel change needs a 1x1 skip projection")
        return h + x
    return h + conv2d(x, skip[0], skip[1])


# -- parameter initialisation ------------------------------------------------------


def _fan_in_normal(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(dtype)


def init_conv(rng, name: str, cin: int, cout: int, k: int, dtype=np.float32, gain: float = 2.0):
    """Fan-in scaled normal kernel (std = sqrt(gain / fan_in)) and zero bias.

    ``gain=2`` suits layers followed by ReLU; linear output heads use 1.
    """
    kernel = Parameter(_fan_in_normal(rng, (cout, cin, k, k), cin * k * k, dtype, gain), f"{name}.kernel")
    bias = Parameter(np.zeros(cout, dtype=dtype), f"{name}.bias", regularize=False)
    return kernel, bias


def init_fc(rng, name: str, n_in: int, n_out: int, dtype=np.float32, gain: float = 2.0):
    weight = Parameter(_fan_in_normal(rng, (n_out, n_in), n_in, dtype, gain), f"{name}.weight")
    bias = Parameter(np.zeros(n_out, dtype=dtype), f"{name}.bias", regularize=False)
    return weight, bias


def init_residual(rng, name: str, cin: int, cout: int, dtype=np.float32) -> dict:
    """Residual parameters; the branch's last kernel starts at zero so a
    fresh block is its skip path and stacked blocks do not inflate activations."""
    conv2 = init_conv(rng, f"{name}.conv2", cout, cout, 3, dtype)
    conv2[0].data[...] = 0.0
    params = {
        "conv1": init_conv(rng, f"{name}.conv1", cin, cout, 3, dtype),
        "conv2": conv2,
    }
    if cin != cout:
        params["skip"] = init_conv(rng, f"{name}.skip", cin, cout, 1, dtype)
    return params

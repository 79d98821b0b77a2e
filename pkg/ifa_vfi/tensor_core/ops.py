"""
前向算子及其反向规则
约定：特征与图像为 (n, c, h, w)；线性层/归一化作用在通道维 (axis=1)
每个算子返回新 Tensor，反向函数返回各父节点的梯度（不需要时为 None）
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ShapeError
from .tensor import Tensor, make_result

Scalar = Union[int, float]
TensorLike = Union[Tensor, np.ndarray, Scalar]

LEAKY_SLOPE = 0.1
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and arr.ndim == 0:
        arr = arr.astype(like.dtype)
    return Tensor(arr)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度规约回原始形状"""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ─────────── 逐元素运算 ───────────

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data + b.data

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), _backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data - b.data

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), _backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data * b.data

    def _backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), _backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data / b.data

    def _backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), _backward)


def neg(x: Tensor) -> Tensor:
    return make_result(-x.data, (x,), lambda g: (-g,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    sign = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sign,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # 数值稳定写法，两个分支分别只对各自的符号求值
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return make_result(out, (x,), _backward)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    d = x.data
    positive = d > 0
    out = np.where(positive, d, d * d.dtype.type(slope))

    def _backward(g):
        return (np.where(positive, g, g * g.dtype.type(slope)),)

    return make_result(out, (x,), _backward)


def gelu(x: Tensor) -> Tensor:
    d = x.data
    cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    out = (d * cdf).astype(d.dtype)

    def _backward(g):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT2PI
        return ((g * (cdf + d * pdf)).astype(g.dtype),)

    return make_result(out, (x,), _backward)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"未知激活函数: {kind}")


# ─────────── 规约 ───────────

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), _backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    total = sum(x, axis=axis, keepdims=keepdims)
    return mul(total, 1.0 / count)


# ─────────── 形状与索引 ───────────

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return make_result(out, (x,), lambda g: (np.transpose(g, inverse),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def _backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        if _is_basic_index(index):
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return make_result(np.array(out), (x,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g):
        grads = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return grads

    return make_result(out, tensors, _backward)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """按通道拼接，要求 n/h/w 一致"""
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("concat_channels 至少需要一个输入")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels 空间尺寸不一致: {ref} vs {t.shape}")
    if len(inputs) == 1:
        return inputs[0]
    return concat(inputs, axis=1)


def _gather_matrix(index: np.ndarray, size: int, dtype) -> np.ndarray:
    """one-hot 矩阵 P (len(index), size)，用于 gather 的反向累加"""
    mat = np.zeros((len(index), size), dtype=dtype)
    mat[np.arange(len(index)), index] = 1
    return mat


def pad2d(x: Tensor, pads: Tuple[int, int, int, int], mode: str = "constant") -> Tensor:
    """对最后两维填充 (top, bottom, left, right)；mode: constant(零) / edge(复制) / reflect"""
    top, bottom, left, right = pads
    if top == bottom == left == right == 0:
        return x
    h, w = x.shape[-2:]
    if mode == "constant":
        width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
        out = np.pad(x.data, width, mode="constant")

        def _backward_const(g):
            return (g[..., top:top + h, left:left + w],)

        return make_result(out, (x,), _backward_const)

    idx_h = np.pad(np.arange(h), (top, bottom), mode=mode)
    idx_w = np.pad(np.arange(w), (left, right), mode=mode)
    out = x.data[..., idx_h[:, None], idx_w[None, :]]

    def _backward(g):
        ph = _gather_matrix(idx_h, h, g.dtype)
        pw = _gather_matrix(idx_w, w, g.dtype)
        return (np.matmul(np.matmul(ph.T, g), pw),)

    return make_result(out, (x,), _backward)


def roll2d(x: Tensor, shift_h: int, shift_w: int) -> Tensor:
    out = np.roll(x.data, (shift_h, shift_w), axis=(-2, -1))
    return make_result(out, (x,), lambda g: (np.roll(g, (-shift_h, -shift_w), axis=(-2, -1)),))


def zero_insert(x: Tensor) -> Tensor:
    """(n,c,h,w) -> (n,c,2h,2w)，原值放在偶数位置，其余为 0"""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=x.dtype)
    out[..., ::2, ::2] = x.data
    return make_result(out, (x,), lambda g: (np.ascontiguousarray(g[..., ::2, ::2]),))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """通道 c_out·r² + dy·r + dx 映射到输出位置 (y·r+dy, x·r+dx)"""
    n, c, h, w = x.shape
    if r < 1 or c % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle 通道数 {c} 不能被 r²={r * r} 整除")
    if r == 1:
        return x
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def _backward(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return make_result(out, (x,), _backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """pixel_shuffle 的逆映射"""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle 空间尺寸 {(h, w)} 不能被 r={r} 整除")
    if r == 1:
        return x
    out = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)

    def _backward(g):
        return (g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),)

    return make_result(out, (x,), _backward)


# ─────────── 线性代数 ───────────

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = np.matmul(a.data, b.data)

    def _backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), _backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """逐位置的矩阵-向量乘：通道维 (axis=1) 上乘以 weight (out, in)"""
    if weight.ndim != 2 or x.ndim < 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear 维度不匹配: input {x.shape} vs weight {weight.shape}")
    out = np.moveaxis(np.tensordot(weight.data, x.data, axes=([1], [1])), 0, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    out = np.ascontiguousarray(out)
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def _backward(g):
        gx = np.moveaxis(np.tensordot(weight.data, g, axes=([0], [1])), 0, 1) if x.requires_grad else None
        gw = np.tensordot(g, x.data, axes=(reduce_axes, reduce_axes)) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=reduce_axes).reshape(bias.shape))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward)


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """二维互相关；weight 形状 (c_out, c_in/groups, k, k)"""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d 需要 4 维输入与权重: input {x.shape}, weight {weight.shape}")
    n, c, h, w = x.shape
    co, cpg, k, k2 = weight.shape
    if k != k2 or groups < 1 or c % groups or co % groups or cpg * groups != c:
        raise ShapeError(f"conv2d 通道不匹配: input {x.shape} vs weight {weight.shape} (groups={groups})")
    if stride < 1 or dilation < 1:
        raise ShapeError(f"conv2d stride/dilation 必须 ≥ 1: stride={stride}, dilation={dilation}")
    oh = conv_output_size(h, k, stride, padding, dilation)
    ow = conv_output_size(w, k, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d 输出尺寸为空: input {x.shape}, k={k}, padding={padding}, dilation={dilation}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    span = dilation * (k - 1) + 1
    win = sliding_window_view(xp, (span, span), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation][:, :, :oh, :ow]
    opg = co // groups

    if groups == 1:
        out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        win_g = None
        w_g = None
    else:
        win_g = win.reshape(n, groups, cpg, oh, ow, k, k)
        w_g = weight.data.reshape(groups, opg, cpg, k, k)
        out = np.einsum("ngchwij,gocij->ngohw", win_g, w_g, optimize=True).reshape(n, co, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out, dtype=np.result_type(x.data, weight.data))

    def _backward(g):
        grads: List[Optional[np.ndarray]] = [None, None]
        if weight.requires_grad:
            if groups == 1:
                grads[1] = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            else:
                g_r = g.reshape(n, groups, opg, oh, ow)
                grads[1] = np.einsum("ngohw,ngchwij->gocij", g_r, win_g, optimize=True).reshape(weight.shape)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            g_r = g.reshape(n, groups, opg, oh, ow) if groups > 1 else None
            for i in range(k):
                for j in range(k):
                    if groups == 1:
                        contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    else:
                        contrib = np.einsum("ngohw,goc->ngchw", g_r, w_g[..., i, j]).reshape(n, c, oh, ow)
                    y0, x0 = i * dilation, j * dilation
                    gxp[:, :, y0:y0 + stride * (oh - 1) + 1:stride, x0:x0 + stride * (ow - 1) + 1:stride] += contrib
            grads[0] = gxp[:, :, padding:padding + h, padding:padding + w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).reshape(bias.shape))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward)


# ─────────── 归一化与 softmax ───────────

def softmax_lastdim(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """最后一维 softmax；mask 为加性常数（被屏蔽位置为大负数）。行内归一化在 float64 中完成"""
    if x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim 需要至少一列")
    z = x.data.astype(np.float64)
    if mask is not None:
        z = z + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = s.astype(x.dtype)

    def _backward(g):
        g64 = g.astype(np.float64)
        gx = s * (g64 - (g64 * s).sum(axis=-1, keepdims=True))
        return (gx.astype(g.dtype),)

    return make_result(out, (x,), _backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """逐位置在通道维上归一化，然后逐通道仿射"""
    c = x.shape[1]
    if gamma.size != c or beta.size != c:
        raise ShapeError(f"layer_norm 仿射参数长度应为 {c}: gamma {gamma.shape}, beta {beta.shape}")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    g_data = gamma.data.reshape(bshape)
    out = (xhat * g_data + beta.data.reshape(bshape)).astype(np.result_type(x.data, gamma.data))
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def _backward(g):
        gxhat = g * g_data
        gx = inv_std * (gxhat - gxhat.mean(axis=1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        ggamma = (g * xhat).sum(axis=reduce_axes).reshape(gamma.shape)
        gbeta = g.sum(axis=reduce_axes).reshape(beta.shape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), _backward)


# ─────────── 重采样 ───────────

def _resize_axis(in_size: int, out_size: int, align_corners: bool):
    """单轴插值的源索引 i0/i1 与权重 f"""
    dst = np.arange(out_size, dtype=np.float64)
    if align_corners:
        src = dst * ((in_size - 1) / (out_size - 1)) if out_size > 1 else np.zeros_like(dst)
    else:
        src = np.maximum((dst + 0.5) * (in_size / out_size) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    f = src - i0
    return i0, i1, f


def _interp_matrix(i0, i1, f, in_size: int, dtype) -> np.ndarray:
    mat = np.zeros((len(i0), in_size), dtype=np.float64)
    rows = np.arange(len(i0))
    np.add.at(mat, (rows, i0), 1.0 - f)
    np.add.at(mat, (rows, i1), f)
    return mat.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int, align_corners: bool = False) -> Tensor:
    """双线性缩放；默认半像素中心 (align_corners=False)"""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize 输出尺寸必须 ≥ 1: {(out_h, out_w)}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    y0, y1, fy = _resize_axis(h, out_h, align_corners)
    x0, x1, fx = _resize_axis(w, out_w, align_corners)
    d = x.data
    fy_c = fy.astype(d.dtype)[:, None]
    fx_c = fx.astype(d.dtype)
    # a + f·(b−a)，常数图像保持精确不变
    top = d[..., y0, :]
    rows = top + fy_c * (d[..., y1, :] - top)
    left = rows[..., x0]
    out = left + fx_c * (rows[..., x1] - left)

    def _backward(g):
        ry = _interp_matrix(y0, y1, fy, h, g.dtype)
        rx = _interp_matrix(x0, x1, fx, w, g.dtype)
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return make_result(np.ascontiguousarray(out), (x,), _backward)


def sample_bilinear(image: Tensor, flow: Tensor) -> Tensor:
    """在 p + flow(p)（像素单位）处双线性采样，越界的采样点按 0 处理"""
    n, c, h, w = image.shape
    if flow.shape != (n, 2, h, w):
        raise ShapeError(f"sample_bilinear 尺寸不匹配: image {image.shape} vs flow {flow.shape}")
    dtype = image.data.dtype
    fl = flow.data
    gx = np.arange(w, dtype=fl.dtype)[None, None, :] + fl[:, 0]
    gy = np.arange(h, dtype=fl.dtype)[None, :, None] + fl[:, 1]
    x0f = np.floor(gx)
    y0f = np.floor(gy)
    wx = (gx - x0f)[:, None]
    wy = (gy - y0f)[:, None]
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    batch = np.arange(n)[:, None, None]
    img = image.data

    taps = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi = y0 + dy
        xi = x0 + dx
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        vals = np.moveaxis(img[batch, :, yc, xc], -1, 1) * valid[:, None]
        taps.append((yc, xc, valid, vals))

    one = np.ones((), dtype=wx.dtype)
    w00 = (one - wx) * (one - wy)
    w01 = wx * (one - wy)
    w10 = (one - wx) * wy
    w11 = wx * wy
    weights = (w00, w01, w10, w11)
    v00, v01, v10, v11 = (t[3] for t in taps)
    out = v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11

    def _backward(g):
        gimg = None
        if image.requires_grad:
            gimg = np.zeros((n, c, h * w), dtype=np.float64)
            lin_base = (np.arange(n)[:, None, None] * (h * w))
            for (yc, xc, valid, _), wt in zip(taps, weights):
                lin = (lin_base + yc * w + xc).reshape(-1)
                contrib = g * wt * valid[:, None]
                for ch in range(c):
                    gimg[:, ch] += np.bincount(lin, weights=contrib[:, ch].reshape(-1),
                                               minlength=n * h * w).reshape(n, h * w)
            gimg = gimg.reshape(n, c, h, w).astype(dtype)
        gflow = None
        if flow.requires_grad:
            dgx = (one - wy) * (v01 - v00) + wy * (v11 - v10)
            dgy = (one - wx) * (v10 - v00) + wx * (v11 - v01)
            gflow = np.concatenate([(g * dgx).sum(axis=1, keepdims=True),
                                    (g * dgy).sum(axis=1, keepdims=True)], axis=1).astype(fl.dtype)
        return gimg, gflow

    return make_result(out.astype(np.result_type(img, fl), copy=False), (image, flow), _backward)

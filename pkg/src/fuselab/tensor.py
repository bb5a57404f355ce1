"""Dense float64 tensor kernels shared by every other module.

All values are plain numpy arrays of rank 1-3, C-contiguous, dtype float64.
The helpers here add strict shape checking, the activation kernels used as
similarity projections, the 2-D pooling kernels, and the binary on-disk
tensor format used by the CLI and checkpoints.

Everything is a pure function: inputs are never mutated and identical
inputs produce bit-identical outputs.
"""

from __future__ import annotations

import struct

import numpy as np

# One precision everywhere: desk-scale sizes make float64 cheap, and the
# finite-difference gradient checks need the headroom.
FLOAT = np.float64

MAX_RANK = 3

ACTIVATIONS = (
    "identity",
    "softmax_rows",
    "relu",
    "elu",
    "silu",
    "silu_positive",
)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(values) -> np.ndarray:
    """Coerce nested lists / arrays to a C-contiguous float64 array of rank 1-3."""
    arr = np.asarray(values, dtype=FLOAT)
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a (m, k) and b (k, n).

    Raises ShapeError naming both shapes when the inner dimensions differ.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function 1 / (1 + exp(-x)).

    exp(-|x|) never overflows, and one exp over the array is measurably
    cheaper than branch-wise masking on the large tensors fusion handles.
    """
    x = np.asarray(x, dtype=FLOAT)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, z) / (1.0 + z)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a rank-2 array, stabilised by max subtraction."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows needs a rank-2 input, got shape {x.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Apply the named projection elementwise (row-wise for softmax_rows).

    silu(x) = x * sigmoid(x); silu_positive shifts silu up by the minimum
    over the whole input tensor so every output is >= 0.
    """
    if kind == "identity":
        return np.array(x, dtype=FLOAT, copy=True)
    if kind == "softmax_rows":
        return softmax_rows(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    if kind == "silu":
        return x * sigmoid(x)
    if kind == "silu_positive":
        return x * sigmoid(x) - np.min(x)
    raise ValueError(f"unknown activation kind {kind!r}; expected one of {ACTIVATIONS}")


def silu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of silu: sigma(x) * (1 + x * (1 - sigma(x)))."""
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def activation_vjp(x: np.ndarray, grad_out: np.ndarray, kind: str) -> np.ndarray:
    """Vector-Jacobian product of `activation` at input x.

    Returns d(loss)/dx given d(loss)/d(activation(x)).  The subgradient at
    the relu kink and at silu_positive's argmin picks one deterministic
    representative (relu'(0) = 0; the min is attributed to the first
    minimising entry in row-major order).
    """
    if kind == "identity":
        return np.array(grad_out, dtype=FLOAT, copy=True)
    if kind == "softmax_rows":
        s = softmax_rows(x)
        inner = (grad_out * s).sum(axis=1, keepdims=True)
        return s * (grad_out - inner)
    if kind == "relu":
        return np.where(x > 0, grad_out, 0.0)
    if kind == "elu":
        return np.where(x > 0, grad_out, grad_out * np.exp(np.minimum(x, 0.0)))
    if kind == "silu":
        return grad_out * silu_grad(x)
    if kind == "silu_positive":
        dx = grad_out * silu_grad(x)
        argmin = np.unravel_index(np.argmin(x), x.shape)
        dx[argmin] -= np.sum(grad_out)
        return dx
    raise ValueError(f"unknown activation kind {kind!r}; expected one of {ACTIVATIONS}")


def _check_pool_args(grid: np.ndarray, k: int) -> None:
    if grid.ndim != 3:
        raise ShapeError(f"pooling needs a (h, w, c) grid, got shape {grid.shape}")
    h, w, _ = grid.shape
    if k < 1:
        raise ShapeError(f"pooling kernel must be positive, got {k}")
    if h % k or w % k:
        raise ShapeError(f"kernel {k} does not divide grid {h}x{w}")


def avg_pool2d(grid: np.ndarray, k: int) -> np.ndarray:
    """Mean over non-overlapping k x k windows of an (h, w, c) grid."""
    _check_pool_args(grid, k)
    h, w, c = grid.shape
    return grid.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3))


def max_pool2d(grid: np.ndarray, k: int) -> np.ndarray:
    """Max over non-overlapping k x k windows of an (h, w, c) grid."""
    _check_pool_args(grid, k)
    h, w, c = grid.shape
    return grid.reshape(h // k, k, w // k, k, c).max(axis=(1, 3))


def reshape(x: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    if len(shape) < 1 or len(shape) > MAX_RANK:
        raise ShapeError(f"target rank must be 1..{MAX_RANK}, got {shape}")
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    return np.ascontiguousarray(x.reshape(shape))


def transpose(x: np.ndarray) -> np.ndarray:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 input, got shape {x.shape}")
    return np.ascontiguousarray(x.T)


def concat_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack two matrices vertically; column counts must agree."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"concat_rows needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows column counts differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)


def scale(x: np.ndarray, s: float) -> np.ndarray:
    return x * FLOAT(s)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return a + b


# --- binary tensor file format -------------------------------------------
#
#   magic  4 bytes  "ADMT"
#   version u8      1
#   rank    u8
#   dims    rank x u64 little-endian
#   payload float64 little-endian, row-major

MAGIC = b"ADMT"
FORMAT_VERSION = 1


def tensor_to_bytes(x: np.ndarray) -> bytes:
    x = as_tensor(x)
    header = MAGIC + struct.pack("<BB", FORMAT_VERSION, x.ndim)
    dims = struct.pack(f"<{x.ndim}Q", *x.shape)
    return header + dims + x.astype("<f8").tobytes(order="C")


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}; expected {MAGIC!r}")
    version, rank = struct.unpack_from("<BB", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    if rank < 1 or rank > MAX_RANK:
        raise ValueError(f"rank {rank} outside supported range 1..{MAX_RANK}")
    dims = struct.unpack_from(f"<{rank}Q", blob, 6)
    offset = 6 + 8 * rank
    count = int(np.prod(dims))
    expected = offset + 8 * count
    if len(blob) != expected:
        raise ValueError(f"payload length {len(blob)} != expected {expected} for dims {dims}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return as_tensor(data.reshape(dims))


def save_tensor(path, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(x))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())

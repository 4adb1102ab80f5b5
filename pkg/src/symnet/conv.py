"""2D cross-correlation: direct, Toeplitz and reduced-multiply paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .kernels import SymmetricKernel


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ConvGeometry:
    input_size: int
    kernel_size: int
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.padding < 0 or self.stride < 1 or self.kernel_size < 1:
            raise GeometryError(f"invalid geometry {self}")
        span = self.input_size + 2 * self.padding - self.kernel_size
        if span < 0 or span % self.stride:
            raise GeometryError(
                f"(N_in + 2 N_P - N_w) = {span} is not a non-negative multiple "
                f"of stride {self.stride}"
            )

    @property
    def output_size(self) -> int:
        return (self.input_size + 2 * self.padding - self.kernel_size) // self.stride + 1


def out_dim(geometry: ConvGeometry) -> int:
    return geometry.output_size


def _check(image: np.ndarray, kernel: np.ndarray, g: ConvGeometry) -> None:
    if image.shape != (g.input_size, g.input_size):
        raise ValueError(f"image shape {image.shape} does not match geometry {g}")
    if kernel.shape != (g.kernel_size, g.kernel_size):
        raise ValueError(f"kernel shape {kernel.shape} does not match geometry {g}")


def patches(image: np.ndarray, g: ConvGeometry) -> np.ndarray:
    """Strided receptive-field view of shape ``(N_out, N_out, N_w, N_w)``."""
    x = np.pad(image, g.padding) if g.padding else image
    view = sliding_window_view(x, (g.kernel_size, g.kernel_size))
    return view[:: g.stride, :: g.stride]


def cross_correlate(image: np.ndarray, kernel: np.ndarray, g: ConvGeometry) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check(image, kernel, g)
    return np.einsum("ijkl,kl->ij", patches(image, g), kernel)


def build_toeplitz(kernel: np.ndarray, g: ConvGeometry) -> np.ndarray:
    """Dense operator T with ``T @ image.ravel() == cross_correlate(...).ravel()``.

    Shape is ``(N_out**2, N_in**2)``. Taps that land in the zero padding are
    dropped, so border rows hold fewer than N_w**2 nonzeros.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (g.kernel_size, g.kernel_size):
        raise ValueError(f"kernel shape {kernel.shape} does not match geometry {g}")
    n_in, n_out = g.input_size, g.output_size
    op = np.zeros((n_out * n_out, n_in * n_in))
    for oi in range(n_out):
        for oj in range(n_out):
            row = oi * n_out + oj
            top = oi * g.stride - g.padding
            left = oj * g.stride - g.padding
            for ki in range(g.kernel_size):
                r = top + ki
                if not 0 <= r < n_in:
                    continue
                for kj in range(g.kernel_size):
                    c = left + kj
                    if 0 <= c < n_in:
                        op[row, r * n_in + c] = kernel[ki, kj]
    return op


def toeplitz_forward(image: np.ndarray, kernel: np.ndarray, g: ConvGeometry) -> np.ndarray:
    op = build_toeplitz(kernel, g)
    return (op @ np.asarray(image, dtype=np.float64).ravel()).reshape(g.output_size, g.output_size)


class MultiplyCounter:
    """Tally of scalar multiplications performed by ``symmetric_forward``."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def per_pixel(self, g: ConvGeometry) -> float:
        return self.count / (g.output_size * g.output_size)


def symmetric_forward(
    image: np.ndarray,
    kernel: SymmetricKernel,
    g: ConvGeometry,
    counter: MultiplyCounter | None = None,
) -> np.ndarray:
    """Cross-correlate using one multiply per canonical weight per pixel.

    The inputs under each tied group are combined first (added, or
    subtracted for the negative half of a T2B pair), then scaled once by the
    group's weight. The T2B center input is never read.
    """
    image = np.asarray(image, dtype=np.float64)
    if kernel.kernel_size != g.kernel_size:
        raise ValueError(f"kernel size {kernel.kernel_size} does not match geometry {g}")
    if image.shape != (g.input_size, g.input_size):
        raise ValueError(f"image shape {image.shape} does not match geometry {g}")
    p = patches(image, g)
    out = np.zeros((g.output_size, g.output_size))
    for w, members in zip(kernel.canonical, kernel.orbit_map.groups):
        (i, j, s), rest = members[0], members[1:]
        acc = p[:, :, i, j].copy() if s > 0 else -p[:, :, i, j]
        for i, j, s in rest:
            if s > 0:
                acc += p[:, :, i, j]
            else:
                acc -= p[:, :, i, j]
        out += w * acc
        if counter is not None:
            counter.add(acc.size)
    return out


def dilate_for_stride(error: np.ndarray, stride: int) -> np.ndarray:
    """Insert ``stride - 1`` zero rows and columns between adjacent entries."""
    error = np.asarray(error)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return error
    h, w = error.shape[-2:]
    out = np.zeros(error.shape[:-2] + ((h - 1) * stride + 1, (w - 1) * stride + 1), dtype=error.dtype)
    out[..., ::stride, ::stride] = error
    return out


def kernel_gradient(layer_input: np.ndarray, error: np.ndarray, g: ConvGeometry) -> np.ndarray:
    """Gradient of the loss w.r.t. the kernel of a single-channel layer.

    Cross-correlates the (padded) layer input with the error map dilated for
    the stride; the result has the kernel's shape.
    """
    x = np.asarray(layer_input, dtype=np.float64)
    if g.padding:
        x = np.pad(x, g.padding)
    d = dilate_for_stride(np.asarray(error, dtype=np.float64), g.stride)
    inner = ConvGeometry(x.shape[0], d.shape[0], 0, 1)
    out = cross_correlate(x, d, inner)
    if out.shape != (g.kernel_size, g.kernel_size):
        raise ValueError(f"error map shape {error.shape} does not match geometry {g}")
    return out


def input_gradient(kernel: np.ndarray, error: np.ndarray, g: ConvGeometry) -> np.ndarray:
    """Back-propagate an error map through one cross-correlation (``e T_toe``)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    error = np.asarray(error, dtype=np.float64)
    n_pad = g.input_size + 2 * g.padding
    out = np.zeros((n_pad, n_pad))
    span = (g.output_size - 1) * g.stride + 1
    for ki in range(g.kernel_size):
        for kj in range(g.kernel_size):
            out[ki : ki + span : g.stride, kj : kj + span : g.stride] += kernel[ki, kj] * error
    if g.padding:
        out = out[g.padding : -g.padding, g.padding : -g.padding]
    return out

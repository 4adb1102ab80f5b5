"""Symmetry-constrained convolution kernels.

A kernel of class T1, T2A or T2B stores one canonical weight per tied group
of coordinates (an orbit). The full N_w x N_w matrix is recovered by
expansion, and kernel-shaped gradients are reduced back to canonical
gradients by folding.

Coordinates are 0-based ``(row, col)`` throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class SymmetryClass(str, enum.Enum):
    R = "R"
    T1 = "T1"
    T2A = "T2A"
    T2B = "T2B"

    @classmethod
    def parse(cls, token: str) -> "SymmetryClass":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(
                f"unknown symmetry class {token!r}; expected one of "
                f"{', '.join(c.value for c in cls)}"
            ) from None


class T2BMode(str, enum.Enum):
    """How kernel gradients are folded for T2B layers.

    ``LITERAL`` updates the positive half with its own gradient and mirrors
    the negated value into the negative half. ``CONSISTENT`` uses the exact
    derivative of the tied parameterization (difference of the pair).
    """

    LITERAL = "literal"
    CONSISTENT = "consistent"


def _check_size(kernel_size: int) -> None:
    if not isinstance(kernel_size, (int, np.integer)) or kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be an odd integer >= 3, got {kernel_size!r}")


def count_parameters(cls: SymmetryClass, kernel_size: int) -> int:
    """Number of free weights in one kernel of the given class and size."""
    _check_size(kernel_size)
    cls = SymmetryClass(cls)
    half = kernel_size // 2
    if cls is SymmetryClass.T1:
        return (half + 1) * (half + 2) // 2
    if cls is SymmetryClass.T2A:
        return half * kernel_size + half + 1
    if cls is SymmetryClass.T2B:
        return half * kernel_size + half
    return kernel_size * kernel_size


Member = tuple[int, int, int]  # (row, col, sign)


@dataclass(frozen=True)
class OrbitMap:
    symmetry: SymmetryClass
    kernel_size: int
    groups: tuple[tuple[Member, ...], ...]
    # Derived dense views, filled in __post_init__.
    index: np.ndarray = field(init=False, repr=False, compare=False)
    sign: np.ndarray = field(init=False, repr=False, compare=False)
    expansion: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.kernel_size
        index = np.full((n, n), -1, dtype=np.intp)
        sign = np.zeros((n, n))
        expansion = np.zeros((len(self.groups), n * n))
        for k, members in enumerate(self.groups):
            for i, j, s in members:
                index[i, j] = k
                sign[i, j] = s
                expansion[k, i * n + j] = s
        for arr in (index, sign, expansion):
            arr.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "sign", sign)
        object.__setattr__(self, "expansion", expansion)

    @property
    def center(self) -> tuple[int, int]:
        c = self.kernel_size // 2
        return (c, c)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def fold_matrix(self, t2b_mode: T2BMode = T2BMode.LITERAL) -> np.ndarray:
        """Matrix F with ``canonical_grad = F @ grad.ravel()``."""
        if self.symmetry is SymmetryClass.T2B and T2BMode(t2b_mode) is T2BMode.LITERAL:
            return np.clip(self.expansion, 0.0, None)
        return self.expansion


def _reflect(i: int, j: int, n: int) -> tuple[int, int]:
    return n - 1 - i, n - 1 - j


@lru_cache(maxsize=None)
def build_orbit_map(cls: SymmetryClass, kernel_size: int) -> OrbitMap:
    """Partition kernel coordinates into tied-weight groups.

    Canonical indices follow first appearance in a row-major scan. T1 groups
    coordinates whose unordered absolute offsets from the center coincide
    (dihedral orbits); T2A/T2B pair each coordinate with its point
    reflection through the center. The T2B center belongs to no group.
    """
    _check_size(kernel_size)
    cls = SymmetryClass(cls)
    n = kernel_size
    c = n // 2
    order: dict[object, int] = {}
    members: list[list[Member]] = []

    for i in range(n):
        for j in range(n):
            if cls is SymmetryClass.R:
                key = (i, j)
                s = 1
            elif cls is SymmetryClass.T1:
                key = tuple(sorted((abs(i - c), abs(j - c))))
                s = 1
            else:
                ri, rj = _reflect(i, j, n)
                key = min((i, j), (ri, rj))
                if cls is SymmetryClass.T2B:
                    if (i, j) == (c, c):
                        continue
                    s = 1 if (i, j) < (c, c) else -1
                else:
                    s = 1
            if key not in order:
                order[key] = len(members)
                members.append([])
            members[order[key]].append((i, j, s))

    groups = tuple(tuple(g) for g in members)
    return OrbitMap(symmetry=cls, kernel_size=n, groups=groups)


@dataclass
class SymmetricKernel:
    symmetry: SymmetryClass
    kernel_size: int
    canonical: np.ndarray

    def __post_init__(self):
        self.symmetry = SymmetryClass(self.symmetry)
        self.canonical = np.asarray(self.canonical, dtype=np.float64)
        expected = count_parameters(self.symmetry, self.kernel_size)
        if self.canonical.shape != (expected,):
            raise ValueError(
                f"{self.symmetry.value} kernel of size {self.kernel_size} needs "
                f"{expected} canonical weights, got shape {self.canonical.shape}"
            )

    @property
    def orbit_map(self) -> OrbitMap:
        return build_orbit_map(self.symmetry, self.kernel_size)

    def expand(self) -> np.ndarray:
        return expand(self)


def expand_canonical(orbit: OrbitMap, canonical: np.ndarray) -> np.ndarray:
    """Expand canonical weights of shape ``(..., n_groups)`` to ``(..., N_w, N_w)``."""
    canonical = np.asarray(canonical, dtype=np.float64)
    if canonical.shape[-1] != orbit.n_groups:
        raise ValueError(
            f"expected {orbit.n_groups} canonical weights, got {canonical.shape[-1]}"
        )
    n = orbit.kernel_size
    # Gather with sign instead of a matmul so tied entries are bit-identical.
    full = canonical[..., np.where(orbit.index < 0, 0, orbit.index)] * orbit.sign
    full[..., orbit.index < 0] = 0.0
    return full.reshape(canonical.shape[:-1] + (n, n))


def expand(kernel: SymmetricKernel) -> np.ndarray:
    return expand_canonical(kernel.orbit_map, kernel.canonical)


def fold_gradient(
    cls: SymmetryClass,
    orbit: OrbitMap,
    grad: np.ndarray,
    t2b_mode: T2BMode = T2BMode.LITERAL,
) -> np.ndarray:
    """Reduce kernel-shaped gradients ``(..., N_w, N_w)`` to canonical gradients.

    Gradients are summed over each orbit. In literal T2B mode only the
    positive member of each pair contributes.
    """
    cls = SymmetryClass(cls)
    if cls is not orbit.symmetry:
        raise ValueError(f"orbit map is for {orbit.symmetry.value}, not {cls.value}")
    grad = np.asarray(grad, dtype=np.float64)
    n = orbit.kernel_size
    if grad.shape[-2:] != (n, n):
        raise ValueError(f"gradient must end in shape {(n, n)}, got {grad.shape}")
    flat = grad.reshape(grad.shape[:-2] + (n * n,))
    return flat @ orbit.fold_matrix(t2b_mode).T


@dataclass(frozen=True)
class InitSpec:
    fan_in: int
    seed: int = 0
    mean: float = 0.0

    @property
    def std(self) -> float:
        return 1.0 / np.sqrt(self.fan_in)

    def __post_init__(self):
        if self.fan_in <= 0:
            raise ValueError("fan_in must be positive")


def init_canonical(
    cls: SymmetryClass, kernel_size: int, std: float, rng: np.random.Generator, count: int = 1
) -> np.ndarray:
    """Draw ``count`` canonical vectors i.i.d. from N(0, std^2)."""
    n = count_parameters(cls, kernel_size)
    return rng.normal(0.0, std, size=(count, n))


def init_kernel(cls: SymmetryClass, kernel_size: int, spec: InitSpec) -> SymmetricKernel:
    rng = np.random.default_rng(spec.seed)
    canonical = spec.mean + init_canonical(cls, kernel_size, spec.std, rng)[0]
    return SymmetricKernel(SymmetryClass(cls), kernel_size, canonical)


def satisfies_symmetry(cls: SymmetryClass, w: np.ndarray) -> bool:
    """Exact check of a kernel against its class's defining equations."""
    cls = SymmetryClass(cls)
    w = np.asarray(w)
    if cls is SymmetryClass.R:
        return True
    flipped = w[::-1, ::-1]
    if cls is SymmetryClass.T2A:
        return bool(np.array_equal(w, flipped))
    if cls is SymmetryClass.T2B:
        c = w.shape[0] // 2
        return bool(np.array_equal(w, -flipped)) and w[c, c] == 0.0
    return bool(
        np.array_equal(w, w[::-1, :])
        and np.array_equal(w, w[:, ::-1])
        and np.array_equal(w, w.T)
    )

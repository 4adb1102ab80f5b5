"""The four-layer CNN: two symmetric conv layers, two dense layers.

Conv kernels are held in canonical form (one row of tied weights per
feature map) and expanded on every forward pass, so a kernel can never
leave its symmetry class. Each second-layer map reads exactly one
first-layer map, ``m % conv1_maps``; conv layers have no bias.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .conv import ConvGeometry
from .kernels import (
    SymmetryClass,
    T2BMode,
    build_orbit_map,
    count_parameters,
    expand_canonical,
    fold_gradient,
    init_canonical,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Condition:
    mode: str
    layer1: SymmetryClass
    layer2: SymmetryClass

    def __post_init__(self):
        if self.mode not in ("L", "F"):
            raise ValueError(f"mode must be 'L' or 'F', got {self.mode!r}")
        object.__setattr__(self, "layer1", SymmetryClass(self.layer1))
        object.__setattr__(self, "layer2", SymmetryClass(self.layer2))

    @classmethod
    def parse(cls, text: str) -> "Condition":
        parts = text.strip().upper().split("-")
        if len(parts) == 2:
            parts = ["L"] + parts
        if len(parts) != 3:
            raise ValueError(
                f"invalid condition {text!r}; expected one of: {', '.join(CONDITION_NAMES)}"
            )
        try:
            return cls(parts[0], SymmetryClass.parse(parts[1]), SymmetryClass.parse(parts[2]))
        except ValueError:
            raise ValueError(
                f"invalid condition {text!r}; expected one of: {', '.join(CONDITION_NAMES)}"
            ) from None

    @property
    def name(self) -> str:
        return f"{self.mode}-{self.layer1.value}-{self.layer2.value}"

    @property
    def learn_conv(self) -> bool:
        return self.mode == "L"

    def __str__(self) -> str:
        return self.name


_PAIRS = [("R", "R"), ("T1", "T1"), ("T2A", "T2A"), ("T2B", "T2B"), ("T1", "R"), ("T2A", "R"), ("T2B", "R")]
CONDITION_NAMES = [f"{mode}-{a}-{b}" for mode in "LF" for a, b in _PAIRS]
ALL_CONDITIONS = [Condition.parse(name) for name in CONDITION_NAMES]
BASELINE = "L-R-R"


@dataclass(frozen=True)
class Architecture:
    input_size: int = 29
    conv1_maps: int = 5
    conv1_kernel: int = 5
    conv1_stride: int = 2
    conv2_maps: int = 50
    conv2_kernel: int = 5
    conv2_stride: int = 2
    hidden: int = 100
    classes: int = 10

    @property
    def geometry1(self) -> ConvGeometry:
        return ConvGeometry(self.input_size, self.conv1_kernel, 0, self.conv1_stride)

    @property
    def geometry2(self) -> ConvGeometry:
        return ConvGeometry(self.geometry1.output_size, self.conv2_kernel, 0, self.conv2_stride)

    @property
    def features(self) -> int:
        return self.conv2_maps * self.geometry2.output_size ** 2

    def fan_in(self) -> dict[str, int]:
        return {
            "conv1": self.conv1_kernel ** 2,
            "conv2": self.conv2_kernel ** 2,
            "dense1": self.features,
            "dense2": self.hidden,
        }


DEFAULT_ARCHITECTURE = Architecture()


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    learnable: bool
    activation: str
    maps: int | None = None
    symmetry: str | None = None
    kernel_size: int | None = None
    stride: int | None = None
    inputs: int | None = None
    outputs: int | None = None


def count_network_parameters(condition: Condition | str, arch: Architecture = DEFAULT_ARCHITECTURE) -> tuple[int, int]:
    """(feature-extraction, classifier) free-parameter counts."""
    if isinstance(condition, str):
        condition = Condition.parse(condition)
    features = arch.conv1_maps * count_parameters(condition.layer1, arch.conv1_kernel) + (
        arch.conv2_maps * count_parameters(condition.layer2, arch.conv2_kernel)
    )
    classifier = arch.features * arch.hidden + arch.hidden + arch.hidden * arch.classes + arch.classes
    return features, classifier


def _relu(x):
    return np.maximum(x, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy."""
    p = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(p, np.finfo(np.float64).tiny))


def _scatter_matrix(g: ConvGeometry) -> np.ndarray:
    """0/1 matrix mapping (output pixel, kernel tap) pairs to input pixels."""
    n_out, k = g.output_size, g.kernel_size
    s = np.zeros((n_out * n_out * k * k, g.input_size * g.input_size))
    for oi in range(n_out):
        for oj in range(n_out):
            for ki in range(k):
                for kj in range(k):
                    row = ((oi * n_out + oj) * k + ki) * k + kj
                    s[row, (oi * g.stride + ki) * g.input_size + oj * g.stride + kj] = 1.0
    return s


@dataclass
class Cache:
    x: np.ndarray
    p1: np.ndarray
    z1: np.ndarray
    p2: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    probs: np.ndarray
    k1: np.ndarray = field(repr=False)
    k2: np.ndarray = field(repr=False)


class Network:
    """Weights and forward/backward passes for one condition.

    Parameters live in ``self.params``: ``conv1`` and ``conv2`` are canonical
    arrays of shape ``(maps, n_groups)``; ``dense1.w`` is ``(hidden,
    features)`` and ``dense2.w`` is ``(classes, hidden)``.
    """

    def __init__(
        self,
        condition: Condition | str,
        arch: Architecture = DEFAULT_ARCHITECTURE,
        t2b_mode: T2BMode | str = T2BMode.LITERAL,
        seed: int | None = 0,
    ):
        if isinstance(condition, str):
            condition = Condition.parse(condition)
        self.condition = condition
        self.arch = arch
        self.t2b_mode = T2BMode(t2b_mode)
        self.orbit1 = build_orbit_map(condition.layer1, arch.conv1_kernel)
        self.orbit2 = build_orbit_map(condition.layer2, arch.conv2_kernel)
        self.fan_in = arch.fan_in()
        self._src = np.arange(arch.conv2_maps) % arch.conv1_maps
        self._route = np.zeros((arch.conv2_maps, arch.conv1_maps))
        self._route[np.arange(arch.conv2_maps), self._src] = 1.0
        self._scatter2 = _scatter_matrix(arch.geometry2)
        self.params: dict[str, np.ndarray] = {}
        self.metadata: dict[str, Any] = {}
        if seed is not None:
            self.initialize(seed)

    def initialize(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        a, c = self.arch, self.condition
        std = {k: 1.0 / np.sqrt(m) for k, m in self.fan_in.items()}
        self.params = {
            "conv1": init_canonical(c.layer1, a.conv1_kernel, std["conv1"], rng, a.conv1_maps),
            "conv2": init_canonical(c.layer2, a.conv2_kernel, std["conv2"], rng, a.conv2_maps),
            "dense1.w": rng.normal(0.0, std["dense1"], size=(a.hidden, a.features)),
            "dense1.b": np.zeros(a.hidden),
            "dense2.w": rng.normal(0.0, std["dense2"], size=(a.classes, a.hidden)),
            "dense2.b": np.zeros(a.classes),
        }

    def layer_specs(self) -> list[LayerSpec]:
        a, c = self.arch, self.condition
        return [
            LayerSpec("conv", c.learn_conv, "relu", a.conv1_maps, c.layer1.value, a.conv1_kernel, a.conv1_stride),
            LayerSpec("conv", c.learn_conv, "relu", a.conv2_maps, c.layer2.value, a.conv2_kernel, a.conv2_stride),
            LayerSpec("dense", True, "relu", inputs=a.features, outputs=a.hidden),
            LayerSpec("dense", True, "softmax", inputs=a.hidden, outputs=a.classes),
        ]

    def kernels(self) -> tuple[np.ndarray, np.ndarray]:
        """Expanded kernels, ``(maps, N_w, N_w)`` for each conv layer."""
        return (
            expand_canonical(self.orbit1, self.params["conv1"]),
            expand_canonical(self.orbit2, self.params["conv2"]),
        )

    def learnable(self) -> list[str]:
        names = ["dense1.w", "dense1.b", "dense2.w", "dense2.b"]
        if self.condition.learn_conv:
            names = ["conv1", "conv2"] + names
        return names

    def learning_rates(self, lr: float) -> dict[str, float]:
        """Per-parameter step size ``lr / sqrt(fan_in)`` of the owning layer."""
        scale = {k: lr / np.sqrt(m) for k, m in self.fan_in.items()}
        return {name: scale[name.split(".")[0]] for name in self.params}

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Cache]:
        """Class probabilities for a batch ``(B, N, N)`` or a single image."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        a = self.arch
        if x.shape[1:] != (a.input_size, a.input_size):
            raise ValueError(f"expected images of shape {(a.input_size, a.input_size)}, got {x.shape[1:]}")
        k1, k2 = self.kernels()
        batch = len(x)
        g1, g2 = a.geometry1, a.geometry2
        n1, n2 = g1.output_size, g2.output_size
        s1, s2 = a.conv1_stride, a.conv2_stride
        # Patches as (batch, [map,] output pixel, kernel tap) matrices.
        p1 = sliding_window_view(x, (a.conv1_kernel,) * 2, axis=(1, 2))[:, ::s1, ::s1]
        p1 = p1.reshape(batch, n1 * n1, -1)
        z1 = (p1 @ k1.reshape(a.conv1_maps, -1).T).transpose(0, 2, 1)
        a1 = _relu(z1).reshape(batch, a.conv1_maps, n1, n1)
        p2 = sliding_window_view(a1, (a.conv2_kernel,) * 2, axis=(2, 3))[:, :, ::s2, ::s2]
        p2 = p2[:, self._src].reshape(batch, a.conv2_maps, n2 * n2, -1)
        z2 = (p2 @ k2.reshape(a.conv2_maps, -1, 1))[..., 0]
        a2 = _relu(z2).reshape(batch, -1)
        z3 = a2 @ self.params["dense1.w"].T + self.params["dense1.b"]
        a3 = _relu(z3)
        z4 = a3 @ self.params["dense2.w"].T + self.params["dense2.b"]
        probs = softmax(z4)
        return probs, Cache(x, p1, z1, p2, z2, a2, z3, a3, probs, k1, k2)

    def predict_proba(self, x: np.ndarray, batch_size: int = 500) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        return np.concatenate([self.forward(x[i : i + batch_size])[0] for i in range(0, len(x), batch_size)])

    def output_delta(self, cache: Cache, labels: np.ndarray) -> np.ndarray:
        """Gradient of the batch-mean cross-entropy w.r.t. the softmax inputs."""
        labels = np.asarray(labels).reshape(-1)
        delta = cache.probs.copy()
        delta[np.arange(len(labels)), labels] -= 1.0
        return delta / len(labels)

    def backward(self, cache: Cache | None, labels) -> dict[str, np.ndarray]:
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        return self.backward_from_delta(cache, self.output_delta(cache, labels))

    def backward_from_delta(self, cache: Cache, delta: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every learnable parameter given the output-layer delta.

        Conv gradients are already folded to canonical form.
        """
        a = self.arch
        grads = {
            "dense2.w": delta.T @ cache.a3,
            "dense2.b": delta.sum(axis=0),
        }
        dz3 = (delta @ self.params["dense2.w"]) * (cache.z3 > 0)
        grads["dense1.w"] = dz3.T @ cache.a2
        grads["dense1.b"] = dz3.sum(axis=0)
        if not self.condition.learn_conv:
            return grads

        batch = len(delta)
        m1, m2 = a.conv1_maps, a.conv2_maps
        dz2 = (dz3 @ self.params["dense1.w"]).reshape(cache.z2.shape) * (cache.z2 > 0)
        n2sq = dz2.shape[-1]
        gk2 = (
            dz2.transpose(1, 0, 2).reshape(m2, 1, batch * n2sq)
            @ cache.p2.transpose(1, 0, 2, 3).reshape(m2, batch * n2sq, -1)
        )[:, 0, :]

        # Route each second-layer error onto its source map, then scatter
        # every (output pixel, tap) contribution to its input position.
        taps = dz2[..., None] * cache.k2.reshape(1, m2, 1, -1)
        per_source = self._route.T @ taps.reshape(batch, m2, -1)
        da1 = per_source @ self._scatter2
        dz1 = da1 * (cache.z1 > 0)
        n1sq = dz1.shape[-1]
        gk1 = dz1.transpose(1, 0, 2).reshape(m1, batch * n1sq) @ cache.p1.reshape(batch * n1sq, -1)

        k1, k2 = a.conv1_kernel, a.conv2_kernel
        gk1 = gk1.reshape(m1, k1, k1)
        gk2 = gk2.reshape(m2, k2, k2)
        grads["conv1"] = fold_gradient(self.orbit1.symmetry, self.orbit1, gk1, self.t2b_mode)
        grads["conv2"] = fold_gradient(self.orbit2.symmetry, self.orbit2, gk2, self.t2b_mode)
        return grads

    def sgd_step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """In-place update; parameters without a gradient (frozen layers) are untouched."""
        rates = self.learning_rates(lr)
        for name in self.learnable():
            if name in grads:
                self.params[name] -= rates[name] * grads[name]

    def loss(self, x: np.ndarray, labels) -> float:
        probs, _ = self.forward(x)
        return float(cross_entropy(probs, np.asarray(labels).reshape(-1)).mean())

    def copy(self) -> "Network":
        other = Network(self.condition, self.arch, self.t2b_mode, seed=None)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.metadata = json.loads(json.dumps(self.metadata))
        return other


# -- checkpointing -----------------------------------------------------------


class CheckpointError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _hex(arr: np.ndarray) -> list:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        return [float(v).hex() for v in arr]
    return [_hex(row) for row in arr]


def _unhex(data, field: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        flat = np.array(
            [float.fromhex(v) for v in np.asarray(data, dtype=object).ravel()], dtype=np.float64
        )
        arr = flat.reshape(np.asarray(data, dtype=object).shape)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(field, f"not an array of hex floats ({exc})") from None
    if arr.shape != shape:
        raise CheckpointError(field, f"expected shape {shape}, got {arr.shape}")
    return arr


def save_checkpoint(net: Network, path: str | Path) -> None:
    doc = {
        "format": "symnet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "condition": net.condition.name,
        "t2b_mode": net.t2b_mode.value,
        "architecture": asdict(net.arch),
        "layers": [
            {k: v for k, v in asdict(spec).items() if v is not None} for spec in net.layer_specs()
        ],
        "weights": {name: _hex(arr) for name, arr in net.params.items()},
        "metadata": net.metadata,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> Network:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError("<document>", f"invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise CheckpointError("<document>", "top level must be an object")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError("version", f"unsupported version {doc.get('version')!r}")
    try:
        condition = Condition.parse(doc["condition"])
    except (KeyError, ValueError, AttributeError) as exc:
        raise CheckpointError("condition", str(exc)) from None
    try:
        arch = Architecture(**doc["architecture"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError("architecture", str(exc)) from None
    try:
        t2b_mode = T2BMode(doc.get("t2b_mode", "literal"))
    except ValueError as exc:
        raise CheckpointError("t2b_mode", str(exc)) from None

    net = Network(condition, arch, t2b_mode, seed=None)
    weights = doc.get("weights")
    if not isinstance(weights, dict):
        raise CheckpointError("weights", "missing or not an object")
    shapes = {
        "conv1": (arch.conv1_maps, net.orbit1.n_groups),
        "conv2": (arch.conv2_maps, net.orbit2.n_groups),
        "dense1.w": (arch.hidden, arch.features),
        "dense1.b": (arch.hidden,),
        "dense2.w": (arch.classes, arch.hidden),
        "dense2.b": (arch.classes,),
    }
    for name, shape in shapes.items():
        if name not in weights:
            raise CheckpointError(f"weights.{name}", "missing")
        net.params[name] = _unhex(weights[name], f"weights.{name}", shape)
    net.metadata = doc.get("metadata") or {}
    return net

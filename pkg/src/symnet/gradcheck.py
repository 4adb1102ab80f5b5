"""Central finite-difference check of every learnable parameter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Architecture, Condition, Network

# Small enough to check every scalar in well under a second per condition.
REDUCED_ARCHITECTURE = Architecture(
    input_size=15,
    conv1_maps=2,
    conv1_kernel=5,
    conv1_stride=2,
    conv2_maps=4,
    conv2_kernel=3,
    conv2_stride=1,
    hidden=6,
    classes=3,
)


@dataclass
class GradCheckResult:
    condition: str
    checked: int
    worst_param: str
    worst_index: tuple
    worst_error: float

    def passed(self, tolerance: float) -> bool:
        return self.worst_error <= tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def gradient_check(
    condition: Condition | str,
    arch: Architecture = REDUCED_ARCHITECTURE,
    eps: float = 1e-6,
    seed: int = 1,
    batch: int = 2,
) -> GradCheckResult:
    """Compare backprop gradients with central differences of the batch loss.

    T2B layers are folded in consistent mode, the only mode whose canonical
    gradient is the true derivative.
    """
    net = Network(condition, arch, "consistent", seed=seed)
    rng = np.random.default_rng(seed + 1000)
    x = rng.normal(size=(batch, arch.input_size, arch.input_size))
    y = rng.integers(0, arch.classes, size=batch)
    _, cache = net.forward(x)
    grads = net.backward(cache, y)

    worst = (0.0, "", ())
    checked = 0
    for name in net.learnable():
        arr = net.params[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = net.loss(x, y)
            arr[idx] = old - eps
            down = net.loss(x, y)
            arr[idx] = old
            err = relative_error(grads[name][idx], (up - down) / (2 * eps))
            checked += 1
            if err > worst[0]:
                worst = (err, name, idx)
    return GradCheckResult(net.condition.name, checked, worst[1], worst[2], worst[0])

"""Linear-phase checks for 1D FIR filters and 2D kernels."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DEFAULT_GRID = np.linspace(0.0, np.pi, 256)
PHASE_THRESHOLD = 1e-9


@dataclass
class FrequencyResponse:
    omega: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def complex(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)


def _odd_length(b: np.ndarray) -> int:
    if b.ndim != 1 or len(b) % 2 == 0:
        raise ValueError(f"coefficients must be a 1D array of odd length, got shape {b.shape}")
    return (len(b) - 1) // 2


def type1_response(b, omega=None, atol: float = 0.0) -> FrequencyResponse:
    """Amplitude and phase of a symmetric odd-length (Type I) FIR filter."""
    b = np.asarray(b, dtype=np.float64)
    m = _odd_length(b)
    if not np.allclose(b, b[::-1], rtol=0.0, atol=atol):
        raise ValueError("Type I filters need symmetric coefficients b[n] == b[N-1-n]")
    omega = DEFAULT_GRID if omega is None else np.asarray(omega, dtype=np.float64)
    amp = np.full_like(omega, b[m])
    for n in range(m):
        amp += 2.0 * b[n] * np.cos((m - n) * omega)
    return FrequencyResponse(omega, amp, -m * omega)


def type3_response(b, omega=None, atol: float = 0.0) -> FrequencyResponse:
    """Amplitude and phase of an antisymmetric odd-length (Type III) FIR filter."""
    b = np.asarray(b, dtype=np.float64)
    m = _odd_length(b)
    if not np.allclose(b, -b[::-1], rtol=0.0, atol=atol):
        raise ValueError("Type III filters need antisymmetric coefficients b[n] == -b[N-1-n]")
    omega = DEFAULT_GRID if omega is None else np.asarray(omega, dtype=np.float64)
    amp = np.zeros_like(omega)
    for n in range(m):
        amp += 2.0 * b[n] * np.sin((m - n) * omega)
    return FrequencyResponse(omega, amp, -m * omega + np.pi / 2)


class PhaseVerdict(str, enum.Enum):
    SYMMETRIC_REAL = "symmetric-real"
    ANTISYMMETRIC_IMAGINARY = "antisymmetric-imaginary"
    NEITHER = "neither"


@dataclass
class PhaseReport:
    verdict: PhaseVerdict
    deviation: float
    imag_deviation: float
    real_deviation: float


def centered_spectrum(kernel: np.ndarray) -> np.ndarray:
    """2D DFT with the center tap moved to the origin."""
    kernel = np.asarray(kernel, dtype=np.float64)
    return np.fft.fft2(np.fft.ifftshift(kernel))


def spectral_phase_report(
    kernel: np.ndarray, expected: PhaseVerdict | None = None, threshold: float = PHASE_THRESHOLD
) -> PhaseReport:
    """Classify a kernel's centered spectrum as purely real, purely imaginary or neither.

    Deviations are ``max|Im F| / ||W||`` and ``max|Re F| / ||W||``. When
    ``expected`` is given, the reported deviation is the one relevant to it.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError(f"expected an odd square kernel, got shape {kernel.shape}")
    norm = np.linalg.norm(kernel)
    if norm == 0.0:
        return PhaseReport(PhaseVerdict.SYMMETRIC_REAL, 0.0, 0.0, 0.0)
    spec = centered_spectrum(kernel)
    imag_dev = float(np.abs(spec.imag).max() / norm)
    real_dev = float(np.abs(spec.real).max() / norm)
    if imag_dev <= threshold:
        verdict = PhaseVerdict.SYMMETRIC_REAL
    elif real_dev <= threshold:
        verdict = PhaseVerdict.ANTISYMMETRIC_IMAGINARY
    else:
        verdict = PhaseVerdict.NEITHER
    if expected is PhaseVerdict.ANTISYMMETRIC_IMAGINARY:
        deviation = real_dev
    elif expected is PhaseVerdict.SYMMETRIC_REAL:
        deviation = imag_dev
    else:
        deviation = imag_dev if verdict is PhaseVerdict.SYMMETRIC_REAL else (
            real_dev if verdict is PhaseVerdict.ANTISYMMETRIC_IMAGINARY else min(imag_dev, real_dev)
        )
    return PhaseReport(verdict, deviation, imag_dev, real_dev)


def expected_verdict(symmetry) -> PhaseVerdict | None:
    """Verdict a kernel of the given symmetry class must receive, or None for R."""
    value = getattr(symmetry, "value", symmetry)
    if value in ("T1", "T2A"):
        return PhaseVerdict.SYMMETRIC_REAL
    if value == "T2B":
        return PhaseVerdict.ANTISYMMETRIC_IMAGINARY
    return None


CSV_HEADER = ("layer", "map", "class", "deviation", "verdict")


def analyze_network_kernels(net, threshold: float = PHASE_THRESHOLD) -> tuple[list[tuple], bool]:
    """Per-kernel rows for every conv layer plus an overall pass flag.

    The flag is False when any T1/T2A/T2B kernel misses its expected verdict
    or exceeds the deviation threshold.
    """
    rows = []
    ok = True
    classes = (net.condition.layer1, net.condition.layer2)
    for layer, (kernels, cls) in enumerate(zip(net.kernels(), classes), start=1):
        want = expected_verdict(cls)
        for m, k in enumerate(kernels):
            rep = spectral_phase_report(k, want, threshold)
            if want is not None and (rep.verdict is not want or rep.deviation > threshold):
                ok = False
            rows.append((layer, m, cls.value, f"{rep.deviation:.3e}", rep.verdict.value))
    return rows, ok

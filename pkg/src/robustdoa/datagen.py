"""Seeded synthetic array snapshots for Gaussian, MVT and eps-contaminated data.

Snapshots follow ``y_l = sqrt(tau_l) (A x_l + n_l)`` with circular complex
Gaussian sources ``x_l`` and white noise ``n_l``. The three data models
differ only in how ``tau_l`` and the noise variance are drawn. True-DOA
steering vectors are evaluated at the exact scenario angles, never snapped
to a dictionary grid.

The module also reads and writes the snapshot file formats used by the CLI.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ArrayGeometry, Dictionary, steering_matrix

MAGIC = b"RDOA"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class Scenario:
    doas_degrees: tuple
    source_powers: tuple
    correlation: float = 0.0

    def __post_init__(self):
        doas = tuple(float(d) for d in np.atleast_1d(self.doas_degrees))
        powers = tuple(float(p) for p in np.atleast_1d(self.source_powers))
        object.__setattr__(self, "doas_degrees", doas)
        object.__setattr__(self, "source_powers", powers)
        if not doas:
            raise ValueError("a scenario needs at least one source")
        if len(doas) != len(powers):
            raise ValueError("doas_degrees and source_powers differ in length")
        if len(set(doas)) != len(doas):
            raise ValueError("scenario DOAs must be distinct")
        if any(abs(d) > 90 for d in doas):
            raise ValueError("scenario DOAs must lie in [-90, 90] degrees")
        if any(not p > 0 for p in powers):
            raise ValueError("source powers must be positive")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError(f"correlation must lie in [0, 1], got {self.correlation}")

    @property
    def n_sources(self) -> int:
        return len(self.doas_degrees)

    def with_doas(self, doas) -> "Scenario":
        return Scenario(tuple(doas), self.source_powers, self.correlation)

    def with_correlation(self, rho: float) -> "Scenario":
        return Scenario(self.doas_degrees, self.source_powers, rho)


# source variances normalized to tr(Gamma) = 1
SCENARIOS = {
    "single": Scenario((-10.0,), (1.0,)),
    "two": Scenario((-10.0, 10.0), (0.5, 0.5)),
    "three": Scenario((-3.0, 2.0, 75.0), (1 / 3, 1 / 3, 1 / 3)),
}


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    MVT = "mvt"
    EPS_CONTAMINATED = "epscont"


@dataclass(frozen=True)
class NoiseModel:
    """Array data model.

    ``sigma2`` is always the total noise variance. For the contaminated
    model the background variance is ``sigma1_sq = sigma2 / (1 - eps + eps lambda^2)``;
    use :meth:`eps_contaminated_background` to fix ``sigma1_sq`` instead.
    """

    kind: NoiseKind
    sigma2: float
    nu_data: float = 2.1
    epsilon: float = 0.05
    lam: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.sigma2 > 0:
            raise ValueError(f"noise variance must be positive, got {self.sigma2}")
        if self.kind is NoiseKind.MVT and not self.nu_data > 0:
            raise ValueError(f"nu_data must be positive, got {self.nu_data}")
        if self.kind is NoiseKind.EPS_CONTAMINATED:
            if not 0.0 <= self.epsilon < 1.0:
                raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
            if not self.lam >= 1.0:
                raise ValueError(f"outlier strength lambda must be >= 1, got {self.lam}")

    @classmethod
    def gaussian(cls, sigma2: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, sigma2)

    @classmethod
    def mvt(cls, sigma2: float, nu_data: float = 2.1) -> "NoiseModel":
        return cls(NoiseKind.MVT, sigma2, nu_data=nu_data)

    @classmethod
    def eps_contaminated(cls, sigma2: float, epsilon: float = 0.05, lam: float = 10.0) -> "NoiseModel":
        return cls(NoiseKind.EPS_CONTAMINATED, sigma2, epsilon=epsilon, lam=lam)

    @classmethod
    def eps_contaminated_background(cls, sigma1_sq: float, epsilon: float = 0.05,
                                    lam: float = 10.0) -> "NoiseModel":
        """Contaminated model with fixed background variance; total grows with lambda."""
        return cls.eps_contaminated(contamination_factor(epsilon, lam) * sigma1_sq, epsilon, lam)

    @property
    def sigma1_sq(self) -> float:
        if self.kind is NoiseKind.EPS_CONTAMINATED:
            return self.sigma2 / contamination_factor(self.epsilon, self.lam)
        return self.sigma2


def contamination_factor(epsilon: float, lam: float) -> float:
    """Ratio of total to background noise variance, ``1 - eps + eps lambda^2``."""
    return 1.0 - epsilon + epsilon * lam ** 2


@dataclass(frozen=True)
class SnapshotMatrix:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2:
            raise ValueError("snapshot data must be an N x L matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("snapshot data contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n_sensors(self) -> int:
        return self.data.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


def asnr_to_sigma2(asnr_db: float, n_sensors: int) -> float:
    """Noise variance for array SNR ``ASNR = N / sigma^2`` given in dB."""
    return n_sensors / 10.0 ** (asnr_db / 10.0)


def sigma2_to_asnr(sigma2: float, n_sensors: int) -> float:
    return 10.0 * np.log10(n_sensors / sigma2)


def source_covariance(scenario: Scenario) -> np.ndarray:
    """K x K source covariance: powers on the diagonal, ``rho sqrt(g_i g_j)`` off it."""
    g = np.sqrt(np.asarray(scenario.source_powers))
    cov = scenario.correlation * np.outer(g, g)
    np.fill_diagonal(cov, g ** 2)
    return cov


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # rank-deficient (coherent sources): factor through the eigendecomposition
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian samples with the given variance."""
    scale = np.sqrt(0.5 * variance)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def source_amplitudes(scenario: Scenario, n_snapshots: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the K x L source amplitude matrix with the scenario's covariance."""
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    factor = _psd_factor(source_covariance(scenario))
    return factor @ complex_normal(rng, (scenario.n_sources, n_snapshots))


def generate(scenario: Scenario, array, noise: NoiseModel, n_snapshots: int,
             rng: np.random.Generator) -> SnapshotMatrix:
    """Draw ``n_snapshots`` array snapshots for a scenario and data model.

    ``array`` may be an :class:`ArrayGeometry` or a :class:`Dictionary`
    (only its geometry is used). Random draws happen in a fixed order:
    sources, unit noise, then the model-specific scale variables, so the
    contaminated model with ``epsilon = 0`` reproduces the Gaussian output
    for the same seed.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    geometry = array.geometry if isinstance(array, Dictionary) else array
    if not isinstance(geometry, ArrayGeometry):
        raise TypeError("array must be an ArrayGeometry or Dictionary")
    n = geometry.n_sensors
    A = steering_matrix(geometry, scenario.doas_degrees)
    x = source_amplitudes(scenario, n_snapshots, rng)
    unit_noise = complex_normal(rng, (n, n_snapshots))

    if noise.kind is NoiseKind.GAUSSIAN:
        y = A @ x + np.sqrt(noise.sigma2) * unit_noise
    elif noise.kind is NoiseKind.MVT:
        v = A @ x + np.sqrt(noise.sigma2) * unit_noise
        s = rng.chisquare(noise.nu_data, n_snapshots)
        tau = noise.nu_data / s
        y = np.sqrt(tau)[None, :] * v
    else:
        # one outlier draw per snapshot: the whole noise vector is inflated
        outlier = rng.random(n_snapshots) < noise.epsilon
        std = np.where(outlier, noise.lam, 1.0) * np.sqrt(noise.sigma1_sq)
        y = A @ x + std[None, :] * unit_noise
    return SnapshotMatrix(y)


def write_snapshots(path, snapshots) -> None:
    """Write snapshots in the little-endian binary format.

    Layout: magic ``RDOA``, u32 N, u32 L, then N*L complex values as
    interleaved f64 (re, im), snapshot after snapshot.
    """
    y = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    n, l = y.shape
    payload = np.asarray(y, dtype="<c16").ravel(order="F").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, n, l) + payload)


def read_snapshot_header(path) -> tuple:
    """``(N, L)`` from the header of a binary snapshot file, without the payload."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise OSError(f"{path}: file is {len(head)} bytes, shorter than the "
                      f"{_HEADER.size}-byte header (offset 0)")
    magic, n, l = _HEADER.unpack(head)
    if magic != MAGIC:
        raise OSError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    return n, l


def read_snapshots(path) -> SnapshotMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise OSError(f"{path}: file is {len(raw)} bytes, shorter than the "
                      f"{_HEADER.size}-byte header (offset 0)")
    magic, n, l = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise OSError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    expected = _HEADER.size + 16 * n * l
    if len(raw) != expected:
        raise OSError(f"{path}: expected {expected} bytes for N={n}, L={l} but found "
                      f"{len(raw)} (data region starts at offset {_HEADER.size})")
    if n < 1 or l < 1:
        raise OSError(f"{path}: header at offset 4 declares empty data (N={n}, L={l})")
    flat = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    return SnapshotMatrix(flat.reshape((n, l), order="F").astype(complex))


def write_snapshots_csv(path, snapshots) -> None:
    """Debug format: 2N rows by L columns, real parts stacked over imaginary parts."""
    y = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    np.savetxt(path, np.vstack([y.real, y.imag]), delimiter=",", fmt="%.17g")


def read_snapshots_csv(path) -> SnapshotMatrix:
    stacked = np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    if stacked.shape[0] % 2:
        raise OSError(f"{path}: expected an even number of rows (re/im), got {stacked.shape[0]}")
    n = stacked.shape[0] // 2
    return SnapshotMatrix(stacked[:n] + 1j * stacked[n:])

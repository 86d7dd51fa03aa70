"""Clustered narrowband mmWave MIMO channel model.

Generates fading realizations as a sum of per-ray rank-one outer products of
uniform-linear-array response vectors, with circularly-symmetric unit-variance
ray gains.  Every realization carries its (phase-fixed) SVD, since all
downstream precoding consumes the singular factors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: element count and spacing in wavelengths."""

    num_elements: int
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if self.num_elements < 1:
            raise ValueError(f"num_elements must be >= 1, got {self.num_elements}")
        if self.spacing_over_wavelength <= 0:
            raise ValueError("spacing_over_wavelength must be > 0")


@dataclass(frozen=True)
class ClusterConfig:
    """Cluster/ray counts plus array geometries at both link ends.

    The angle statistics are not pinned down by the channel model itself, so
    they are exposed as knobs: cluster centers are uniform on
    ``center_azimuth_range`` and rays scatter around their center with a
    Laplacian offset of ``ray_spread_deg`` standard deviation.
    """

    num_clusters: int
    rays_per_cluster: int
    tx_geometry: ArrayGeometry
    rx_geometry: ArrayGeometry
    center_azimuth_range: tuple[float, float] = (-np.pi / 2, np.pi / 2)
    ray_spread_deg: float = 7.5

    def __post_init__(self):
        if self.num_clusters < 1 or self.rays_per_cluster < 1:
            raise ValueError("num_clusters and rays_per_cluster must be >= 1")
        lo, hi = self.center_azimuth_range
        if not lo < hi:
            raise ValueError("center_azimuth_range must be an increasing pair")
        if self.ray_spread_deg < 0:
            raise ValueError("ray_spread_deg must be >= 0")

    @property
    def num_tx(self) -> int:
        return self.tx_geometry.num_elements

    @property
    def num_rx(self) -> int:
        return self.rx_geometry.num_elements


@dataclass(frozen=True)
class NoiseModel:
    """Complex AWGN with the given per-entry variance (real/imag each carry half)."""

    variance_per_complex_dim: float

    def __post_init__(self):
        if not self.variance_per_complex_dim > 0:
            raise ValueError(f"noise variance must be > 0, got {self.variance_per_complex_dim}")


@dataclass
class ChannelMatrix:
    """A fading realization together with its cached SVD factors.

    ``entries = svd_u @ diag(svd_sigma_padded) @ svd_v.conj().T`` with both
    factor matrices unitary and the singular values sorted descending.  The
    paired singular-vector phases are rotated so each left-singular vector's
    largest-magnitude entry is real positive, which makes precoders built from
    the factors deterministic.
    """

    entries: np.ndarray
    svd_u: np.ndarray = field(repr=False)
    svd_sigma: np.ndarray = field(repr=False)
    svd_v: np.ndarray = field(repr=False)

    @classmethod
    def from_entries(cls, entries: np.ndarray) -> "ChannelMatrix":
        entries = np.ascontiguousarray(entries, dtype=np.complex128)
        if entries.ndim != 2:
            raise ValueError(f"channel matrix must be 2-D, got shape {entries.shape}")
        u, sigma, v = _phase_fixed_svd(entries)
        return cls(entries=entries, svd_u=u, svd_sigma=sigma, svd_v=v)

    @property
    def num_rx(self) -> int:
        return self.entries.shape[0]

    @property
    def num_tx(self) -> int:
        return self.entries.shape[1]


def _phase_fixed_svd(entries: np.ndarray):
    """Full SVD with the per-pair phase ambiguity removed.

    Rotating a left/right singular-vector pair by a common unit phase leaves
    the product unchanged; we pick the phase that makes the largest-magnitude
    entry of each left vector real positive.  Surplus columns (beyond the
    rank-bounded pairs) are fixed the same way independently.
    """
    u, sigma, vh = np.linalg.svd(entries, full_matrices=True)
    v = vh.conj().T
    k = min(entries.shape)
    for i in range(k):
        col = u[:, i]
        j = int(np.argmax(np.abs(col)))
        phase = col[j] / np.abs(col[j])
        u[:, i] *= np.conj(phase)
        v[:, i] *= np.conj(phase)
    # surplus null-space columns carry no pairing constraint; fix each alone
    for mat in (u, v):
        for i in range(k, mat.shape[1]):
            col = mat[:, i]
            j = int(np.argmax(np.abs(col)))
            mat[:, i] *= np.conj(col[j] / np.abs(col[j]))
    return u, sigma, v


def array_response(geometry: ArrayGeometry, azimuth: float) -> np.ndarray:
    """Unit-norm ULA response: element k is (1/sqrt(N)) exp(-j 2 pi (d/lambda) k sin(az))."""
    k = np.arange(geometry.num_elements)
    phase = -2j * np.pi * geometry.spacing_over_wavelength * np.sin(azimuth)
    return np.exp(phase * k) / np.sqrt(geometry.num_elements)


def generate_channel(config: ClusterConfig, rng: np.random.Generator) -> ChannelMatrix:
    """Draw one clustered-channel realization.

    H = sqrt(Nt*Nr / (Ncl*Nray)) * sum_{i,l} alpha_il a_r(az_rx) a_t(az_tx)^H
    with alpha_il i.i.d. CN(0,1).  Per cluster, the rx and tx center azimuths
    are drawn uniformly on the configured range, then each ray offsets from
    its center by a Laplacian perturbation.  Draw order is fixed so that a
    given (config, seed) always yields the same matrix bit-for-bit.
    """
    n_tx, n_rx = config.num_tx, config.num_rx
    n_rays = config.num_clusters * config.rays_per_cluster
    lo, hi = config.center_azimuth_range
    # Laplace(scale=b) has std sqrt(2)*b
    spread = np.deg2rad(config.ray_spread_deg) / np.sqrt(2.0)

    az_rx = np.empty(n_rays)
    az_tx = np.empty(n_rays)
    for c in range(config.num_clusters):
        center_rx = rng.uniform(lo, hi)
        center_tx = rng.uniform(lo, hi)
        sl = slice(c * config.rays_per_cluster, (c + 1) * config.rays_per_cluster)
        az_rx[sl] = center_rx + rng.laplace(0.0, spread, config.rays_per_cluster)
        az_tx[sl] = center_tx + rng.laplace(0.0, spread, config.rays_per_cluster)

    gains = (rng.standard_normal(n_rays) + 1j * rng.standard_normal(n_rays)) / np.sqrt(2.0)

    steer_rx = np.stack([array_response(config.rx_geometry, a) for a in az_rx])
    steer_tx = np.stack([array_response(config.tx_geometry, a) for a in az_tx])
    scale = np.sqrt(n_tx * n_rx / n_rays)
    entries = scale * np.einsum("p,pi,pj->ij", gains, steer_rx, np.conj(steer_tx))
    return ChannelMatrix.from_entries(entries)


def draw_noise(model: NoiseModel, dim: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian vector with per-entry variance from the model."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    sigma = np.sqrt(model.variance_per_complex_dim / 2.0)
    return sigma * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))


def snr_to_noise_variance(snr_db: float) -> NoiseModel:
    """Noise variance for a target SNR under the unit-average-symbol-power convention."""
    return NoiseModel(variance_per_complex_dim=10.0 ** (-snr_db / 10.0))


_FILE_MAGIC = b"MJCH"
_HEADER_FMT = "<4sHIHHq HH dd dd d"  # magic, version, count, nr, nt, seed, config fields


def save_channels(path, channels: list[ChannelMatrix], config: ClusterConfig, seed: int) -> None:
    """Write realizations as a flat binary: header, then row-major interleaved re/im float64."""
    if not channels:
        raise ValueError("no channels to save")
    n_rx, n_tx = channels[0].entries.shape
    header = struct.pack(
        _HEADER_FMT,
        _FILE_MAGIC,
        1,
        len(channels),
        n_rx,
        n_tx,
        seed,
        config.num_clusters,
        config.rays_per_cluster,
        config.tx_geometry.spacing_over_wavelength,
        config.rx_geometry.spacing_over_wavelength,
        config.center_azimuth_range[0],
        config.center_azimuth_range[1],
        config.ray_spread_deg,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for ch in channels:
            if ch.entries.shape != (n_rx, n_tx):
                raise ValueError("all channels in one file must share dimensions")
            interleaved = np.empty((n_rx, n_tx, 2))
            interleaved[..., 0] = ch.entries.real
            interleaved[..., 1] = ch.entries.imag
            fh.write(interleaved.tobytes())


def load_channels(path) -> tuple[list[ChannelMatrix], ClusterConfig, int]:
    """Read a channel file written by :func:`save_channels`; SVDs are recomputed."""
    header_size = struct.calcsize(_HEADER_FMT)
    with open(path, "rb") as fh:
        raw = fh.read(header_size)
        if len(raw) < header_size:
            raise ValueError(f"truncated channel file header ({len(raw)} bytes)")
        (magic, version, count, n_rx, n_tx, seed, ncl, nray,
         tx_spacing, rx_spacing, az_lo, az_hi, spread) = struct.unpack(_HEADER_FMT, raw)
        if magic != _FILE_MAGIC or version != 1:
            raise ValueError("not a channel file (bad magic/version)")
        config = ClusterConfig(
            num_clusters=ncl,
            rays_per_cluster=nray,
            tx_geometry=ArrayGeometry(n_tx, tx_spacing),
            rx_geometry=ArrayGeometry(n_rx, rx_spacing),
            center_azimuth_range=(az_lo, az_hi),
            ray_spread_deg=spread,
        )
        per_channel = n_rx * n_tx * 2 * 8
        channels = []
        for i in range(count):
            blob = fh.read(per_channel)
            if len(blob) < per_channel:
                raise ValueError(f"truncated channel file at record {i}")
            flat = np.frombuffer(blob, dtype=np.float64).reshape(n_rx, n_tx, 2)
            channels.append(ChannelMatrix.from_entries(flat[..., 0] + 1j * flat[..., 1]))
    return channels, config, seed

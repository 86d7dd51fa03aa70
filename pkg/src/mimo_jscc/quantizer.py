"""Lloyd-Max scalar quantization of CSI matrices.

One codebook per bit depth, fitted on the pooled real/imag parts of generated
channel matrices (the clustered model is circularly symmetric, so both parts
share a codebook).  Feedback payload for an N_r x N_t matrix at b bits per
real element is 2 * N_r * N_t * b bits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelMatrix, ClusterConfig, generate_channel


class DegenerateSamplesError(ValueError):
    """Training samples cannot support the requested number of levels."""


@dataclass
class CsiCodebook:
    """Scalar quantizer: 2^b ascending levels and the 2^b - 1 cell thresholds."""

    bits_per_element: int
    levels: np.ndarray
    thresholds: np.ndarray
    fitted_on: str = ""
    mse_history: list = field(default=None, repr=False, compare=False)

    @property
    def num_levels(self) -> int:
        return 2 ** self.bits_per_element


@dataclass
class QuantizedCsi:
    """Index matrix plus the dequantized channel (with its own SVD)."""

    indices: np.ndarray  # (N_r, N_t, 2) ints; [..., 0] real part, [..., 1] imag part
    reconstructed: ChannelMatrix
    bits_per_element: int

    @property
    def payload_bits(self) -> int:
        n_rx, n_tx = self.indices.shape[:2]
        return 2 * n_rx * n_tx * self.bits_per_element


def _midpoints(levels: np.ndarray) -> np.ndarray:
    return 0.5 * (levels[:-1] + levels[1:])


def quantizer_mse(samples: np.ndarray, codebook: CsiCodebook) -> float:
    """Mean squared error of nearest-level quantization on the given samples."""
    idx = np.digitize(samples, codebook.thresholds)
    return float(np.mean((samples - codebook.levels[idx]) ** 2))


def uniform_codebook(bits: int, low: float, high: float) -> CsiCodebook:
    """Mid-rise uniform quantizer over [low, high]; the baseline Lloyd-Max must beat."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    if not low < high:
        raise ValueError("need low < high")
    num = 2 ** bits
    step = (high - low) / num
    levels = low + (np.arange(num) + 0.5) * step
    return CsiCodebook(bits_per_element=bits, levels=levels, thresholds=_midpoints(levels),
                       fitted_on=f"uniform on [{low:g}, {high:g}]")


def fit_lloyd_max(
    samples: np.ndarray,
    bits: int,
    tol: float = 1e-8,
    max_iters: int = 200,
) -> CsiCodebook:
    """Fit the MSE-optimal scalar quantizer by alternating centroid and
    nearest-neighbor updates.

    Stops when the relative MSE improvement per iteration drops below ``tol``.
    Empty cells are re-seeded at the sample currently farthest from its
    assigned level (a splitting rule), which preserves the per-iteration MSE
    descent.  The fitted quantizer is checked against a uniform baseline over
    mean +/- 4 standard deviations.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    num = 2 ** bits
    if np.unique(samples).size < num:
        raise DegenerateSamplesError(
            f"need at least {num} distinct sample values for {bits}-bit fitting"
        )

    levels = _companding_init(samples, num)

    history = []
    prev_mse = np.inf
    for _ in range(max_iters):
        idx = np.digitize(samples, _midpoints(levels))
        counts = np.bincount(idx, minlength=num)
        sums = np.bincount(idx, weights=samples, minlength=num)
        new_levels = np.where(counts > 0, sums / np.maximum(counts, 1), levels)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            new_levels = _reseed_empty_cells(new_levels, empty, samples, idx)
        levels = np.sort(new_levels)
        # measure with a fresh nearest-neighbor pass against the updated levels
        mse = quantizer_mse(samples, CsiCodebook(bits, levels, _midpoints(levels)))
        history.append(mse)
        if np.isfinite(prev_mse) and prev_mse - mse <= tol * prev_mse:
            break
        prev_mse = mse

    fitted = CsiCodebook(bits_per_element=bits, levels=levels, thresholds=_midpoints(levels),
                         mse_history=history)
    mean, std = float(np.mean(samples)), float(np.std(samples))
    if std > 0:
        baseline = uniform_codebook(bits, mean - 4 * std, mean + 4 * std)
        if quantizer_mse(samples, fitted) > quantizer_mse(samples, baseline):
            raise RuntimeError("Lloyd-Max fit failed to beat the uniform baseline")
    return fitted


def _companding_init(samples: np.ndarray, num: int) -> np.ndarray:
    """Start near the high-rate optimum: level density proportional to f^(1/3).

    A plain quantile init over-allocates levels to the bulk of heavy-tailed
    data and then needs many iterations to migrate them outward; the cube-root
    compander puts them where the converged quantizer wants them.
    """
    lo, hi = samples.min(), samples.max()
    if lo == hi:
        return np.full(num, lo)
    counts, edges = np.histogram(samples, bins=max(4 * num, 512), range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    weight = np.cbrt(counts.astype(np.float64))
    cdf = np.cumsum(weight)
    targets = (np.arange(num) + 0.5) / num * cdf[-1]
    levels = np.interp(targets, cdf, centers)
    if not np.all(np.diff(levels) > 0):
        levels = np.linspace(lo, hi, num)
    return levels


def _reseed_empty_cells(levels, empty, samples, idx) -> np.ndarray:
    distances = np.abs(samples - levels[idx])
    order = np.argsort(distances)[::-1]
    out = levels.copy()
    used = set(out[np.setdiff1d(np.arange(len(levels)), empty)])
    pos = 0
    for cell in empty:
        while pos < len(order) and samples[order[pos]] in used:
            pos += 1
        if pos >= len(order):
            break
        out[cell] = samples[order[pos]]
        used.add(samples[order[pos]])
        pos += 1
    return out


def quantize_values(values: np.ndarray, codebook: CsiCodebook) -> np.ndarray:
    """Nearest-level cell index for each real value."""
    return np.digitize(values, codebook.thresholds)


def dequantize_values(indices: np.ndarray, codebook: CsiCodebook) -> np.ndarray:
    return codebook.levels[indices]


def quantize_csi(channel: ChannelMatrix, codebook: CsiCodebook) -> QuantizedCsi:
    """Quantize real and imaginary parts element-wise; reconstruct with fresh SVD."""
    re_idx = quantize_values(channel.entries.real, codebook)
    im_idx = quantize_values(channel.entries.imag, codebook)
    recon = codebook.levels[re_idx] + 1j * codebook.levels[im_idx]
    return QuantizedCsi(
        indices=np.stack([re_idx, im_idx], axis=-1),
        reconstructed=ChannelMatrix.from_entries(recon),
        bits_per_element=codebook.bits_per_element,
    )


def dequantize_csi(indices: np.ndarray, codebook: CsiCodebook) -> ChannelMatrix:
    recon = codebook.levels[indices[..., 0]] + 1j * codebook.levels[indices[..., 1]]
    return ChannelMatrix.from_entries(recon)


def nmse(channel, recovered) -> float:
    """||H - H_hat||_F^2 / ||H||_F^2 for a single realization."""
    h = channel.entries if isinstance(channel, ChannelMatrix) else np.asarray(channel)
    h_hat = recovered.entries if isinstance(recovered, ChannelMatrix) else np.asarray(recovered)
    if h.shape != h_hat.shape:
        raise ValueError(f"shape mismatch: {h.shape} vs {h_hat.shape}")
    denom = np.sum(np.abs(h) ** 2)
    if denom == 0:
        raise ValueError("NMSE undefined for an all-zero channel")
    return float(np.sum(np.abs(h - h_hat) ** 2) / denom)


def cluster_config_digest(config: ClusterConfig) -> str:
    """Short stable hash of the channel configuration a codebook was fitted for."""
    desc = (
        f"ncl={config.num_clusters} nray={config.rays_per_cluster} "
        f"nt={config.num_tx} ntsp={config.tx_geometry.spacing_over_wavelength!r} "
        f"nr={config.num_rx} nrsp={config.rx_geometry.spacing_over_wavelength!r} "
        f"az={config.center_azimuth_range!r} spread={config.ray_spread_deg!r}"
    )
    return hashlib.sha1(desc.encode()).hexdigest()[:12]


def fit_codebook_for_config(
    config: ClusterConfig,
    bits: int,
    num_matrices: int = 10_000,
    seed: int = 0,
    tol: float = 1e-8,
    max_iters: int = 200,
) -> CsiCodebook:
    """Fit on the pooled real/imag parts of freshly generated channel matrices."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xC5B,)))
    parts = np.empty((num_matrices, 2, config.num_rx, config.num_tx))
    for i in range(num_matrices):
        h = generate_channel(config, rng).entries
        parts[i, 0] = h.real
        parts[i, 1] = h.imag
    codebook = fit_lloyd_max(parts.ravel(), bits, tol=tol, max_iters=max_iters)
    codebook.fitted_on = (
        f"pooled re/im of {num_matrices} channels, config {cluster_config_digest(config)}, seed {seed}"
    )
    return codebook


_CODEBOOK_HEADER = "mimo-jscc csi-codebook v1"


def save_codebook(path, codebook: CsiCodebook) -> None:
    """Versioned text file; 17 significant digits round-trip float64 exactly."""
    lines = [
        _CODEBOOK_HEADER,
        f"bits_per_element = {codebook.bits_per_element}",
        f"fitted_on = {codebook.fitted_on}",
        "levels = " + " ".join(f"{x:.17g}" for x in codebook.levels),
        "thresholds = " + " ".join(f"{x:.17g}" for x in codebook.thresholds),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_codebook(path) -> CsiCodebook:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _CODEBOOK_HEADER:
        raise ValueError(f"{path}: not a codebook file")
    fields = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, _, value = ln.partition(" = ")
        fields[key] = value
    bits = int(fields["bits_per_element"])
    levels = np.array([float(x) for x in fields["levels"].split()])
    thresholds = np.array([float(x) for x in fields["thresholds"].split()])
    if len(levels) != 2 ** bits or len(thresholds) != len(levels) - 1:
        raise ValueError(f"{path}: level/threshold counts inconsistent with bit depth")
    if not np.all(np.diff(levels) > 0):
        raise ValueError(f"{path}: levels not strictly ascending")
    return CsiCodebook(bits_per_element=bits, levels=levels, thresholds=thresholds,
                       fitted_on=fields.get("fitted_on", ""))

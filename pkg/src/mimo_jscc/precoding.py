"""Linear transmit/receive precoding over a MIMO channel.

The transmitter precodes d-stream blocks with V built from its (possibly
quantized) channel knowledge; the receiver combines with U built from the true
channel, giving x_hat = U^H (H V x + n).  Per-stream diagonal equalization by
the transmitter-side gain estimate is applied when reassembling full symbol
vectors, so the codec sees an approximately unit-gain noisy channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix, NoiseModel, draw_noise

# relative floor under which a singular value no longer supports a stream
_RANK_TOL = 1e-10


class RankDeficientChannelError(ValueError):
    """Channel rank cannot support the requested number of streams."""


@dataclass
class PrecoderPair:
    """Transmit precoder V (N_t x d), receive combiner U (N_r x d), and the
    transmitter-side estimate of the per-stream gains diag(U^H H_tx V)."""

    tx_precoder: np.ndarray
    rx_combiner: np.ndarray
    num_streams: int
    stream_gains: np.ndarray


@dataclass
class SymbolBlock:
    """One d-dimensional slice of the symbol vector; `received` is filled after transmission."""

    symbols: np.ndarray
    received: np.ndarray | None = None


def _check_pair_inputs(channel_for_tx: ChannelMatrix, channel_for_rx: ChannelMatrix, d: int):
    if channel_for_tx.entries.shape != channel_for_rx.entries.shape:
        raise ValueError("tx-side and rx-side channels must share dimensions")
    n_rx, n_tx = channel_for_rx.entries.shape
    if not 1 <= d <= min(n_tx, n_rx):
        raise ValueError(f"need 1 <= d <= min(N_t, N_r) = {min(n_tx, n_rx)}, got {d}")


def svd_precoders(channel_for_tx: ChannelMatrix, channel_for_rx: ChannelMatrix, d: int) -> PrecoderPair:
    """V = leading right-singular vectors of the transmitter's channel estimate,
    U = leading left-singular vectors of the receiver's true channel."""
    _check_pair_inputs(channel_for_tx, channel_for_rx, d)
    for ch in (channel_for_tx, channel_for_rx):
        sigma = ch.svd_sigma
        if sigma[d - 1] <= _RANK_TOL * sigma[0]:
            raise RankDeficientChannelError(
                f"channel supports fewer than {d} usable streams "
                f"(sigma_{d} = {sigma[d - 1]:.3e} vs sigma_1 = {sigma[0]:.3e})"
            )
    v = channel_for_tx.svd_v[:, :d]
    u = channel_for_rx.svd_u[:, :d]
    gains = np.einsum("id,ij,jd->d", np.conj(u), channel_for_tx.entries, v)
    return PrecoderPair(tx_precoder=v, rx_combiner=u, num_streams=d, stream_gains=gains)


def zf_precoders(channel_for_tx: ChannelMatrix, channel_for_rx: ChannelMatrix, d: int) -> PrecoderPair:
    """Zero-forcing alternative: V inverts the channel toward the first d receive
    antennas (columns normalized to unit power), U selects those antennas."""
    _check_pair_inputs(channel_for_tx, channel_for_rx, d)
    sigma = channel_for_tx.svd_sigma
    if sigma[d - 1] <= _RANK_TOL * sigma[0]:
        raise RankDeficientChannelError(f"channel rank below {d}, cannot zero-force")
    pinv = np.linalg.pinv(channel_for_tx.entries)
    v = pinv[:, :d]
    v = v / np.linalg.norm(v, axis=0, keepdims=True)
    u = np.eye(channel_for_rx.entries.shape[0], dtype=np.complex128)[:, :d]
    gains = np.einsum("id,ij,jd->d", np.conj(u), channel_for_tx.entries, v)
    return PrecoderPair(tx_precoder=v, rx_combiner=u, num_streams=d, stream_gains=gains)


def transmit_block(
    x: SymbolBlock,
    channel: ChannelMatrix,
    pair: PrecoderPair,
    noise: NoiseModel | None,
    rng: np.random.Generator,
) -> SymbolBlock:
    """Push one block through the precoded channel; no equalization here."""
    symbols = np.asarray(x.symbols, dtype=np.complex128)
    if symbols.shape != (pair.num_streams,):
        raise ValueError(f"block must hold {pair.num_streams} symbols, got shape {symbols.shape}")
    y = channel.entries @ (pair.tx_precoder @ symbols)
    if noise is not None:
        y = y + draw_noise(noise, channel.num_rx, rng)
    received = pair.rx_combiner.conj().T @ y
    return SymbolBlock(symbols=symbols, received=received)


def transmit_symbols(
    z: np.ndarray,
    channel: ChannelMatrix,
    pair: PrecoderPair,
    noise: NoiseModel | None,
    rng: np.random.Generator,
    equalize: bool = True,
) -> np.ndarray:
    """Split z into d-symbol blocks (zero-padded tail), send every block over the
    same channel realization, equalize per stream, and reassemble."""
    z = np.asarray(z, dtype=np.complex128)
    d = pair.num_streams
    total = len(z)
    num_blocks = max(1, -(-total // d))
    padded = np.zeros(num_blocks * d, dtype=np.complex128)
    padded[:total] = z
    blocks = padded.reshape(num_blocks, d)

    through = blocks @ (channel.entries @ pair.tx_precoder).T
    if noise is not None:
        through = through + draw_noise(noise, num_blocks * channel.num_rx, rng).reshape(
            num_blocks, channel.num_rx
        )
    received = through @ np.conj(pair.rx_combiner)
    if equalize:
        received = received / pair.stream_gains
    return received.reshape(-1)[:total]

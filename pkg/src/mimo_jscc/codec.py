"""Trainable joint source-channel codec and the link glue around it.

The encoder maps an image vector to complex channel symbols (with a unit
average-power constraint); the decoder maps noisy equalized symbols back to
pixels.  Training backpropagates through the power normalization and through
the precoded channel, which after diagonal equalization is a fixed
complex-linear map per image plus additive noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (ChannelMatrix, ClusterConfig, NoiseModel, draw_noise,
                      generate_channel, snr_to_noise_variance)
from .net import Adam, Mlp, load_flat_checkpoint, save_flat_checkpoint
from .precoding import PrecoderPair, svd_precoders, transmit_symbols
from .seeding import child_rng


@dataclass(frozen=True)
class CodecSpec:
    """Layer dimensions: source_dim pixels in, symbol_count complex symbols out."""

    source_dim: int
    symbol_count: int
    hidden: tuple = (256,)

    def __post_init__(self):
        if self.source_dim < 1 or self.symbol_count < 1:
            raise ValueError("source_dim and symbol_count must be positive")


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 30
    train_snr_db: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class TrainingDivergedError(RuntimeError):
    """Non-finite loss during training; carries the offending batch index."""

    def __init__(self, batch_index: int):
        super().__init__(f"non-finite loss at batch index {batch_index}")
        self.batch_index = batch_index


class JsccCodec:
    """Encoder/decoder pair; parameters live in the two Mlps."""

    def __init__(self, spec: CodecSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed
        n, k = spec.source_dim, spec.symbol_count
        self.encoder = Mlp((n, *spec.hidden, 2 * k), child_rng(seed, 0xE), output="linear")
        self.decoder = Mlp((2 * k, *spec.hidden, n), child_rng(seed, 0xD), output="sigmoid")

    # -- forward passes -------------------------------------------------

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        """Image vector(s) -> K unit-average-power complex symbols."""
        single = np.asarray(pixels).ndim == 1
        out, _ = self.encoder.forward(pixels)
        z_raw = self._pair(out)
        z = power_normalize(z_raw)
        return z[0] if single else z

    def decode(self, symbols: np.ndarray) -> np.ndarray:
        """Received symbol vector(s) -> pixel estimates in [0, 1]."""
        symbols = np.asarray(symbols, dtype=np.complex128)
        single = symbols.ndim == 1
        z = np.atleast_2d(symbols)
        if z.shape[1] != self.spec.symbol_count:
            raise ValueError(f"expected {self.spec.symbol_count} symbols, got {z.shape[1]}")
        out, _ = self.decoder.forward(np.concatenate([z.real, z.imag], axis=1))
        return out[0] if single else out

    @staticmethod
    def _pair(reals: np.ndarray) -> np.ndarray:
        k = reals.shape[1] // 2
        return reals[:, :k] + 1j * reals[:, k:]

    # -- flat parameters (encoder first, then decoder) -------------------

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.encoder.get_params(), self.decoder.get_params()])

    def set_params(self, flat: np.ndarray) -> None:
        split = self.encoder.param_count
        self.encoder.set_params(flat[:split])
        self.decoder.set_params(flat[split:])

    @property
    def param_count(self) -> int:
        return self.encoder.param_count + self.decoder.param_count


def power_normalize(z_raw: np.ndarray) -> np.ndarray:
    """Scale each symbol vector to unit average symbol power."""
    z = np.atleast_2d(np.asarray(z_raw, dtype=np.complex128))
    k = z.shape[1]
    power = np.sum(np.abs(z) ** 2, axis=1)
    if np.any(power == 0):
        raise ValueError("cannot power-normalize an all-zero symbol vector")
    out = z * np.sqrt(k / power)[:, None]
    return out[0] if np.asarray(z_raw).ndim == 1 else out


@dataclass
class EffectiveChannel:
    """Post-combining, post-equalization view of one realization: a fixed d x d
    complex map applied block-wise plus the equalized noise per block."""

    gain_matrix: np.ndarray   # (d, d)
    noise_blocks: np.ndarray  # (num_blocks, d)


def effective_channel(
    channel: ChannelMatrix,
    pair: PrecoderPair,
    noise: NoiseModel | None,
    num_blocks: int,
    rng: np.random.Generator,
) -> EffectiveChannel:
    """Collapse U^H (H V . + n) and diagonal equalization into one linear map."""
    m = pair.rx_combiner.conj().T @ channel.entries @ pair.tx_precoder
    m = m / pair.stream_gains[:, None]
    if noise is not None:
        raw = draw_noise(noise, num_blocks * channel.num_rx, rng).reshape(num_blocks, -1)
        noise_blocks = (raw @ np.conj(pair.rx_combiner)) / pair.stream_gains[None, :]
    else:
        noise_blocks = np.zeros((num_blocks, pair.num_streams), dtype=np.complex128)
    return EffectiveChannel(gain_matrix=m, noise_blocks=noise_blocks)


def blocks_per_image(symbol_count: int, num_streams: int) -> int:
    return max(1, -(-symbol_count // num_streams))


def batch_loss_and_grads(codec: JsccCodec, pixels: np.ndarray, channels: list[EffectiveChannel]):
    """Loss plus flat parameter gradients for one batch through the full chain.

    The channel maps and noise realizations are fixed inputs here, so the
    function is deterministic in (params, pixels, channels) — which is what
    makes finite-difference gradient checks possible.

    Returns (loss, grads, per_image_mse).
    """
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    batch = pixels.shape[0]
    if len(channels) != batch:
        raise ValueError("need one effective channel per image")
    k = codec.spec.symbol_count
    d = channels[0].gain_matrix.shape[0]
    nb = channels[0].noise_blocks.shape[0]

    enc_out, enc_cache = codec.encoder.forward(pixels)
    z_raw = codec._pair(enc_out)

    power = np.sum(np.abs(z_raw) ** 2, axis=1)
    if np.any(power == 0):
        raise ValueError("encoder emitted an all-zero symbol vector")
    scale = np.sqrt(k / power)
    z = z_raw * scale[:, None]

    padded = np.zeros((batch, nb * d), dtype=np.complex128)
    padded[:, :k] = z
    blocks = padded.reshape(batch, nb, d)
    gain = np.stack([ch.gain_matrix for ch in channels])
    noise = np.stack([ch.noise_blocks for ch in channels])
    out_blocks = np.einsum("bed,bnd->bne", gain, blocks) + noise
    z_hat = out_blocks.reshape(batch, nb * d)[:, :k]

    dec_in = np.concatenate([z_hat.real, z_hat.imag], axis=1)
    s_hat, dec_cache = codec.decoder.forward(dec_in)

    diff = s_hat - pixels
    per_image_mse = np.mean(diff ** 2, axis=1)
    loss = float(np.mean(per_image_mse))

    # backward
    grad_s = 2.0 * diff / diff.size
    grad_dec_in, dec_grads = codec.decoder.backward(grad_s, dec_cache)
    grad_zhat = grad_dec_in[:, :k] + 1j * grad_dec_in[:, k:]

    grad_padded = np.zeros((batch, nb * d), dtype=np.complex128)
    grad_padded[:, :k] = grad_zhat
    grad_out_blocks = grad_padded.reshape(batch, nb, d)
    grad_blocks = np.einsum("bed,bne->bnd", np.conj(gain), grad_out_blocks)
    grad_z = grad_blocks.reshape(batch, nb * d)[:, :k]

    # power normalization: out = c(v) * v with c = sqrt(K / ||v||^2)
    dots = np.sum(z_raw.real * grad_z.real + z_raw.imag * grad_z.imag, axis=1)
    grad_raw = scale[:, None] * grad_z - (scale / power * dots)[:, None] * z_raw

    grad_enc_out = np.concatenate([grad_raw.real, grad_raw.imag], axis=1)
    _, enc_grads = codec.encoder.backward(grad_enc_out, enc_cache)

    return loss, np.concatenate([enc_grads, dec_grads]), per_image_mse


def train_step(codec: JsccCodec, pixels: np.ndarray, channels: list[EffectiveChannel],
               optimizer: Adam) -> float:
    """One adaptive-moment update on the batch; returns the pre-update loss."""
    loss, grads, per_image = batch_loss_and_grads(codec, pixels, channels)
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(per_image))[0])
        raise TrainingDivergedError(batch_index=bad)
    codec.set_params(optimizer.step(codec.get_params(), grads))
    return loss


def draw_perfect_csi_channels(
    channel_config: ClusterConfig,
    num_streams: int,
    noise: NoiseModel | None,
    num_blocks: int,
    count: int,
    rng: np.random.Generator,
) -> list[EffectiveChannel]:
    """Fresh block-fading realizations with matched (perfect-CSI) precoders."""
    out = []
    for _ in range(count):
        h = generate_channel(channel_config, rng)
        pair = svd_precoders(h, h, num_streams)
        out.append(effective_channel(h, pair, noise, num_blocks, rng))
    return out


def train(
    codec: JsccCodec,
    images,
    config: TrainingConfig,
    channel_config: ClusterConfig,
    num_streams: int,
) -> list[float]:
    """Epoch loop with fresh channel/noise per image per batch.

    The learning rate halves at each third of the epoch budget.  The whole run
    is a pure function of (codec initial params, images, config), so identical
    seeds reproduce identical loss histories bit-for-bit.
    """
    if len(images) == 0:
        raise ValueError("dataset must be nonempty")
    pixels = np.stack([s.pixels for s in images])
    noise = snr_to_noise_variance(config.train_snr_db)
    nb = blocks_per_image(codec.spec.symbol_count, num_streams)
    optimizer = Adam(codec.param_count, config.learning_rate)
    rng = child_rng(config.seed, 0x7B41)

    history = []
    for epoch in range(config.epochs):
        optimizer.learning_rate = config.learning_rate * 0.5 ** (3 * epoch // max(config.epochs, 1))
        order = rng.permutation(len(images))
        epoch_losses = []
        for start in range(0, len(images), config.batch_size):
            idx = order[start:start + config.batch_size]
            channels = draw_perfect_csi_channels(
                channel_config, num_streams, noise, nb, len(idx), rng)
            epoch_losses.append(train_step(codec, pixels[idx], channels, optimizer))
        history.append(float(np.mean(epoch_losses)))
    return history


def transmit_image(
    codec: JsccCodec,
    pixels: np.ndarray,
    channel: ChannelMatrix,
    tx_channel: ChannelMatrix | None,
    num_streams: int,
    noise: NoiseModel | None,
    rng: np.random.Generator,
    rx_uses_estimate: bool = False,
) -> np.ndarray:
    """Full link: encode -> precoded transmission -> decode.

    ``tx_channel`` is the transmitter's (possibly quantized) channel knowledge;
    None means perfect CSI.  The receiver combines with the true channel unless
    ``rx_uses_estimate`` flips it to the recovered one.
    """
    tx = channel if tx_channel is None else tx_channel
    rx = tx if rx_uses_estimate else channel
    pair = svd_precoders(tx, rx, num_streams)
    z = codec.encode(pixels)
    z_hat = transmit_symbols(z, channel, pair, noise, rng, equalize=True)
    return codec.decode(z_hat)


# -- persistence ---------------------------------------------------------


def save_codec(path, codec: JsccCodec) -> None:
    header = {
        "kind": "jscc_codec",
        "source_dim": codec.spec.source_dim,
        "symbol_count": codec.spec.symbol_count,
        "hidden": list(codec.spec.hidden),
        "seed": codec.seed,
    }
    save_flat_checkpoint(path, header, codec.get_params())


def load_codec(path) -> JsccCodec:
    header, params = load_flat_checkpoint(path)
    if header.get("kind") != "jscc_codec":
        raise ValueError(f"{path}: not a codec checkpoint")
    spec = CodecSpec(source_dim=header["source_dim"], symbol_count=header["symbol_count"],
                     hidden=tuple(header["hidden"]))
    codec = JsccCodec(spec, seed=header["seed"])
    codec.set_params(params)
    return codec

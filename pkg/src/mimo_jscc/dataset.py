"""Image sources: CIFAR-10 binary batches and a synthetic desk-scale generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes
CIFAR_SIZE = 32


class CifarFormatError(ValueError):
    """Malformed CIFAR binary batch; carries the byte offset of the bad tail."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte offset {byte_offset})")
        self.byte_offset = byte_offset


@dataclass
class ImageSample:
    """Flattened H x W x C image with pixel values in [0, 1]."""

    pixels: np.ndarray
    source_id: int
    height: int
    width: int
    channels: int = 3
    component: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).ravel()
        expected = self.height * self.width * self.channels
        if self.pixels.size != expected:
            raise ValueError(f"pixel count {self.pixels.size} != H*W*C = {expected}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def num_pixels(self) -> int:
        return self.pixels.size

    def as_image(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width, self.channels)


def load_cifar_binary(path, crop_size: int | None = None) -> list[ImageSample]:
    """Read a CIFAR-10 binary batch (label byte + 3072 pixel bytes per record).

    Pixels are scaled to [0, 1]; labels are ignored.  ``crop_size`` takes a
    center crop (e.g. 8 for the desk-scale setup).
    """
    raw = np.fromfile(path, dtype=np.uint8)
    tail = raw.size % CIFAR_RECORD_BYTES
    if raw.size == 0 or tail:
        raise CifarFormatError(f"{path}: truncated CIFAR batch", byte_offset=raw.size - tail)
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    # planes are stored R, G, B each 32x32 row-major
    planes = records[:, 1:].reshape(-1, 3, CIFAR_SIZE, CIFAR_SIZE)
    images = planes.transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    size = CIFAR_SIZE
    if crop_size is not None:
        if not 1 <= crop_size <= CIFAR_SIZE:
            raise ValueError(f"crop_size must be in [1, {CIFAR_SIZE}]")
        start = (CIFAR_SIZE - crop_size) // 2
        images = images[:, start:start + crop_size, start:start + crop_size, :]
        size = crop_size
    return [
        ImageSample(pixels=img.ravel(), source_id=i, height=size, width=size, component="cifar")
        for i, img in enumerate(images)
    ]


def save_cifar_binary(path, samples: list[ImageSample], labels=None) -> None:
    """Write 32x32x3 samples back out in CIFAR binary batch layout."""
    if labels is None:
        labels = [0] * len(samples)
    with open(path, "wb") as fh:
        for sample, label in zip(samples, labels):
            if (sample.height, sample.width, sample.channels) != (32, 32, 3):
                raise ValueError("CIFAR batch layout requires 32x32x3 samples")
            img = np.round(sample.as_image() * 255.0).astype(np.uint8)
            fh.write(bytes([label & 0xFF]))
            fh.write(img.transpose(2, 0, 1).tobytes())


def synthesize_images(count: int, size: int = 8, complexity_mix: float = 0.5,
                      seed: int = 0) -> list[ImageSample]:
    """Deterministic dataset of smooth gradients and high-frequency noise textures.

    ``complexity_mix`` is the fraction of textured (hard) images; the rest are
    smooth (easy).  Textures vary in noise amplitude so reconstruction
    difficulty spreads within the component.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0.0 <= complexity_mix <= 1.0:
        raise ValueError("complexity_mix must be in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x1A6E,)))
    num_texture = int(round(count * complexity_mix))
    textured = np.zeros(count, dtype=bool)
    textured[rng.permutation(count)[:num_texture]] = True

    xx, yy = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="xy")
    samples = []
    for i in range(count):
        img = np.empty((size, size, 3))
        for c in range(3):
            base = rng.uniform(0.25, 0.75)
            gx, gy = rng.uniform(-0.2, 0.2, size=2)
            amp = rng.uniform(0.0, 0.05)
            fx, fy = rng.uniform(0.3, 1.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img[:, :, c] = base + gx * (xx - 0.5) + gy * (yy - 0.5) \
                + amp * np.cos(np.pi * (fx * xx + fy * yy) + phase)
        if textured[i]:
            noise_amp = rng.uniform(0.3, 0.7)
            img = img + rng.uniform(-noise_amp, noise_amp, size=img.shape)
            component = "texture"
        else:
            component = "smooth"
        img = np.clip(img, 0.0, 1.0)
        samples.append(ImageSample(pixels=img.ravel(), source_id=i, height=size,
                                   width=size, component=component))
    return samples


def total_variation(sample: ImageSample) -> float:
    """Mean absolute neighbor difference (both axes, all channels)."""
    img = sample.as_image()
    dx = np.abs(np.diff(img, axis=1)).sum()
    dy = np.abs(np.diff(img, axis=0)).sum()
    num_edges = img.shape[2] * (img.shape[0] * (img.shape[1] - 1) + (img.shape[0] - 1) * img.shape[1])
    return float((dx + dy) / num_edges)

"""Per-image reconstruction-quality prediction.

A light regressor maps an image directly to the PSNR the codec is expected to
achieve for it; its output (and the tolerance above an outage threshold) is
what drives feedback-bit allocation.  Labels come from running the trained
codec over independent channel realizations at perfect CSI.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import ClusterConfig, generate_channel, snr_to_noise_variance
from .codec import JsccCodec, TrainingConfig, transmit_image
from .dataset import ImageSample
from .metrics import psnr
from .net import Adam, Mlp, load_flat_checkpoint, save_flat_checkpoint
from .seeding import child_rng


@dataclass
class QualityPrediction:
    source_id: int
    predicted_psnr_db: float
    true_psnr_db: float | None = None
    tolerance_db: float | None = None


@dataclass
class LabeledImage:
    sample: ImageSample
    true_psnr_db: float


class Evaluator:
    """Image -> predicted PSNR (dB) regressor."""

    def __init__(self, source_dim: int, hidden: tuple = (64,), seed: int = 0):
        self.source_dim = source_dim
        self.hidden = tuple(hidden)
        self.seed = seed
        self.mlp = Mlp((source_dim, *self.hidden, 1), child_rng(seed, 0xEA), output="linear")

    def predict_batch(self, pixels: np.ndarray) -> np.ndarray:
        out, _ = self.mlp.forward(pixels)
        return out[:, 0]

    def get_params(self) -> np.ndarray:
        return self.mlp.get_params()

    def set_params(self, flat: np.ndarray) -> None:
        self.mlp.set_params(flat)


def label_dataset(
    codec: JsccCodec,
    images: list[ImageSample],
    channel_config: ClusterConfig,
    num_streams: int,
    snr_db: float,
    realizations_per_image: int,
    seed: int,
) -> list[LabeledImage]:
    """True labels: per-image PSNR averaged over independent perfect-CSI runs."""
    noise = snr_to_noise_variance(snr_db)
    labeled = []
    for i, sample in enumerate(images):
        values = []
        for r in range(realizations_per_image):
            rng = child_rng(seed, i, r)
            h = generate_channel(channel_config, rng)
            recon = transmit_image(codec, sample.pixels, h, None, num_streams, noise, rng)
            values.append(psnr(sample.pixels, recon))
        labeled.append(LabeledImage(sample=sample, true_psnr_db=float(np.mean(values))))
    return labeled


def train_evaluator(evaluator: Evaluator, labeled: list[LabeledImage],
                    config: TrainingConfig) -> list[float]:
    """Least-squares regression onto the labels; same machinery as codec training."""
    if not labeled:
        raise ValueError("labeled set must be nonempty")
    x = np.stack([item.sample.pixels for item in labeled])
    y = np.array([item.true_psnr_db for item in labeled])
    optimizer = Adam(evaluator.mlp.param_count, config.learning_rate)
    rng = child_rng(config.seed, 0xE7)

    history = []
    for epoch in range(config.epochs):
        optimizer.learning_rate = config.learning_rate * 0.5 ** (3 * epoch // max(config.epochs, 1))
        order = rng.permutation(len(labeled))
        epoch_losses = []
        for start in range(0, len(labeled), config.batch_size):
            idx = order[start:start + config.batch_size]
            pred, cache = evaluator.mlp.forward(x[idx])
            err = pred[:, 0] - y[idx]
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite evaluator loss at epoch {epoch}")
            grad_out = (2.0 * err / len(idx))[:, None]
            _, grads = evaluator.mlp.backward(grad_out, cache)
            evaluator.set_params(optimizer.step(evaluator.get_params(), grads))
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return history


def predict(evaluator: Evaluator, sample: ImageSample,
            threshold_db: float | None = None) -> QualityPrediction:
    value = float(evaluator.predict_batch(sample.pixels[None, :])[0])
    tolerance = None if threshold_db is None else value - threshold_db
    return QualityPrediction(source_id=sample.source_id, predicted_psnr_db=value,
                             tolerance_db=tolerance)


def predict_dataset(evaluator: Evaluator, images: list[ImageSample],
                    threshold_db: float | None = None) -> list[QualityPrediction]:
    values = evaluator.predict_batch(np.stack([s.pixels for s in images]))
    return [
        QualityPrediction(
            source_id=s.source_id,
            predicted_psnr_db=float(v),
            tolerance_db=None if threshold_db is None else float(v) - threshold_db,
        )
        for s, v in zip(images, values)
    ]


def oracle_predictions(labeled: list[LabeledImage],
                       threshold_db: float | None = None) -> list[QualityPrediction]:
    """Predictions set equal to the true labels; isolates allocation-policy behavior."""
    return [
        QualityPrediction(
            source_id=item.sample.source_id,
            predicted_psnr_db=item.true_psnr_db,
            true_psnr_db=item.true_psnr_db,
            tolerance_db=None if threshold_db is None else item.true_psnr_db - threshold_db,
        )
        for item in labeled
    ]


def save_labels(path, labeled: list[LabeledImage], snr_db: float, realizations: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "true_psnr_db", "snr_db", "realizations"])
        for item in labeled:
            writer.writerow([item.sample.source_id, f"{item.true_psnr_db:.17g}",
                             f"{snr_db:.17g}", realizations])


def load_labels(path) -> dict[int, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["source_id", "true_psnr_db"]:
            raise ValueError(f"{path}: unexpected label CSV header")
        return {int(row[0]): float(row[1]) for row in reader}


def attach_labels(images: list[ImageSample], labels: dict[int, float]) -> list[LabeledImage]:
    return [LabeledImage(sample=s, true_psnr_db=labels[s.source_id]) for s in images]


def save_evaluator(path, evaluator: Evaluator) -> None:
    header = {
        "kind": "quality_evaluator",
        "source_dim": evaluator.source_dim,
        "hidden": list(evaluator.hidden),
        "seed": evaluator.seed,
    }
    save_flat_checkpoint(path, header, evaluator.get_params())


def load_evaluator(path) -> Evaluator:
    header, params = load_flat_checkpoint(path)
    if header.get("kind") != "quality_evaluator":
        raise ValueError(f"{path}: not an evaluator checkpoint")
    evaluator = Evaluator(source_dim=header["source_dim"], hidden=tuple(header["hidden"]),
                          seed=header["seed"])
    evaluator.set_params(params)
    return evaluator

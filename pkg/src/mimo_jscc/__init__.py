"""Learned image transmission over MIMO with adaptive CSI feedback-bit allocation."""

from .channel import (ArrayGeometry, ChannelMatrix, ClusterConfig, NoiseModel,
                      array_response, draw_noise, generate_channel, snr_to_noise_variance)
from .codec import CodecSpec, JsccCodec, TrainingConfig, power_normalize, train, transmit_image
from .dataset import ImageSample, load_cifar_binary, synthesize_images
from .evaluator import Evaluator, QualityPrediction, label_dataset, predict, train_evaluator
from .feedback import (AllocationPlan, OutageSpec, calibrate_degradation,
                       group_split_allocation, min_bits_search, run_adaptive_experiment,
                       success_ratio, uniform_allocation)
from .metrics import MetricsRecord, psnr
from .precoding import (PrecoderPair, SymbolBlock, svd_precoders, transmit_block,
                        transmit_symbols, zf_precoders)
from .quantizer import CsiCodebook, fit_lloyd_max, nmse, quantize_csi

__version__ = "0.1.0"

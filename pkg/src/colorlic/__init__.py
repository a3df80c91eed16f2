"""Dual-branch (luminance/chrominance) learned image codec with a hyperprior."""

from .bitstream import CompressedImage, compress_image, decompress_image
from .errors import CodecError, DimensionError, FormatError, NumericError, UsageError
from .metrics import MetricReport, metric_report
from .model import LAMBDA_PRESETS, LatentBundle, LossWeights, ModelConfig, ModelParams, preset

__version__ = "0.1.0"

__all__ = [
    "CodecError", "CompressedImage", "DimensionError", "FormatError", "LAMBDA_PRESETS", "LatentBundle",
    "LossWeights", "MetricReport", "ModelConfig", "ModelParams", "NumericError", "UsageError",
    "compress_image", "decompress_image", "metric_report", "preset",
]

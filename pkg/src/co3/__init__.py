"""Gradient compression for rate-limited federated SGD: fit, quantize, entropy-code, correct."""
from co3.distfit import GenNormParams, fit_gennorm, fit_all_families, w2_distance
from co3.fpquant import FP4, FP8, FpFormat, quantize, dequantize, bias_polynomial, optimal_bias_mc
from co3.entropy import build_huffman, encode, decode, encode_frame, decode_frame, CommLedger
from co3.feedback import FeedbackState

__version__ = "0.1.0"

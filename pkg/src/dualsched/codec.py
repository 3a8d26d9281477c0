"""Piecewise-affine encoder/decoder pair for the power-limited noisy channel.

With the sign side channel the encoder sends ``Y = s*alpha*(x - s*b)``
and the decoder returns ``s*(1/alpha)*(gamma/(gamma+1))*y + s*b``. The
resulting mean squared error is ``Var/(1+gamma)`` regardless of the
noise shape, only its variance matters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sources import SourceDensity, interval_moments


@dataclass(frozen=True)
class ChannelParams:
    snr: float
    power: float = 1.0

    def __post_init__(self):
        if not self.power > 0:
            raise ValidationError("power", f"must be positive, got {self.power}")
        if not self.snr > 0:
            raise ValidationError("gamma", f"must be positive, got {self.snr}")

    @property
    def noise_variance(self) -> float:
        return self.power / self.snr


@dataclass(frozen=True)
class CodecParams:
    gain: float
    offset: float
    snr: float

    def __post_init__(self):
        if not self.gain > 0:
            raise ValidationError("alpha", f"gain must be positive, got {self.gain}")
        if not self.snr > 0:
            raise ValidationError("gamma", f"must be positive, got {self.snr}")

    @property
    def shrinkage(self) -> float:
        return self.snr / (self.snr + 1.0)


def codec_for_region(density: SourceDensity, lo, hi, channel: ChannelParams) -> CodecParams:
    """Codec matched to the positive noisy region ``(lo, hi]``.

    ``b`` is the conditional mean there and ``alpha`` normalises the
    transmitted symbol to full power.
    """
    mom = interval_moments(density, lo, hi)
    var = max(mom.variance, 1e-300)
    return CodecParams(gain=math.sqrt(channel.power / var), offset=mom.mean, snr=channel.snr)


def encode(x, s, codec: CodecParams):
    return s * codec.gain * (x - s * codec.offset)


def decode(y_tilde, s, codec: CodecParams):
    return s * codec.shrinkage * y_tilde / codec.gain + s * codec.offset


def noisy_channel_mse(conditional_variance, snr):
    """Minimum MSE of the affine scheme, ``Var/(1+gamma)``."""
    if np.any(np.asarray(conditional_variance) < 0):
        raise ValidationError("conditional_variance", "must be nonnegative")
    if not snr > 0:
        raise ValidationError("gamma", f"must be positive, got {snr}")
    return conditional_variance / (1.0 + snr)


def expected_sq_error(x, codec: CodecParams, noise_variance):
    """E_V[(x - xhat)^2] for a fixed source value under the affine codec."""
    g = codec.snr
    return (np.abs(x) - codec.offset) ** 2 / (g + 1.0) ** 2 + g * g * noise_variance / (
        codec.gain**2 * (g + 1.0) ** 2
    )

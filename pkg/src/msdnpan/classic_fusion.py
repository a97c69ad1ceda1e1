"""Classic detail-injection baselines and the high-pass detail extractor.

Component substitution (CS) injects the difference between the PAN band and
an intensity built from the MS bands; multiresolution analysis (MRA) injects
the difference between the PAN band and its low-pass version, either
additively or multiplicatively (SFIM). All three operate on the upsampled
MS image, band by band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor_core import box_filter, constant

MODES = ("cs", "mra_additive", "sfim_multiplicative")

_SFIM_FLOOR = 1e-6


@dataclass
class InjectionConfig:
    gains: tuple = (1.0,)       # scalar-like (len 1) or one gain per band
    band_weights: tuple = ()    # intensity weights; empty means equal
    window: int = 5             # low-pass box extent
    mode: str = "mra_additive"

    def validate(self, bands=None):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and positive, got {self.window}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.gains) not in (1,) and bands is not None \
                and len(self.gains) != bands:
            raise ValueError(
                f"need 1 or {bands} gains, got {len(self.gains)}")
        if self.band_weights:
            w = np.asarray(self.band_weights, dtype=np.float64)
            if bands is not None and w.size != bands:
                raise ValueError(f"need {bands} band weights, got {w.size}")
            if (w < 0).any():
                raise ValueError("band weights must be non-negative")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"band weights must sum to 1, got {w.sum()!r}")
        return self

    def weights_for(self, bands):
        if self.band_weights:
            return np.asarray(self.band_weights, dtype=np.float64)
        return np.full(bands, 1.0 / bands)

    def gains_for(self, bands):
        if len(self.gains) == 1:
            return np.full(bands, float(self.gains[0]))
        return np.asarray(self.gains, dtype=np.float64)


def _check_pair(ms_up, pan):
    if ms_up.ndim != 3:
        raise ShapeError(f"MS stack must be rank 3 (bands, h, w), got {ms_up.shape}")
    if pan.ndim != 3 or pan.shape[0] != 1:
        raise ShapeError(f"PAN must be rank 3 (1, h, w), got {pan.shape}")
    if ms_up.shape[1:] != pan.shape[1:]:
        raise ShapeError(
            f"spatial extents differ: MS {ms_up.shape[1:]} vs PAN {pan.shape[1:]}")


def hp_details(pan, window=5):
    """High-pass of the PAN band: pan minus its box-filtered low-pass."""
    if window < 1 or window % 2 == 0:
        raise ShapeError(f"window must be odd and positive, got {window}")
    return pan - box_filter(pan, window)


def _band_scale(values, like):
    return constant(np.asarray(values, dtype=like.dtype).reshape(-1, 1, 1),
                    dtype=like.dtype)


def cs_inject(ms_up, pan, config):
    """Component substitution: per band, ms + gain * (pan - intensity)."""
    _check_pair(ms_up, pan)
    bands = ms_up.shape[0]
    config.validate(bands)
    w = _band_scale(config.weights_for(bands), ms_up.data)
    intensity = (ms_up * w).sum(axis=0, keepdims=True)
    g = _band_scale(config.gains_for(bands), ms_up.data)
    return ms_up + g * (pan - intensity)


def mra_inject(ms_up, pan, config):
    """Multiresolution injection. Mode ``mra_additive`` adds the gain-scaled
    high-pass; ``sfim_multiplicative`` rescales each band by pan / lowpass,
    with the denominator clamped away from zero."""
    _check_pair(ms_up, pan)
    bands = ms_up.shape[0]
    config.validate(bands)
    lowpass = box_filter(pan, config.window)
    if config.mode == "sfim_multiplicative":
        denom = np.where(np.abs(lowpass.data) < _SFIM_FLOOR,
                         np.where(lowpass.data < 0, -_SFIM_FLOOR, _SFIM_FLOOR),
                         lowpass.data)
        ratio = constant(pan.data / denom, dtype=ms_up.data.dtype)
        return ms_up * ratio
    g = _band_scale(config.gains_for(bands), ms_up.data)
    return ms_up + g * (pan - lowpass)


def inject(ms_up, pan, config):
    """Dispatch on config.mode."""
    if config.mode == "cs":
        return cs_inject(ms_up, pan, config)
    return mra_inject(ms_up, pan, config)

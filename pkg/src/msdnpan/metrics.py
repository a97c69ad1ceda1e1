"""Quality assessment for sharpened products.

Reduced-resolution (reference-based): RMSE, SAM, ERGAS, SCC, Q4.
Full-resolution (no-reference): D_lambda, D_s, QNR.

All statistics are computed in float64 with correctly-rounded summation
(math.fsum). Besides stability this gives a useful exactness property:
replicating an image k*k-fold scales every fsum by exactly k*k, so means,
variances, and covariances of a nearest-neighbour upsample are bit-equal
to those of the original and D_lambda of such an upsample is exactly 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError

_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass
class MetricsConfig:
    ratio: float = 0.25          # h over l: PAN/MS resolution ratio (s = 4)
    p: int = 1                   # spectral distortion exponent
    q: int = 1                   # spatial distortion exponent
    alpha: float = 1.0           # QNR spectral exponent
    beta: float = 1.0            # QNR spatial exponent
    band_weights: tuple = ()     # Q4 band combination; empty means equal
    q_window: int = 0            # 0 = global statistics, else odd window size
    ergas_reference_mean: bool = False  # normalise by reference means instead

    def validate(self):
        if self.ratio <= 0:
            raise ValueError("ratio must be > 0")
        if self.p < 1 or self.q < 1:
            raise ValueError("distortion exponents must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("QNR exponents must be >= 0")
        if self.q_window and (self.q_window < 1 or self.q_window % 2 == 0):
            raise ValueError("q_window must be 0 (global) or an odd size")
        if self.band_weights:
            w = np.asarray(self.band_weights, dtype=np.float64)
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("band weights must be non-negative and sum to 1")
        return self


@dataclass
class MetricsReport:
    """Named scalar results plus the configuration that produced them."""
    values: dict = field(default_factory=dict)
    config: MetricsConfig = field(default_factory=MetricsConfig)

    KEYS = ("sam", "ergas", "scc", "q4", "qnr", "d_lambda", "d_s", "rmse")


def _arr(x, rank=None, name="input"):
    data = x.data if hasattr(x, "data") else x
    a = np.asarray(data, dtype=np.float64)
    if rank is not None and a.ndim != rank:
        raise ShapeError(f"{name} must be rank {rank}, got rank {a.ndim}")
    return a


def _fsum(a):
    return math.fsum(a.ravel().tolist())


def _fmean(a):
    return _fsum(a) / a.size


def rmse(x, y):
    """Root of the mean squared difference."""
    x, y = _arr(x), _arr(y)
    if x.shape != y.shape:
        raise ShapeError(f"rmse shapes differ: {x.shape} vs {y.shape}")
    d = x - y
    return math.sqrt(_fmean(d * d))


def sam(x, y):
    """Mean spectral angle in radians between per-pixel band vectors.

    Pixels where either spectrum has zero norm contribute angle 0. (A
    popular shortcut sums the bands before taking one arccos, whose
    argument can exceed 1; the standard per-pixel mean angle is computed
    instead.)
    The angle uses the half-angle form 2*atan2(|u-v|, |u+v|) on the unit
    spectra, which is exact for identical inputs and stays accurate where
    arccos loses precision near cos = +-1.
    """
    x, y = _arr(x, 3, "X"), _arr(y, 3, "Y")
    if x.shape != y.shape:
        raise ShapeError(f"sam shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise ShapeError("sam needs at least 2 bands")
    nx = np.sqrt(np.einsum("khw,khw->hw", x, x))
    ny = np.sqrt(np.einsum("khw,khw->hw", y, y))
    ok = (nx > 0) & (ny > 0)
    ux = x / np.where(ok, nx, 1.0)
    uy = y / np.where(ok, ny, 1.0)
    d = ux - uy
    s = ux + uy
    nd = np.sqrt(np.einsum("khw,khw->hw", d, d))
    ns = np.sqrt(np.einsum("khw,khw->hw", s, s))
    angles = np.where(ok, 2.0 * np.arctan2(nd, ns), 0.0)
    return _fmean(angles)


def ergas(x, y, config=None):
    """Relative global synthesis error, with X the prediction.

    100 * ratio * sqrt(mean_k (RMSE(X_k, Y_k) / mean(X_k))^2). The table
    normalises by the prediction mean; set ergas_reference_mean to use the
    reference mean convention instead.
    """
    cfg = (config or MetricsConfig()).validate()
    x, y = _arr(x, 3, "X"), _arr(y, 3, "Y")
    if x.shape != y.shape:
        raise ShapeError(f"ergas shapes differ: {x.shape} vs {y.shape}")
    norm_src = y if cfg.ergas_reference_mean else x
    total = []
    for k in range(x.shape[0]):
        mean_k = _fmean(norm_src[k])
        if mean_k == 0.0:
            raise DegenerateInputError(f"band {k} has zero mean")
        total.append((rmse(x[k], y[k]) / mean_k) ** 2)
    return 100.0 * cfg.ratio * math.sqrt(math.fsum(total) / x.shape[0])


def _laplacian(img):
    # valid 3x3 correlation; the kernel is symmetric
    out = np.zeros((img.shape[0] - 2, img.shape[1] - 2))
    for u in range(3):
        for v in range(3):
            c = _LAPLACIAN[u, v]
            if c:
                out += c * img[u:u + img.shape[0] - 2, v:v + img.shape[1] - 2]
    return out


def scc(x, y):
    """Pearson correlation of Laplacian-filtered images, pooled over bands."""
    x, y = _arr(x, 3, "X"), _arr(y, 3, "Y")
    if x.shape != y.shape:
        raise ShapeError(f"scc shapes differ: {x.shape} vs {y.shape}")
    if x.shape[1] < 3 or x.shape[2] < 3:
        raise ShapeError("scc needs at least 3x3 images")
    fx = np.stack([_laplacian(x[k]) for k in range(x.shape[0])])
    fy = np.stack([_laplacian(y[k]) for k in range(y.shape[0])])
    mx, my = _fmean(fx), _fmean(fy)
    vx = max(_fmean(fx * fx) - mx * mx, 0.0)
    vy = max(_fmean(fy * fy) - my * my, 0.0)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateInputError("zero variance after Laplacian filtering")
    cov = _fmean(fx * fy) - mx * my
    return cov / math.sqrt(vx * vy)


def _q_factors(x, y):
    mx, my = _fmean(x), _fmean(y)
    vx = max(_fmean(x * x) - mx * mx, 0.0)
    vy = max(_fmean(y * y) - my * my, 0.0)
    cov = _fmean(x * y) - mx * my
    sx, sy = math.sqrt(vx), math.sqrt(vy)
    if sx * sy == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    lum_den = mx * mx + my * my
    lum = 1.0 if lum_den == 0.0 else 2.0 * mx * my / lum_den
    return (cov / (sx * sy)) * lum * (2.0 * sx * sy / (vx + vy))


def q_index(x, y, config=None):
    """Universal quality index: correlation * luminance * contrast.

    Global statistics by default; with q_window set, the mean of the index
    over all dense odd-sized sliding windows. If both deviations vanish the
    index is 1 for identical images and 0 otherwise.
    """
    cfg = (config or MetricsConfig()).validate()
    x, y = _arr(x, 2, "x"), _arr(y, 2, "y")
    if x.shape != y.shape:
        raise ShapeError(f"q_index shapes differ: {x.shape} vs {y.shape}")
    if not cfg.q_window:
        return _q_factors(x, y)
    k = cfg.q_window
    h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"q_window {k} exceeds image extent {h}x{w}")
    vals = [
        _q_factors(x[i:i + k, j:j + k], y[i:i + k, j:j + k])
        for i in range(h - k + 1) for j in range(w - k + 1)
    ]
    return math.fsum(vals) / len(vals)


def q4(x, y, config=None):
    """Q index of the weight-combined bands (4-band inputs)."""
    cfg = (config or MetricsConfig()).validate()
    x, y = _arr(x, 3, "X"), _arr(y, 3, "Y")
    if x.shape != y.shape:
        raise ShapeError(f"q4 shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] != 4:
        raise ShapeError(f"q4 expects 4 bands, got {x.shape[0]}")
    if cfg.band_weights:
        w = np.asarray(cfg.band_weights, dtype=np.float64)
        if w.size != 4:
            raise ValueError(f"q4 needs 4 band weights, got {w.size}")
    else:
        w = np.full(4, 0.25)
    xc = np.einsum("k,khw->hw", w, x)
    yc = np.einsum("k,khw->hw", w, y)
    return q_index(xc, yc, cfg)


def _check_ratio(small, big, what):
    if big[0] % small[0] or big[1] % small[1]:
        raise ShapeError(f"{what}: {big} is not a multiple of {small}")
    s = big[0] // small[0]
    if s != big[1] // small[1]:
        raise ShapeError(f"{what}: anisotropic scale in {big} vs {small}")
    return s


def _block_mean(img, factor):
    h, w = img.shape
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def d_lambda(ms, fused, config=None):
    """Spectral distortion: change of inter-band Q values between scales."""
    cfg = (config or MetricsConfig()).validate()
    ms, fused = _arr(ms, 3, "ms"), _arr(fused, 3, "fused")
    k = ms.shape[0]
    if k < 2:
        raise ShapeError("d_lambda needs at least 2 bands")
    if fused.shape[0] != k:
        raise ShapeError(f"band counts differ: {k} vs {fused.shape[0]}")
    _check_ratio(ms.shape[1:], fused.shape[1:], "d_lambda")
    terms = []
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            dq = q_index(ms[i], ms[j], cfg) - q_index(fused[i], fused[j], cfg)
            terms.append(abs(dq) ** cfg.p)
    return (math.fsum(terms) / len(terms)) ** (1.0 / cfg.p)


def d_s(ms, fused, pan, config=None):
    """Spatial distortion: per-band Q against PAN at both scales."""
    cfg = (config or MetricsConfig()).validate()
    ms, fused = _arr(ms, 3, "ms"), _arr(fused, 3, "fused")
    pan = _arr(pan, 3, "pan")
    if pan.shape[0] != 1:
        raise ShapeError(f"pan must have a single band, got {pan.shape[0]}")
    if fused.shape[0] != ms.shape[0]:
        raise ShapeError(
            f"band counts differ: {ms.shape[0]} vs {fused.shape[0]}")
    if pan.shape[1:] != fused.shape[1:]:
        raise ShapeError(
            f"pan {pan.shape[1:]} does not match fused {fused.shape[1:]}")
    s = _check_ratio(ms.shape[1:], fused.shape[1:], "d_s")
    p = pan[0]
    p_low = _block_mean(p, s)
    terms = [
        abs(q_index(fused[i], p, cfg) - q_index(ms[i], p_low, cfg)) ** cfg.q
        for i in range(ms.shape[0])
    ]
    return (math.fsum(terms) / len(terms)) ** (1.0 / cfg.q)


def qnr(d_lambda_value, d_s_value, config=None):
    """(1 - D_lambda)^alpha * (1 - D_s)^beta."""
    cfg = (config or MetricsConfig()).validate()
    for name, v in (("d_lambda", d_lambda_value), ("d_s", d_s_value)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return (1.0 - d_lambda_value) ** cfg.alpha * (1.0 - d_s_value) ** cfg.beta


def pearson(x, y):
    """Plain Pearson correlation between two equally shaped arrays."""
    x, y = _arr(x), _arr(y)
    if x.shape != y.shape:
        raise ShapeError(f"pearson shapes differ: {x.shape} vs {y.shape}")
    mx, my = _fmean(x), _fmean(y)
    vx = max(_fmean(x * x) - mx * mx, 0.0)
    vy = max(_fmean(y * y) - my * my, 0.0)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateInputError("pearson undefined for constant input")
    return (_fmean(x * y) - mx * my) / math.sqrt(vx * vy)


def reduced_resolution_report(pred, gt, config=None):
    """SAM, ERGAS, SCC, and Q4 of a prediction against its reference."""
    cfg = (config or MetricsConfig()).validate()
    values = {
        "sam": sam(pred, gt),
        "ergas": ergas(pred, gt, cfg),
        "scc": scc(pred, gt),
        "q4": q4(pred, gt, cfg),
    }
    return MetricsReport(values=values, config=cfg)


def full_resolution_report(pred, ms, pan, config=None):
    """QNR with its spectral and spatial distortion components."""
    cfg = (config or MetricsConfig()).validate()
    dl = d_lambda(ms, pred, cfg)
    ds = d_s(ms, pred, pan, cfg)
    values = {"qnr": qnr(dl, ds, cfg), "d_lambda": dl, "d_s": ds}
    return MetricsReport(values=values, config=cfg)

"""
Low-precision floating-point grids and nearest-level quantization.

A format ``[1, exp, mant]`` represents ``s * m * 2**e`` with
``m in {1 + k / 2**mant}`` and ``e`` in the IEEE normal range
``{-(2**(exp-1) - 2), ..., 2**(exp-1) - 1}``; a zero level is always added.
With ``subnormals=True`` the values ``k / 2**mant * 2**e_min`` are included
too, as produced by an IEEE minifloat cast.

The exponent bias ``bias`` is a multiplier applied to the input before the
cast, so the grid actually used is ``base_grid / bias``.  The fitted bias
polynomials below follow that convention and scale as ``1 / alpha`` with the
GenNorm scale of the gradients.
"""
import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from co3.distfit import GenNormParams, gennorm_sample
from co3.errors import DecodeError, NoPolynomialError, ParameterDomainError, QuantizationInputError


@dataclass(frozen=True)
class FpFormat:
    exp_bits: int
    mant_bits: int
    bias: float = 1.0
    subnormals: bool = False

    sgn_bits = 1

    def __post_init__(self):
        if self.exp_bits < 2 or self.exp_bits > 15:
            raise ParameterDomainError("exp_bits must be in [2, 15]")
        if self.mant_bits < 0 or self.mant_bits > 15:
            raise ParameterDomainError("mant_bits must be in [0, 15]")
        if not (math.isfinite(self.bias) and self.bias > 0):
            raise ParameterDomainError(f"bias must be a positive finite multiplier, got {self.bias}")

    @classmethod
    def parse(cls, name: str, **kwargs) -> "FpFormat":
        """``'fp4'``, ``'fp8'`` or an explicit ``'e<exp>m<mant>'`` such as ``'e3m2'``."""
        key = name.strip().lower()
        if key in _NAMED:
            return replace(_NAMED[key], **kwargs)
        if key.startswith("e") and "m" in key:
            e, m = key[1:].split("m", 1)
            if e.isdigit() and m.isdigit():
                return cls(int(e), int(m), **kwargs)
        raise ParameterDomainError(f"unknown fp format {name!r}")

    def with_bias(self, bias: float) -> "FpFormat":
        return replace(self, bias=float(bias))

    @property
    def exponents(self):
        half = 2 ** (self.exp_bits - 1)
        return np.arange(-(half - 2), half)

    @property
    def mantissas(self):
        return 1.0 + np.arange(2 ** self.mant_bits) / 2 ** self.mant_bits

    @property
    def alphabet_size(self) -> int:
        return len(grid_levels(self))

    @property
    def symbol_bits(self) -> int:
        """Fixed-width bits needed to index the alphabet."""
        return max(1, math.ceil(math.log2(self.alphabet_size)))

    @property
    def zero_symbol(self) -> int:
        return self.alphabet_size // 2

    @property
    def max_level(self) -> float:
        return float(grid_levels(self)[-1])

    @property
    def label(self) -> str:
        return f"[1,{self.exp_bits},{self.mant_bits}]"


FP4 = FpFormat(2, 1)
FP8 = FpFormat(5, 2)
_NAMED = {"fp4": FP4, "fp8": FP8}


@functools.lru_cache(maxsize=64)
def _base_magnitudes(exp_bits, mant_bits, subnormals):
    fmt = FpFormat(exp_bits, mant_bits)
    pos = (fmt.mantissas[None, :] * 2.0 ** fmt.exponents[:, None]).ravel()
    if subnormals:
        frac = np.arange(1, 2 ** mant_bits) / 2 ** mant_bits
        pos = np.concatenate([frac * 2.0 ** fmt.exponents[0], pos])
    pos = np.sort(pos)
    pos.setflags(write=False)
    return pos


@functools.lru_cache(maxsize=256)
def _levels_cached(exp_bits, mant_bits, bias, subnormals):
    pos = _base_magnitudes(exp_bits, mant_bits, subnormals) / bias
    levels = np.concatenate([-pos[::-1], [0.0], pos])
    levels.setflags(write=False)
    return levels


def grid_levels(fmt: FpFormat) -> np.ndarray:
    """Every representable value, ascending and symmetric about zero (read-only)."""
    return _levels_cached(fmt.exp_bits, fmt.mant_bits, fmt.bias, fmt.subnormals)


def theory_format(exp_bits: int, mant_bits: int, smoothness: float = 0.0, subnormals: bool = False) -> FpFormat:
    """Format whose level scale is c_scale = (1 + L) * 2**-(2**(exp-1) - 2).

    This is the scale under which the quantizer range is +-B with B < 4(1 + L).
    """
    c_scale = (1.0 + smoothness) * 2.0 ** (-(2 ** (exp_bits - 1) - 2))
    return FpFormat(exp_bits, mant_bits, bias=1.0 / c_scale, subnormals=subnormals)


@dataclass(frozen=True)
class QuantizedBlock:
    format: FpFormat
    symbols: np.ndarray

    @property
    def length(self) -> int:
        return int(self.symbols.size)

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, QuantizedBlock):
            return NotImplemented
        return self.format == other.format and np.array_equal(self.symbols, other.symbols)

    __hash__ = None


def _nearest_index(x, levels):
    i = np.searchsorted(levels, x)
    i = np.clip(i, 1, len(levels) - 1)
    lo = levels[i - 1]
    hi = levels[i]
    d_lo = np.abs(x - lo)
    d_hi = np.abs(hi - x)
    # equidistant: keep the level closer to zero
    take_lo = (d_lo < d_hi) | ((d_lo == d_hi) & (np.abs(lo) <= np.abs(hi)))
    return np.where(take_lo, i - 1, i)


def quantize(values, fmt: FpFormat) -> QuantizedBlock:
    """Map every value to its nearest grid level; out-of-range values clip to +-max."""
    x = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise QuantizationInputError("quantize() got non-finite values")
    symbols = _nearest_index(x, grid_levels(fmt)).astype(np.int64)
    return QuantizedBlock(fmt, symbols)


def dequantize(block: QuantizedBlock) -> np.ndarray:
    levels = grid_levels(block.format)
    sym = np.asarray(block.symbols)
    if sym.size == 0:
        return np.zeros(0)
    if sym.min() < 0 or sym.max() >= len(levels):
        raise DecodeError("symbol index outside the format alphabet")
    return levels[sym]


def quantize_values(values, fmt: FpFormat) -> np.ndarray:
    """Shorthand for ``dequantize(quantize(values, fmt))``."""
    x = np.asarray(values, dtype=float).ravel()
    return grid_levels(fmt)[_nearest_index(x, grid_levels(fmt))]


# -- exponent bias selection --------------------------------------------------

_FP4_COEFFS = (0.46, -2.85, 5.37, -2.85, 0.52)
_FP8_COEFFS = (-5793.0, 35605.5, -76511.8, 68153.0, -18520.3)
POLY_BETA_RANGE = (0.3, 1.6)


def bias_polynomial(beta: float, sigma: float, fmt: FpFormat) -> float:
    """Quartic fit of the optimal bias in beta, divided by ``sigma``.

    ``sigma`` is the GenNorm scale of the samples; the fits were made at
    scale 1.  Raises :class:`NoPolynomialError` for formats other than
    fp4/fp8 or for shapes outside the range the fits cover.
    """
    key = (fmt.exp_bits, fmt.mant_bits)
    if key == (2, 1):
        coeffs = _FP4_COEFFS
    elif key == (5, 2):
        coeffs = _FP8_COEFFS
    else:
        raise NoPolynomialError(f"no bias polynomial for format {fmt.label}")
    lo, hi = POLY_BETA_RANGE
    if not lo <= beta <= hi:
        raise NoPolynomialError(f"beta={beta:.4g} outside the fitted range [{lo}, {hi}]")
    if not sigma > 0:
        raise ParameterDomainError("sigma must be positive")
    value = 0.0
    for c in reversed(coeffs):
        value = value * beta + c
    return value / sigma


def _magnitude_mse(abs_sorted, csum, csum2, fmt, bias):
    """E[(x - Q(x))^2] from sorted |x| via prefix sums; O(levels * log n)."""
    pos = _base_magnitudes(fmt.exp_bits, fmt.mant_bits, fmt.subnormals) / bias
    lv = np.concatenate([[0.0], pos])
    thresholds = 0.5 * (lv[:-1] + lv[1:])
    # ties go to the smaller magnitude, hence side="right"
    cuts = np.concatenate([[0], np.searchsorted(abs_sorted, thresholds, side="right"), [abs_sorted.size]])
    s1 = csum[cuts[1:]] - csum[cuts[:-1]]
    s2 = csum2[cuts[1:]] - csum2[cuts[:-1]]
    cnt = cuts[1:] - cuts[:-1]
    sse = s2 - 2.0 * lv * s1 + cnt * lv * lv
    return float(sse.sum()) / abs_sorted.size


def quantization_mse_curve(samples, fmt: FpFormat, biases):
    """Monte-Carlo squared error for each candidate bias (vectorized helper)."""
    a = np.sort(np.abs(np.asarray(samples, dtype=float)))
    csum = np.concatenate([[0.0], np.cumsum(a)])
    csum2 = np.concatenate([[0.0], np.cumsum(a * a)])
    return np.array([_magnitude_mse(a, csum, csum2, fmt, float(b)) for b in biases])


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def optimal_bias_mc(p: GenNormParams, fmt: FpFormat, n_samples: int, seed, step: float = 1.0 / 16) -> float:
    """Bias minimizing the Monte-Carlo squared quantization error of GenNorm samples.

    The search runs over log2(bias): a coarse grid with spacing ``step``
    across [-20, 12] octaves around 1/alpha, then golden-section refinement
    inside the best grid cell.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    x = gennorm_sample(p, n_samples, seed)
    a = np.sort(np.abs(x))
    csum = np.concatenate([[0.0], np.cumsum(a)])
    csum2 = np.concatenate([[0.0], np.cumsum(a * a)])

    def mse(log_b):
        return _magnitude_mse(a, csum, csum2, fmt, 2.0 ** log_b)

    center = -math.log2(p.alpha)
    grid = center + np.arange(-20.0, 12.0 + step / 2, step)
    values = np.array([mse(g) for g in grid])
    k = int(np.argmin(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = mse(c), mse(d)
    for _ in range(60):
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = mse(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = mse(d)
    best = min((values[k], grid[k]), (fc, c), (fd, d))
    return float(2.0 ** best[1])


def quantization_error_moment(p: GenNormParams, fmt: FpFormat, n: int, seed) -> float:
    """Monte-Carlo E[(G - Q(G))^2] for G ~ GenNorm(p)."""
    g = gennorm_sample(p, n, seed)
    err = g - quantize_values(g, fmt)
    return float(np.mean(err * err))


def tail_error_moment(p: GenNormParams, fmt: FpFormat, n: int, seed) -> float:
    """Monte-Carlo E[(G - Q(G))^2 * 1{G > B}], B the largest level."""
    g = gennorm_sample(p, n, seed)
    err = g - quantize_values(g, fmt)
    return float(np.mean(np.where(g > fmt.max_level, err * err, 0.0)))


def max_interval(fmt: FpFormat) -> float:
    """Widest gap between adjacent levels, c_scale * 2**-mant * 2**e_max."""
    return float(np.max(np.diff(grid_levels(fmt))))

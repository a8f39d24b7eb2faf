import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from co3.distfit import GenNormParams
from co3.errors import DecodeError, NoPolynomialError, ParameterDomainError, QuantizationInputError
from co3.fpquant import (
    FP4,
    FP8,
    FpFormat,
    QuantizedBlock,
    bias_polynomial,
    dequantize,
    grid_levels,
    max_interval,
    optimal_bias_mc,
    quantization_error_moment,
    quantization_mse_curve,
    quantize,
    quantize_values,
    tail_error_moment,
    theory_format,
)

# tests/oracles/compute_oracles.py
FP4_LEVELS = [-3.0, -2.0, -1.5, -1.0, 0.0, 1.0, 1.5, 2.0, 3.0]
FP4_SUB_LEVELS = [-3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0]
# brute-force grid search on scipy.stats.gennorm samples, n = 1e6
FP4_BRUTE_BIAS = {0.5: 0.05289, 1.0: 0.6506}


class TestFormat:
    def test_named(self):
        assert FpFormat.parse("fp4") == FP4 == FpFormat(2, 1)
        assert FpFormat.parse("FP8") == FP8 == FpFormat(5, 2)
        assert FpFormat.parse("e3m2", subnormals=True) == FpFormat(3, 2, subnormals=True)
        with pytest.raises(ParameterDomainError):
            FpFormat.parse("fp16")

    def test_domain(self):
        for args in [(1, 1), (16, 1), (3, -1), (3, 16)]:
            with pytest.raises(ParameterDomainError):
                FpFormat(*args)
        for bias in (0.0, -1.0, math.inf, math.nan):
            with pytest.raises(ParameterDomainError):
                FpFormat(2, 1, bias)

    def test_exponent_and_mantissa_sets(self):
        assert list(FP4.exponents) == [0, 1]
        assert list(FP8.exponents) == list(range(-14, 16))
        assert list(FP8.mantissas) == [1.0, 1.25, 1.5, 1.75]

    def test_alphabet(self):
        assert FP4.alphabet_size == 9 and FP4.symbol_bits == 4
        assert FP8.alphabet_size == 241 and FP8.symbol_bits == 8
        assert FP4.zero_symbol == 4
        assert FpFormat(2, 1, subnormals=True).alphabet_size == 11


class TestGrid:
    def test_fp4(self):
        assert list(grid_levels(FP4)) == FP4_LEVELS
        assert list(grid_levels(FpFormat(2, 1, subnormals=True))) == FP4_SUB_LEVELS

    def test_fp8_count_and_symmetry(self):
        lv = grid_levels(FP8)
        assert lv.size == 2 * 4 * 30 + 1
        assert np.array_equal(lv, -lv[::-1])
        assert np.all(np.diff(lv) > 0)

    def test_bias_divides(self):
        assert np.allclose(grid_levels(FP4.with_bias(2.0)), np.array(FP4_LEVELS) / 2)

    def test_read_only(self):
        with pytest.raises(ValueError):
            grid_levels(FP4)[0] = 1.0


class TestQuantize:
    @pytest.mark.parametrize("x, level", [(1.2, 1.0), (1.25, 1.0), (1.75, 1.5), (10.0, 3.0), (-10.0, -3.0),
                                          (0.5, 0.0), (0.51, 1.0), (2.5, 2.0), (-1.25, -1.0), (0.0, 0.0)])
    def test_hand_cases(self, x, level):
        assert quantize_values([x], FP4)[0] == level

    def test_zero_symbol(self):
        assert quantize([0.0], FP8).symbols[0] == FP8.zero_symbol

    def test_non_finite(self):
        for bad in (math.nan, math.inf):
            with pytest.raises(QuantizationInputError):
                quantize([1.0, bad], FP4)

    def test_dequantize(self):
        blk = quantize([1.5, -2.0], FP4)
        assert list(dequantize(blk)) == [1.5, -2.0]
        assert dequantize(QuantizedBlock(FP4, np.zeros(0, dtype=np.int64))).size == 0
        with pytest.raises(DecodeError):
            dequantize(QuantizedBlock(FP4, np.array([9])))
        with pytest.raises(DecodeError):
            dequantize(QuantizedBlock(FP4, np.array([-1])))

    def test_round_trip_idempotent(self, rng):
        x = rng.standard_normal(1000) * 3
        blk = quantize(x, FP8)
        assert quantize(dequantize(blk), FP8) == blk

    @settings(max_examples=200, deadline=None)
    @given(x=st.floats(-1e3, 1e3), bias=st.floats(0.01, 100.0), fmt=st.sampled_from([FP4, FP8, FpFormat(3, 2, subnormals=True)]))
    def test_projection_and_symmetry(self, x, bias, fmt):
        f = fmt.with_bias(bias)
        lv = grid_levels(f)
        q = quantize_values([x], f)[0]
        assert abs(x - q) <= np.min(np.abs(x - lv)) + 1e-12 * max(1.0, abs(x))
        assert quantize_values([-x], f)[0] == -q

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(-50, 50), L=st.floats(0.0, 5.0))
    def test_interior_error_half_interval(self, x, L):
        f = theory_format(2, 1, L)
        if abs(x) <= f.max_level:
            assert abs(x - quantize_values([x], f)[0]) <= max_interval(f) / 2 + 1e-12


class TestTheoryScale:
    @pytest.mark.parametrize("L", [0.0, 0.5, 3.0])
    @pytest.mark.parametrize("exp_bits, mant_bits", [(2, 1), (5, 2), (3, 3)])
    def test_boundary(self, exp_bits, mant_bits, L):
        f = theory_format(exp_bits, mant_bits, L)
        half = 2 ** (exp_bits - 1)
        c_scale = (1 + L) * 2.0 ** (-(half - 2))
        expected_b = (1 + L) * (2 - 2.0 ** -mant_bits) * 2.0
        assert f.max_level == pytest.approx(expected_b)
        assert f.max_level < 4 * (1 + L)
        assert max_interval(f) == pytest.approx(c_scale * 2.0 ** -mant_bits * 2.0 ** (half - 1))


class TestBiasPolynomial:
    def test_coefficient_values(self):
        assert bias_polynomial(1.0, 1.0, FP4) == pytest.approx(0.65)
        assert bias_polynomial(1.0, 1.0, FP8) == pytest.approx(2933.4)
        assert bias_polynomial(1.0, 2.0, FP4) == pytest.approx(0.325)

    def test_subnormal_flag_and_bias_do_not_matter(self):
        assert bias_polynomial(1.2, 1.0, FpFormat(2, 1, 3.0, True)) == bias_polynomial(1.2, 1.0, FP4)

    def test_unsupported(self):
        with pytest.raises(NoPolynomialError):
            bias_polynomial(1.0, 1.0, FpFormat(3, 2))
        with pytest.raises(NoPolynomialError):
            bias_polynomial(2.0, 1.0, FP4)
        with pytest.raises(ParameterDomainError):
            bias_polynomial(1.0, 0.0, FP4)


class TestOptimalBias:
    SUB = FpFormat(2, 1, subnormals=True)

    @pytest.mark.parametrize("beta", sorted(FP4_BRUTE_BIAS))
    def test_matches_brute_force_oracle(self, beta):
        b = optimal_bias_mc(GenNormParams(0, 1, beta), self.SUB, 1_000_000, 7)
        assert b == pytest.approx(FP4_BRUTE_BIAS[beta], rel=0.05)

    def test_laplace_near_fit(self):
        assert optimal_bias_mc(GenNormParams(0, 1, 1), self.SUB, 200_000, 0) == pytest.approx(0.65, abs=0.15)

    def test_normal_near_fit(self):
        # polynomial at beta = 2 is 1.76 (outside its fitted range but still close)
        assert optimal_bias_mc(GenNormParams(0, 1, 2), self.SUB, 200_000, 0) == pytest.approx(1.76, abs=0.3)

    def test_scale_equivariance(self):
        b1 = optimal_bias_mc(GenNormParams(0, 1, 1.3), self.SUB, 100_000, 3)
        b4 = optimal_bias_mc(GenNormParams(0, 4, 1.3), self.SUB, 100_000, 3)
        assert b4 == pytest.approx(b1 / 4, rel=1e-6)

    def test_minimizes_curve(self, rng):
        p = GenNormParams(0, 1, 1.2)
        b = optimal_bias_mc(p, self.SUB, 50_000, 11)
        from co3.distfit import gennorm_sample
        x = gennorm_sample(p, 50_000, 11)
        grid = b * 2.0 ** np.linspace(-1, 1, 41)
        curve = quantization_mse_curve(x, self.SUB, grid)
        assert curve[20] <= curve.min() + 1e-12

    def test_mse_curve_matches_direct(self, rng):
        x = rng.standard_normal(5000)
        for b in (0.3, 1.0, 2.7):
            direct = np.mean((x - quantize_values(x, FP4.with_bias(b))) ** 2)
            assert quantization_mse_curve(x, FP4, [b])[0] == pytest.approx(direct, rel=1e-10)

    def test_needs_enough_samples(self):
        with pytest.raises(ValueError):
            optimal_bias_mc(GenNormParams(0, 1, 1), FP4, 100, 0)


class TestErrorMoments:
    def test_lemma_bounds(self):
        for fmt, bound in ((FP4, 4.3), (FP8, 1.3)):
            f = theory_format(fmt.exp_bits, fmt.mant_bits, 0.0)
            for beta in (1.0, 1.5, 2.0):
                assert quantization_error_moment(GenNormParams(0, 1, beta), f, 200_000, 1) <= bound

    def test_laplace_tail(self):
        # closed form for Laplace: E[(G - B)^2 1{G > B}] = exp(-B), B = 3 on fp4
        f = theory_format(2, 1, 0.0)
        assert f.max_level == 3.0
        assert tail_error_moment(GenNormParams(0, 1, 1), f, 1_000_000, 2) == pytest.approx(math.exp(-3), rel=0.05)

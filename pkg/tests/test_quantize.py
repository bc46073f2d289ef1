import numpy as np
import pytest

from compress_interplay.quantize import (
    ELEMENT_TYPES,
    PRESETS,
    ExponentMode,
    Family,
    QuantFormat,
    block_scale,
    enumerate_grid,
    get_preset,
    on_grid,
    quant_error,
    quantize_block,
    quantize_blocks,
    quantize_tensor,
    round_half_away,
    step_bound,
)
from compress_interplay.tensorcore import ValidationError

ALL_PRESETS = sorted(PRESETS)


def blocks(count=400, n=64, seed=0):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((count, n))
    # vary the dynamic range so many exponents are exercised
    return b * np.exp2(rng.integers(-20, 20, size=(count, 1)))


class TestGoldens:
    def test_int4_block(self):
        q = quantize_block([3.9, 4.0], get_preset("INT4", 2))
        np.testing.assert_allclose(q, [4.0, 4.0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(
            quant_error([3.9, 4.0], get_preset("INT4", 2)), [-0.1, 0.0], atol=1e-12
        )

    def test_hbfp4_paper_block(self):
        f = get_preset("HBFP4-paper", 2)
        np.testing.assert_array_equal(quantize_block([0.6, 1.3], f), [0.625, 1.25])
        np.testing.assert_allclose(quant_error([0.6, 1.3], f), [-0.025, 0.05], atol=1e-15)

    def test_exact_block_unchanged(self):
        f = get_preset("HBFP4-paper", 4)
        np.testing.assert_array_equal(quantize_block([1, 0.5, -0.25, 0], f), [1, 0.5, -0.25, 0])

    def test_step_bound_values(self):
        assert step_bound(get_preset("INT4"), 4.0) == pytest.approx(2 / 7)
        assert step_bound(get_preset("HBFP4-paper"), 1.3) == 0.0625
        assert step_bound(get_preset("INT8"), 0.0) == 0.0

    def test_mxfp8_saturates_at_448_shifted(self):
        f = get_preset("MXFP8", 2)
        # CEIL exponent: scale 448 -> shift = 9 - 8 = 1, elements up to 896 fit
        q = quantize_block([448.0, 1.0], f)
        assert q[0] == 448.0

    def test_round_half_away(self):
        np.testing.assert_array_equal(
            round_half_away(np.array([0.5, 1.5, -0.5, -2.5, 2.4])), [1, 2, -1, -3, 2]
        )


class TestPresets:
    def test_unknown_preset(self):
        with pytest.raises(KeyError, match="unknown format preset"):
            get_preset("FP3")

    def test_aliases(self):
        for m in (8, 6, 4):
            assert PRESETS[f"HBFP{m}"] == PRESETS[f"HBFP{m}-appendix"]

    def test_invalid_formats(self):
        with pytest.raises(ValidationError):
            QuantFormat(Family.INT, 1)
        with pytest.raises(ValidationError):
            QuantFormat(Family.MXFP, 3)
        with pytest.raises(ValidationError):
            QuantFormat(Family.MXFP, 2, mxfp_config=ELEMENT_TYPES["E4M3"])
        with pytest.raises(ValidationError):
            QuantFormat(Family.HBFP, 4, mantissa_clamp=(0, 7))

    def test_element_types(self):
        assert ELEMENT_TYPES["E2M3"].max_normal == 7.5
        assert ELEMENT_TYPES["E3M2"].max_normal == 28.0
        assert ELEMENT_TYPES["E2M1"].max_normal == 6.0


@pytest.mark.parametrize("name", ALL_PRESETS)
class TestQuantizerProperties:
    def test_values_on_grid(self, name):
        f = get_preset(name, 64)
        b = blocks(60)
        q = quantize_blocks(b, f)
        for row, qrow in zip(b, q):
            assert on_grid(qrow, f, block_scale(row)).all()

    def test_nearest_grid_point(self, name):
        # brute force: no grid point is strictly closer than the chosen one
        f = get_preset(name, 16)
        b = blocks(40, 16, seed=5)
        q = quantize_blocks(b, f)
        for row, qrow in zip(b, q):
            grid = enumerate_grid(f, block_scale(row))
            best = np.abs(row[:, None] - grid[None, :]).min(axis=1)
            np.testing.assert_allclose(np.abs(row - qrow), best, rtol=0, atol=1e-12 * block_scale(row))

    def test_idempotent(self, name):
        f = get_preset(name, 64)
        q = quantize_blocks(blocks(), f)
        np.testing.assert_array_equal(quantize_blocks(q, f), q)

    def test_error_within_step_bound(self, name):
        f = get_preset(name, 64)
        b = blocks()
        err = np.abs(b - quantize_blocks(b, f)).max(axis=1)
        bound = step_bound(f, block_scale(b))
        assert np.all(err <= bound * (1 + 1e-12))

    def test_sign_preserved_and_zero_kept(self, name):
        f = get_preset(name, 64)
        b = blocks()
        b[:, 3] = 0.0
        q = quantize_blocks(b, f)
        assert np.all(q * b >= 0)
        assert np.all(q[:, 3] == 0) and not np.signbit(q[:, 3]).any()

    def test_zero_block(self, name):
        np.testing.assert_array_equal(quantize_block(np.zeros(64), get_preset(name)), 0.0)

    def test_scale_invariance_power_of_two(self, name):
        f = get_preset(name, 64)
        b = blocks(50)
        np.testing.assert_array_equal(quantize_blocks(b * 8.0, f), quantize_blocks(b, f) * 8.0)


class TestInt:
    def test_block_max_is_exact(self):
        b = blocks()
        for name in ("INT8", "INT4"):
            q = quantize_blocks(b, get_preset(name))
            idx = np.abs(b).argmax(axis=1)
            rows = np.arange(len(b))
            np.testing.assert_array_equal(q[rows, idx], b[rows, idx])


class TestExponentMode:
    def test_floor_vs_ceil_spacing(self):
        floor = QuantFormat(Family.HBFP, 4, ExponentMode.FLOOR, (-15, 15))
        ceil = QuantFormat(Family.HBFP, 4, ExponentMode.CEIL, (-7, 7))
        # scale 1.3: floor exponent 0 -> spacing 1/8; ceil exponent 1 -> spacing 1/4
        assert quantize_block([1.3, 0.1], floor)[0] == 1.25
        assert quantize_block([1.3, 0.1], ceil)[0] == 1.25
        assert quantize_block([1.3, 0.1], floor)[1] == 0.125
        assert quantize_block([1.3, 0.1], ceil)[1] == 0.0


    @pytest.mark.parametrize("name", ["HBFP6-appendix", "MXINT8", "HBFP4-appendix"])
    def test_max_rounding_onto_lower_binade_is_stable(self, name):
        # 16.2 * 2^-5 rounds to 0.5 exactly; the second pass must keep the grid
        f = get_preset(name, 2)
        b = [16.2 * 2.0 ** -(f.m - 1), 0.013]
        q = quantize_block(b, f)
        np.testing.assert_array_equal(quantize_block(q, f), q)


class TestTensorQuantize:
    def test_matches_blockwise(self):
        arr = blocks(8, 64).reshape(16, 32)
        f = get_preset("HBFP6")
        np.testing.assert_array_equal(
            quantize_tensor(arr, f).reshape(-1, 64), quantize_blocks(arr.reshape(-1, 64), f)
        )

    def test_indivisible(self):
        with pytest.raises(ValidationError):
            quantize_tensor(np.ones(10), get_preset("INT8"))

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            quantize_block([np.nan, 1.0], get_preset("INT8"))

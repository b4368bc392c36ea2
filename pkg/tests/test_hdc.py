import itertools

import numpy as np
import pytest

from drcn.hdc import DilationPattern, hdc_max_gap, hdc_validate, receptive_field


def footprint_has_no_holes(rates, kernel=3):
    """Brute force: stamp every tap of the stacked dilated kernels on a 2-D grid."""
    half = kernel // 2
    reach = sum(r * half for r in rates)
    grid = np.zeros((2 * reach + 1, 2 * reach + 1), dtype=bool)
    grid[reach, reach] = True
    for r in rates:
        nxt = np.zeros_like(grid)
        for dy in range(-half, half + 1):
            for dx in range(-half, half + 1):
                nxt |= np.roll(np.roll(grid, dy * r, 0), dx * r, 1)
        grid = nxt
    return bool(grid.all())


class TestMaxGap:
    def test_worked_example_valid(self):
        gaps = hdc_max_gap([1, 2, 5], 3)
        assert gaps[2] == 5 and gaps[1] == 2

    def test_worked_example_invalid(self):
        assert hdc_max_gap([1, 2, 9], 3)[1] == 5

    @pytest.mark.parametrize("k", [3, 5, 7])
    def test_unit_rates(self, k):
        assert hdc_max_gap([1, 1, 1], k) == [1, 1, 1]

    def test_last_gap_is_last_rate(self, rng):
        for _ in range(100):
            rates = list(rng.integers(1, 20, size=rng.integers(1, 6)))
            assert hdc_max_gap(rates)[-1] == rates[-1]

    def test_second_term_simplification(self):
        # the recurrence's M - 2(M - r) is 2r - M
        for r in range(1, 21):
            for m in range(1, 21):
                assert m - 2 * (m - r) == 2 * r - m
                assert hdc_max_gap([r, m])[0] == max(m - 2 * r, m - 2 * (m - r), r)

    def test_empty(self):
        with pytest.raises(ValueError):
            hdc_max_gap([])


class TestValidate:
    def test_worked_examples(self):
        good = hdc_validate([1, 2, 5], 3)
        assert good.valid and good.failing_index is None and good.checked_gap == 2
        bad = hdc_validate(DilationPattern((1, 2, 9), 3))
        assert not bad.valid and bad.failing_index == 1 and bad.gaps[1] == 5

    def test_single_layer(self):
        assert hdc_validate([2], 3).valid
        assert not hdc_validate([4], 3).valid

    @pytest.mark.parametrize("k", [3, 5, 7, 9])
    def test_all_ones_always_valid(self, k):
        for n in range(1, 6):
            assert hdc_validate([1] * n, k).valid

    def test_sound_against_footprint_oracle(self):
        # a pattern starting at rate 1 that passes the recurrence leaves no holes
        for n in (1, 2, 3):
            for tail in itertools.product(range(1, 7), repeat=n - 1):
                rates = (1,) + tail
                if hdc_validate(rates, 3).valid:
                    assert footprint_has_no_holes(rates), rates

    def test_exact_on_increasing_patterns(self):
        # for nondecreasing rates starting at 1, valid <=> hole-free footprint
        checked = 0
        for n in (1, 2, 3):
            for tail in itertools.product(range(1, 7), repeat=n - 1):
                rates = (1,) + tail
                if list(rates) != sorted(rates):
                    continue
                assert hdc_validate(rates, 3).valid == footprint_has_no_holes(rates), rates
                checked += 1
        assert checked == 28

    def test_recurrence_is_conservative_for_sawtooth(self):
        # [1, 3, 1] fills its square yet the recurrence rejects it
        assert footprint_has_no_holes((1, 3, 1))
        assert not hdc_validate([1, 3, 1], 3).valid

    def test_bad_args(self):
        with pytest.raises(ValueError):
            hdc_validate([0, 1])
        with pytest.raises(ValueError):
            hdc_validate([1, 2], kernel=4)


class TestReceptiveField:
    def test_single(self):
        assert receptive_field([(3, 1)]) == 3

    def test_hdc_stack(self):
        assert receptive_field([(3, 1), (3, 2), (3, 5)]) == 17

    def test_full_gray_model(self):
        stack = [(7, 1)] + [(3, r) for _ in range(3) for r in (1, 2, 5)] + [(3, 1)]
        assert receptive_field(stack) == 57

    def test_monotone(self, rng):
        stack = []
        prev = 1
        for _ in range(20):
            stack.append((int(rng.choice([3, 5, 7])), int(rng.integers(1, 6))))
            rf = receptive_field(stack)
            assert rf > prev
            prev = rf

    def test_empty(self):
        with pytest.raises(ValueError):
            receptive_field([])

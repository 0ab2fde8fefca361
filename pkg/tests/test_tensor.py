import itertools
import math

import numpy as np
import pytest

from ttlstm.errors import ShapeError
from ttlstm.tensor import chain_mode31, linear_index, mode31_product, multi_index


class TestLinearIndex:
    def test_all_ones_maps_to_first(self):
        assert linear_index((1, 1), (2, 3)) == 1

    def test_hand_value(self):
        # i_2 + (i_1 - 1) * 3 = 1 + 3
        assert linear_index((2, 1), (2, 3)) == 4

    def test_matches_colex_enumeration(self):
        dims = (4, 5, 6)
        for rank, mi0 in enumerate(itertools.product(*(range(d) for d in dims))):
            mi = tuple(c + 1 for c in mi0)
            assert linear_index(mi, dims) == rank + 1

    def test_out_of_range_coordinate(self):
        with pytest.raises(IndexError):
            linear_index((3, 1), (2, 3))
        with pytest.raises(IndexError):
            linear_index((0, 1), (2, 3))
        with pytest.raises(IndexError):
            linear_index((1,), (2, 3))


class TestMultiIndex:
    def test_first_and_last(self):
        assert multi_index(1, (2, 3)) == (1, 1)
        assert multi_index(6, (2, 3)) == (2, 3)

    def test_round_trip_27(self):
        dims = (3, 3, 3)
        for flat in range(1, 28):
            assert linear_index(multi_index(flat, dims), dims) == flat

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            multi_index(0, (2, 3))
        with pytest.raises(IndexError):
            multi_index(7, (2, 3))


@pytest.mark.parametrize("dims", [(2,), (5, 3), (2, 3, 4), (10, 10, 10), (2, 2, 2, 2, 2)])
def test_bijection_exhaustive(dims):
    total = math.prod(dims)
    assert total <= 10_000
    seen = set()
    for mi0 in itertools.product(*(range(d) for d in dims)):
        mi = tuple(c + 1 for c in mi0)
        flat = linear_index(mi, dims)
        assert 1 <= flat <= total
        assert multi_index(flat, dims) == mi
        seen.add(flat)
    assert len(seen) == total


def test_row_major_layout_matches_linear_index():
    rng = np.random.default_rng(7)
    dims = (3, 4, 5)
    arr = rng.normal(size=dims)
    flat = arr.reshape(-1)
    for mi0 in itertools.product(*(range(d) for d in dims)):
        mi = tuple(c + 1 for c in mi0)
        assert flat[linear_index(mi, dims) - 1] == arr[mi0]


class TestMode31Product:
    def test_shape_algebra(self):
        g1 = np.zeros((1, 2, 3))
        g2 = np.zeros((3, 4, 1))
        assert mode31_product(g1, g2).shape == (1, 2, 4, 1)

    def test_all_ones(self):
        out = mode31_product(np.ones((1, 2, 2)), np.ones((2, 2, 1)))
        assert np.all(out == 2.0)

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(11)
        g1 = rng.normal(size=(2, 3, 4))
        g2 = rng.normal(size=(4, 2, 3))
        out = mode31_product(g1, g2)
        ref = np.zeros((2, 3, 2, 3))
        for a in range(2):
            for b in range(3):
                for c in range(2):
                    for d in range(3):
                        ref[a, b, c, d] = sum(g1[a, b, k] * g2[k, c, d] for k in range(4))
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-14)

    def test_mismatched_extents(self):
        with pytest.raises(ShapeError):
            mode31_product(np.zeros((1, 2, 3)), np.zeros((2, 4, 1)))
        with pytest.raises(ShapeError):
            mode31_product(np.zeros((2, 3)), np.zeros((3, 4, 1)))


def test_chain_associativity():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 2, 3))
        c = rng.normal(size=(3, 2, 2))

        left = mode31_product(a, b)
        left = left.reshape(2, 6, 3)
        left = mode31_product(left, c).reshape(2, 12, 2)

        right = mode31_product(b, c).reshape(4, 4, 2)
        right = mode31_product(a, right).reshape(2, 12, 2)

        np.testing.assert_allclose(left, right, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(chain_mode31([a, b, c]), left, rtol=1e-12, atol=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symnet.kernels import (
    InitSpec,
    SymmetricKernel,
    SymmetryClass,
    T2BMode,
    build_orbit_map,
    count_parameters,
    expand,
    expand_canonical,
    fold_gradient,
    init_kernel,
    satisfies_symmetry,
)

CLASSES = list(SymmetryClass)
SIZES = [3, 5, 7, 9]


class TestOrbitMap:
    def test_t1_5x5_groups(self):
        om = build_orbit_map(SymmetryClass.T1, 5)
        assert [len(g) for g in om.groups] == [4, 8, 4, 4, 4, 1]

    def test_t2a_5x5_groups(self):
        om = build_orbit_map(SymmetryClass.T2A, 5)
        assert [len(g) for g in om.groups] == [2] * 12 + [1]
        assert om.groups[-1] == ((2, 2, 1),)

    def test_t2b_5x5_groups(self):
        om = build_orbit_map(SymmetryClass.T2B, 5)
        assert len(om.groups) == 12
        for g in om.groups:
            assert len(g) == 2
            (i, j, s), (i2, j2, s2) = g
            assert (s, s2) == (1, -1)
            assert (i, j) < (2, 2) < (i2, j2)
        assert om.index[2, 2] == -1

    def test_r_3x3_singletons(self):
        om = build_orbit_map(SymmetryClass.R, 3)
        assert [len(g) for g in om.groups] == [1] * 9

    @pytest.mark.parametrize("size", [0, 1, 2, 4, 6])
    def test_bad_size(self, size):
        with pytest.raises(ValueError):
            build_orbit_map(SymmetryClass.T1, size)

    @pytest.mark.parametrize("cls", CLASSES)
    @pytest.mark.parametrize("size", range(3, 17, 2))
    def test_group_count_matches_formula(self, cls, size):
        assert build_orbit_map(cls, size).n_groups == count_parameters(cls, size)

    @pytest.mark.parametrize("cls", CLASSES)
    @pytest.mark.parametrize("size", SIZES)
    def test_partition(self, cls, size):
        om = build_orbit_map(cls, size)
        seen = [(i, j) for g in om.groups for i, j, _ in g]
        expected = {(i, j) for i in range(size) for j in range(size)}
        if cls is SymmetryClass.T2B:
            expected.discard((size // 2, size // 2))
        assert len(seen) == len(set(seen)) == len(expected)
        assert set(seen) == expected

    @pytest.mark.parametrize("size", range(3, 21, 2))
    def test_t1_orbits_are_dihedral(self, size):
        # Brute force: apply the 8 dihedral maps about the center and compare.
        om = build_orbit_map(SymmetryClass.T1, size)
        c = size // 2

        def orbit(i, j):
            di, dj = i - c, j - c
            pts = set()
            for a, b in ((di, dj), (dj, di)):
                for sa in (1, -1):
                    for sb in (1, -1):
                        pts.add((c + sa * a, c + sb * b))
            return pts

        for g in om.groups:
            coords = {(i, j) for i, j, _ in g}
            i, j = next(iter(coords))
            assert coords == orbit(i, j)

    def test_t1_distance_collision_kept_apart(self):
        # Offsets (1,7) and (5,5) are equally far from the center but not dihedral images.
        om = build_orbit_map(SymmetryClass.T1, 15)
        assert om.index[7 + 1, 7 + 7] != om.index[7 + 5, 7 + 5]

    @pytest.mark.parametrize("cls", [SymmetryClass.T2A, SymmetryClass.T2B])
    @pytest.mark.parametrize("size", SIZES)
    def test_point_reflection_pairs(self, cls, size):
        for g in build_orbit_map(cls, size).groups:
            if len(g) == 2:
                (i, j, _), (i2, j2, _) = g
                assert (i2, j2) == (size - 1 - i, size - 1 - j)


class TestCounts:
    @pytest.mark.parametrize(
        "cls,size,expected",
        [("T1", 5, 6), ("T2A", 5, 13), ("T2B", 5, 12), ("R", 5, 25), ("T1", 7, 10), ("T1", 3, 3)],
    )
    def test_values(self, cls, size, expected):
        assert count_parameters(SymmetryClass(cls), size) == expected


class TestExpand:
    def test_t1_figure_layout(self):
        k = SymmetricKernel(SymmetryClass.T1, 5, np.arange(1, 7))
        expected = [
            [1, 2, 3, 2, 1],
            [2, 4, 5, 4, 2],
            [3, 5, 6, 5, 3],
            [2, 4, 5, 4, 2],
            [1, 2, 3, 2, 1],
        ]
        np.testing.assert_array_equal(expand(k), expected)

    def test_t2a_figure_layout(self):
        w = expand(SymmetricKernel(SymmetryClass.T2A, 5, np.arange(1, 14)))
        np.testing.assert_array_equal(w[2], [11, 12, 13, 12, 11])
        np.testing.assert_array_equal(w[3], [10, 9, 8, 7, 6])
        np.testing.assert_array_equal(w[4], [5, 4, 3, 2, 1])

    def test_t2b_figure_layout(self):
        w = expand(SymmetricKernel(SymmetryClass.T2B, 5, np.arange(1, 13)))
        np.testing.assert_array_equal(w[0], [1, 2, 3, 4, 5])
        np.testing.assert_array_equal(w[2], [11, 12, 0, -12, -11])
        np.testing.assert_array_equal(w[4], [-5, -4, -3, -2, -1])

    def test_zero(self):
        w = expand(SymmetricKernel(SymmetryClass.T2A, 5, np.zeros(13)))
        np.testing.assert_array_equal(w, np.zeros((5, 5)))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            SymmetricKernel(SymmetryClass.T1, 5, np.zeros(13))
        with pytest.raises(ValueError):
            expand_canonical(build_orbit_map(SymmetryClass.T1, 5), np.zeros(7))

    def test_batched(self):
        om = build_orbit_map(SymmetryClass.T2B, 5)
        c = np.random.default_rng(0).normal(size=(3, 12))
        full = expand_canonical(om, c)
        for m in range(3):
            np.testing.assert_array_equal(full[m], expand(SymmetricKernel(SymmetryClass.T2B, 5, c[m])))


class TestFold:
    ones = np.ones((5, 5))

    def test_t1_ones(self):
        om = build_orbit_map(SymmetryClass.T1, 5)
        np.testing.assert_array_equal(fold_gradient("T1", om, self.ones), [4, 8, 4, 4, 4, 1])

    def test_t2a_ones(self):
        om = build_orbit_map(SymmetryClass.T2A, 5)
        np.testing.assert_array_equal(fold_gradient("T2A", om, self.ones), [2] * 12 + [1])

    def test_t2b_literal_ones(self):
        om = build_orbit_map(SymmetryClass.T2B, 5)
        np.testing.assert_array_equal(fold_gradient("T2B", om, self.ones, T2BMode.LITERAL), [1] * 12)

    def test_t2b_consistent_ones(self):
        om = build_orbit_map(SymmetryClass.T2B, 5)
        np.testing.assert_array_equal(fold_gradient("T2B", om, self.ones, T2BMode.CONSISTENT), [0] * 12)

    def test_r_flattens(self):
        g = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(fold_gradient("R", build_orbit_map(SymmetryClass.R, 3), g), g.ravel())

    def test_t2a_formula(self):
        g = np.random.default_rng(1).normal(size=(5, 5))
        om = build_orbit_map(SymmetryClass.T2A, 5)
        folded = fold_gradient("T2A", om, g)
        for k, members in enumerate(om.groups):
            i, j, _ = members[0]
            expected = g[i, j] + g[4 - i, 4 - j] if len(members) == 2 else g[2, 2]
            assert folded[k] == pytest.approx(expected, abs=1e-15)

    def test_t2b_literal_uses_positive_half_only(self):
        g = np.random.default_rng(2).normal(size=(5, 5))
        om = build_orbit_map(SymmetryClass.T2B, 5)
        folded = fold_gradient("T2B", om, g, T2BMode.LITERAL)
        for k, members in enumerate(om.groups):
            i, j, _ = members[0]
            assert folded[k] == g[i, j]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fold_gradient("T1", build_orbit_map(SymmetryClass.T1, 5), np.ones((3, 3)))

    def test_class_mismatch(self):
        with pytest.raises(ValueError):
            fold_gradient("T2A", build_orbit_map(SymmetryClass.T1, 5), self.ones)


class TestProperties:
    @pytest.mark.parametrize("cls", CLASSES)
    @pytest.mark.parametrize("size", SIZES)
    def test_perturbation_touches_only_group(self, cls, size):
        om = build_orbit_map(cls, size)
        rng = np.random.default_rng(size)
        base = rng.normal(size=om.n_groups)
        w0 = expand_canonical(om, base)
        eps = 0.125
        for k, members in enumerate(om.groups):
            bumped = base.copy()
            bumped[k] += eps
            diff = expand_canonical(om, bumped) - w0
            expected = np.zeros_like(diff)
            for i, j, s in members:
                expected[i, j] = s * eps
            np.testing.assert_allclose(diff, expected, atol=1e-12)

    @pytest.mark.parametrize("cls", CLASSES)
    @pytest.mark.parametrize("size", SIZES)
    def test_consistent_fold_is_adjoint_of_expand(self, cls, size):
        # <expand(c), G> == <c, fold(G)> for the exact (consistent) fold.
        om = build_orbit_map(cls, size)
        rng = np.random.default_rng(7)
        c = rng.normal(size=om.n_groups)
        g = rng.normal(size=(size, size))
        lhs = np.sum(expand_canonical(om, c) * g)
        rhs = c @ fold_gradient(cls, om, g, T2BMode.CONSISTENT)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        cls=st.sampled_from(CLASSES),
        size=st.sampled_from(SIZES),
        mode=st.sampled_from(list(T2BMode)),
        seed=st.integers(0, 2**32 - 1),
        lr=st.floats(1e-4, 10.0),
    )
    def test_update_stays_in_class(self, cls, size, mode, seed, lr):
        om = build_orbit_map(cls, size)
        rng = np.random.default_rng(seed)
        c = rng.normal(size=om.n_groups)
        g = rng.normal(size=(size, size))
        c = c - lr * fold_gradient(cls, om, g, mode)
        assert satisfies_symmetry(cls, expand_canonical(om, c))


class TestInit:
    def test_t2b_draw_count(self):
        k = init_kernel(SymmetryClass.T2B, 5, InitSpec(fan_in=25, seed=3))
        assert k.canonical.shape == (12,)
        # Exactly 12 normal draws consumed: matches the first 12 of a fresh stream.
        ref = np.random.default_rng(3).normal(0.0, 0.2, size=12)
        np.testing.assert_array_equal(k.canonical, ref)

    def test_deterministic(self):
        a = init_kernel(SymmetryClass.T1, 5, InitSpec(fan_in=25, seed=99))
        b = init_kernel(SymmetryClass.T1, 5, InitSpec(fan_in=25, seed=99))
        np.testing.assert_array_equal(a.canonical, b.canonical)

    def test_std_band(self):
        # 10^4 draws from N(0, 0.2^2): sample std has sd ~ 0.2 / sqrt(2 * 10^4).
        draws = np.concatenate(
            [init_kernel(SymmetryClass.R, 5, InitSpec(fan_in=25, seed=s)).canonical for s in range(400)]
        )
        assert draws.size == 10_000
        band = 3 * 0.2 / np.sqrt(2 * draws.size)
        assert abs(draws.std() - 0.2) < band
        assert abs(draws.mean()) < 3 * 0.2 / np.sqrt(draws.size)

    def test_bad_fan_in(self):
        with pytest.raises(ValueError):
            InitSpec(fan_in=0)


def test_parse_class():
    assert SymmetryClass.parse("t2b") is SymmetryClass.T2B
    with pytest.raises(ValueError):
        SymmetryClass.parse("T3")

"""Pruebas de bandas L: proyeccion, inversion L-bandada, colapso y divergencia."""

import numpy as np
import pytest

from dkf.banded_algebra import (
    BandProfile,
    band_project,
    collapse_offband,
    collapse_segment,
    complete_band,
    from_triples,
    information_width,
    kl_divergence,
    lband_invert,
    lband_invert_segment,
    markov_weights,
    random_banded_spd,
    random_spd,
)
from dkf.errors import BandError, CollapseError, NotPositiveDefiniteError, SingularWindowError


def banded_pair(n, L, seed):
    """(S, Z) con Z = S^{-1} exactamente L-bandada."""

    Z = random_banded_spd(n, L, np.random.default_rng(seed))
    return np.linalg.inv(Z), Z


class TestBandProfile:

    def test_storage_and_access(self):
        A = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 2.0], [0.5, 2.0, 5.0]])
        band = band_project(A, 1)
        assert band.get(0, 1) == 1.0
        assert band.get(2, 1) == 2.0
        np.testing.assert_array_equal(band.diagonal(), [4.0, 3.0, 5.0])
        np.testing.assert_array_equal(band.diagonal(1), [1.0, 2.0])
        np.testing.assert_array_equal(band.window(1, 2), A[1:3, 1:3])
        expected = A.copy()
        expected[0, 2] = expected[2, 0] = 0.0
        np.testing.assert_array_equal(band.to_dense(), expected)

    def test_out_of_band_access(self):
        band = band_project(np.eye(4), 1)
        with pytest.raises(BandError, match="fuera de la banda"):
            band.get(0, 3)
        with pytest.raises(BandError, match="Ventana de tamano"):
            band.window(0, 3)

    def test_invalid_projection(self):
        with pytest.raises(BandError, match="0 <= L < n"):
            band_project(np.eye(3), 3)
        asym = np.eye(3)
        asym[0, 1] = 1.0
        with pytest.raises(BandError, match="no es simetrica"):
            band_project(asym, 1)

    def test_triples_and_csv(self, tmp_path):
        S, _ = banded_pair(6, 2, 0)
        band = band_project(S, 2)
        path = band.to_csv(tmp_path / "band.csv")
        loaded = BandProfile.from_csv(path)
        assert (loaded.n, loaded.L) == (6, 2)
        np.testing.assert_allclose(loaded.data, band.data, rtol=1e-15)
        with pytest.raises(BandError, match="fuera de la banda"):
            from_triples(4, 1, [(0, 2, 1.0)])

    def test_data_is_read_only(self):
        band = band_project(np.eye(3), 1)
        with pytest.raises(ValueError):
            band.data[0, 0] = 5.0


class TestLbandInvert:

    @pytest.mark.parametrize("L", [1, 2, 5])
    def test_recovers_banded_inverse(self, L):
        for seed in range(20):
            n = 8 + 2 * seed
            S, Z = banded_pair(n, L, seed)
            Z_hat = lband_invert(band_project(S, L)).to_dense()
            error = np.linalg.norm(Z_hat - Z, "fro") / np.linalg.norm(Z, "fro")
            assert error < 1e-9

    def test_diagonal_case(self):
        band = band_project(np.diag([2.0, 4.0, 5.0]), 0)
        np.testing.assert_allclose(lband_invert(band).to_dense(), np.diag([0.5, 0.25, 0.2]))

    def test_result_is_labelled_information(self):
        S, _ = banded_pair(6, 1, 3)
        assert lband_invert(band_project(S, 1)).kind == "information"

    def test_full_segment_matches_global(self):
        S, _ = banded_pair(12, 2, 4)
        segment = lband_invert_segment(S, 0, 12, 2)
        global_ = lband_invert(band_project(S, 2)).to_dense()
        np.testing.assert_allclose(band_project(0.5 * (segment + segment.T), 2).to_dense(), global_, atol=1e-12)

    def test_sub_segment_is_exact_in_its_interior(self):
        n, L = 16, 2
        S, Z = banded_pair(n, L, 5)
        start, stop = 4, 12
        local = lband_invert_segment(S[start:stop, start:stop], start, n, L)
        # entradas cuyas ventanas caen dentro del tramo
        for a in range(start + L, stop - L):
            for b in range(max(a - L, start + L), min(a + L, stop - L - 1) + 1):
                assert local[a - start, b - start] == pytest.approx(Z[a, b], rel=1e-9, abs=1e-12)

    def test_singular_window(self):
        S = np.eye(4)
        S[1, 2] = S[2, 1] = 2.0
        with pytest.raises(SingularWindowError) as excinfo:
            lband_invert(band_project(S, 1))
        assert excinfo.value.index == 1
        assert excinfo.value.size == 2


class TestCollapse:

    @pytest.mark.parametrize("L", [1, 2, 5])
    def test_completion_recovers_off_band(self, L):
        for seed in range(10):
            S, _ = banded_pair(30, L, 100 + seed)
            completion = complete_band(band_project(S, L))
            np.testing.assert_allclose(completion, S, rtol=0, atol=1e-8)

    def test_single_entry(self):
        S, _ = banded_pair(10, 1, 7)
        band = band_project(S, 1)
        assert collapse_offband(band, 2, 7) == pytest.approx(S[2, 7], abs=1e-10)
        assert collapse_offband(band, 7, 2) == pytest.approx(S[2, 7], abs=1e-10)
        # L = 1: s_13 = s_12 s_23 / s_22
        assert collapse_offband(band, 0, 2) == pytest.approx(S[0, 1] * S[1, 2] / S[1, 1], rel=1e-12)

    def test_entry_inside_band(self):
        band = band_project(np.eye(5), 2)
        with pytest.raises(BandError, match="dentro de la banda"):
            collapse_offband(band, 1, 3)

    def test_max_offset_limits_fill(self):
        S, _ = banded_pair(10, 1, 8)
        partial = band_project(S, 1).to_dense()
        collapse_segment(partial, 1, max_offset=2)
        np.testing.assert_allclose(np.diagonal(partial, 2), np.diagonal(S, 2), atol=1e-10)
        assert np.all(np.diagonal(partial, 3) == 0.0)

    def test_diagonal_band_collapses_to_zero(self):
        S = np.diag([1.0, 2.0, 3.0, 4.0])
        S[0, 3] = S[3, 0] = 7.0
        collapse_segment(S, 0)
        np.testing.assert_array_equal(S, np.diag([1.0, 2.0, 3.0, 4.0]))

    def test_non_spd_pivot(self):
        seg = np.eye(4)
        seg[1, 1] = seg[2, 2] = 1.0
        seg[1, 2] = seg[2, 1] = 2.0
        with pytest.raises(CollapseError):
            collapse_segment(seg.copy(), 2)
        W, failures = markov_weights(seg.copy(), 2, strict=False)
        assert failures > 0
        assert W.shape == (4, 2)


class TestInformationWidth:

    def test_banded_input(self):
        S, Z = banded_pair(8, 2, 9)
        assert information_width(Z) <= 2
        assert information_width(np.diag(np.diag(Z))) == 0

    def test_dense_observation(self, rng):
        h = rng.standard_normal((3, 10))
        assert information_width(h.T @ h) == 9

    def test_local_indices_use_global_offsets(self):
        # indices globales 4, 5, 9
        assert information_width(np.ones((3, 3)), index=np.array([4, 5, 9])) == 5
        assert information_width(np.eye(3), index=np.array([4, 5, 9])) == 0

    def test_zero_matrix(self):
        assert information_width(np.zeros((4, 4))) == 0


class TestDivergence:

    def test_monotone_in_L(self):
        rng = np.random.default_rng(12)
        for _ in range(3):
            S = random_spd(12, rng) + np.eye(12)
            Z = np.linalg.inv(S)
            kl = []
            for L in range(1, 12):
                Z_L = lband_invert(band_project(S, L)).to_dense()
                kl.append(kl_divergence(Z, Z_L).gaussian_kl)
            assert all(later <= earlier + 1e-10 for earlier, later in zip(kl, kl[1:]))
            assert kl[-1] == pytest.approx(0.0, abs=1e-9)

    def test_value_below_bound(self):
        S, _ = banded_pair(10, 3, 13)
        Z = np.linalg.inv(S + 0.1 * np.eye(10))
        Z_1 = lband_invert(band_project(np.linalg.inv(Z), 1)).to_dense()
        report = kl_divergence(Z, Z_1)
        assert 0.0 < report.value <= report.bound
        assert report.gaussian_kl > 0.0

    def test_identical_matrices(self):
        _, Z = banded_pair(6, 1, 14)
        report = kl_divergence(Z, Z)
        assert report.value == pytest.approx(0.0, abs=1e-20)
        assert report.gaussian_kl == pytest.approx(0.0, abs=1e-12)

    def test_rejects_non_spd(self):
        with pytest.raises(NotPositiveDefiniteError, match="definida positiva"):
            kl_divergence(np.eye(3), -np.eye(3))


class TestRandomMatrices:

    def test_banded_spd(self, rng):
        Z = random_banded_spd(15, 3, rng)
        offsets = np.abs(np.subtract.outer(np.arange(15), np.arange(15)))
        assert np.all(Z[offsets > 3] == 0.0)
        assert np.linalg.eigvalsh(Z).min() > 0.0

    def test_spd(self, rng):
        X = random_spd(8, rng)
        np.testing.assert_allclose(X, X.T, atol=1e-12)
        assert np.linalg.eigvalsh(X).min() > 0.0


@pytest.mark.slow
def test_inversion_round_trip_at_scale():
    rng = np.random.default_rng(2024)
    for trial in range(500):
        n = int(rng.integers(12, 51))
        L = int(rng.choice([1, 2, 5]))
        Z = random_banded_spd(n, L, rng)
        S = np.linalg.inv(Z)
        band = band_project(S, L)
        Z_hat = lband_invert(band).to_dense()
        assert np.linalg.norm(Z_hat - Z, "fro") / np.linalg.norm(Z, "fro") < 1e-9, trial
        np.testing.assert_allclose(complete_band(band), S, rtol=0, atol=1e-8)

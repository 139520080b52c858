"""Pruebas de JOR, DICI-OR centralizado y distribuido, contraccion y cota de error."""

import numpy as np
import pytest
from scipy import sparse

from dkf.banded_algebra import random_banded_spd, random_spd
from dkf.decomposition import decompose, default_comm_graph
from dkf.dici import (
    BandLayout,
    JorConfig,
    check_jor,
    contiguous_segments,
    contraction_trial,
    dici_or_band_inverse,
    dici_or_centralized,
    dici_solve_vector,
    error_bound_experiment,
    jor_inverse,
    optimal_gamma,
    spectral_radius,
)
from dkf.errors import BandError, ConfigError, DiciConvergenceError, JorDivergenceError, TopologyError
from dkf.model_core import block_observation_model
from dkf.simulator import CommNetwork


def unit_diagonal_spd(n, rng):
    X = random_spd(n, rng) + 0.5 * np.eye(n)
    d = np.sqrt(np.diag(X))
    return X / np.outer(d, d)


def scaled_spd(n, rng):
    """SPD con diagonal muy desigual: D X D con D = exp(Uniform(-1, 1))."""

    X = random_spd(n, rng) + 0.5 * np.eye(n)
    d = np.exp(rng.uniform(-1.0, 1.0, n))
    return X * np.outer(d, d)


def band_of(matrix, L):
    n = matrix.shape[0]
    offsets = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return np.where(offsets <= L, matrix, 0.0)


def chain_blocks(n, block=5):
    F = sparse.diags([0.1 * np.ones(n - 1), 0.5 * np.ones(n), 0.1 * np.ones(n - 1)], [-1, 0, 1])
    blocks = [list(range(start, min(start + block, n))) for start in range(0, n, block)]
    return block_observation_model(F, blocks)


class TestJorConfig:

    @pytest.mark.parametrize(
        "kwargs, match",
        [
            ({"gamma": 0.0}, "gamma debe ser > 0"),
            ({"tol": 0.0}, "tol debe ser > 0"),
            ({"patience": 0}, "patience >= 1"),
            ({"budget": 0}, "presupuesto"),
        ],
    )
    def test_invalid(self, kwargs, match):
        with pytest.raises(ConfigError, match=match):
            JorConfig(**kwargs)

    def test_with_budget(self):
        cfg = JorConfig(gamma=0.3, max_iter=50).with_budget(10)
        assert (cfg.gamma, cfg.max_iter, cfg.budget) == (0.3, 50, 10)


class TestJor:

    def test_spectral_quantities(self):
        Z = np.array([[1.0, 0.5], [0.5, 1.0]])
        assert optimal_gamma(Z) == pytest.approx(1.0)
        assert spectral_radius(Z, 1.0) == pytest.approx(0.5)
        assert check_jor(Z, 0.5) == pytest.approx(0.75)

    def test_divergent_gamma(self):
        Z = np.array([[1.0, 0.5], [0.5, 1.0]])
        with pytest.raises(JorDivergenceError) as excinfo:
            check_jor(Z, 2.0)
        assert excinfo.value.spectral_radius == pytest.approx(2.0)
        assert excinfo.value.gamma_hint == pytest.approx(2.0 / 1.5)

    def test_converges_to_inverse(self, rng):
        Z = unit_diagonal_spd(10, rng)
        cfg = JorConfig(gamma=optimal_gamma(Z), max_iter=100000, tol=1e-10)
        result = jor_inverse(Z, cfg)
        assert result.converged
        np.testing.assert_allclose(result.S, np.linalg.inv(Z), atol=1e-7)

    def test_budget_counts_initial_iterate(self, rng):
        Z = unit_diagonal_spd(6, rng)
        first = jor_inverse(Z, JorConfig(budget=1))
        assert first.iterations == 0
        np.testing.assert_allclose(first.S, np.eye(6), rtol=1e-14)
        fifth = jor_inverse(Z, JorConfig(budget=5, tol=1e-300))
        assert fifth.iterations == 4
        assert fifth.converged

    def test_patience(self, rng):
        Z = unit_diagonal_spd(8, rng)
        gamma = optimal_gamma(Z)
        base = jor_inverse(Z, JorConfig(gamma=gamma, max_iter=10000, tol=1e-6))
        patient = jor_inverse(Z, JorConfig(gamma=gamma, max_iter=10000, tol=1e-6, patience=3))
        assert patient.iterations == base.iterations + 2

    def test_strict_exhaustion(self, rng):
        Z = unit_diagonal_spd(8, rng)
        with pytest.raises(DiciConvergenceError, match="Sin convergencia tras 2"):
            jor_inverse(Z, JorConfig(max_iter=2, tol=1e-12))
        loose = jor_inverse(Z, JorConfig(max_iter=2, tol=1e-12, strict=False))
        assert not loose.converged

    def test_error_bound_on_unit_diagonal(self):
        rng = np.random.default_rng(49)
        for _ in range(20):
            Z = unit_diagonal_spd(50, rng)
            result = jor_inverse(Z, JorConfig(gamma=0.1, budget=60), reference=np.linalg.inv(Z))
            rho = result.spectral_radius
            for t, error in enumerate(result.errors):
                assert error <= rho ** t * result.errors[0] * (1 + 1e-10)
            np.testing.assert_allclose(result.scaled_errors, result.errors, rtol=1e-9)

    def test_error_bound_in_jacobi_scaled_norm(self):
        rng = np.random.default_rng(57)
        for _ in range(20):
            Z = scaled_spd(30, rng)
            assert np.ptp(np.diag(Z)) > 0.5
            result = jor_inverse(Z, JorConfig(gamma=optimal_gamma(Z), budget=60), reference=np.linalg.inv(Z))
            rho = result.spectral_radius
            for t, error in enumerate(result.scaled_errors):
                assert error <= rho ** t * result.scaled_errors[0] * (1 + 1e-10) + 1e-12


class TestCentralizedDici:

    def test_full_band_matches_jor(self, rng):
        Z = random_banded_spd(8, 7, rng)
        cfg = JorConfig(gamma=0.2, budget=30)
        jor = jor_inverse(Z, cfg)
        dici = dici_or_centralized(Z, 7, cfg)
        np.testing.assert_allclose(dici.completion, jor.S, atol=1e-12)

    def test_fixed_point_is_exact_band(self, rng):
        Z = random_banded_spd(20, 2, rng)
        cfg = JorConfig(gamma=0.3, max_iter=20000, tol=1e-13, strict=False)
        result = dici_or_centralized(Z, 2, cfg)
        S = np.linalg.inv(Z)
        np.testing.assert_allclose(result.band.to_dense(), band_of(S, 2), atol=1e-8)
        np.testing.assert_allclose(result.completion, S, atol=1e-7)

    def test_rejects_unbanded(self, rng):
        Z = random_banded_spd(8, 3, rng)
        with pytest.raises(BandError, match="1-bandada"):
            dici_or_centralized(Z, 1, JorConfig())


class TestBandLayout:

    def test_ownership(self, five_state_model):
        layout = BandLayout(decompose(five_state_model, 1), 1)
        np.testing.assert_array_equal(layout.pair_owner[0], [0, 0, 0, 1, 2])
        np.testing.assert_array_equal(layout.pair_owner[1, :4], [0, 0, 1, 2])
        np.testing.assert_array_equal(layout.owned_states[1], [3])
        np.testing.assert_array_equal(layout.halo[2], [2, 3, 4])
        np.testing.assert_array_equal(layout.halo[0], [0, 1, 2, 3])
        assert layout.halo_segments[1] == ((0, 5),)

    def test_uncovered_pair(self, five_state_model):
        subs = decompose(five_state_model, 2, cover_windows=False)
        with pytest.raises(TopologyError, match="no esta en ningun conjunto"):
            BandLayout(subs, 2)

    def test_contiguous_segments(self):
        assert contiguous_segments(np.array([0, 1, 2, 5, 6, 9])) == ((0, 3), (5, 7), (9, 10))
        assert contiguous_segments(np.array([], dtype=int)) == ()

    def test_assemble_round_trip(self, medium_random_model, rng):
        layout = BandLayout(decompose(medium_random_model, 2), 2)
        Z = random_banded_spd(24, 2, rng)
        owned = {sid: layout.owned_from_local(sid, block) for sid, block in layout.local_blocks(Z).items()}
        np.testing.assert_array_equal(layout.assemble_band(owned).to_dense(), Z)


class TestDistributedDici:

    @pytest.fixture
    def setup(self, medium_random_model):
        subs = decompose(medium_random_model, 2)
        Z = random_banded_spd(24, 2, np.random.default_rng(31))
        return subs, BandLayout(subs, 2), Z

    def test_matches_centralized(self, setup):
        _, layout, Z = setup
        cfg = JorConfig(gamma=0.2, budget=40, strict=False)
        central = dici_or_centralized(Z, 2, cfg)
        distributed = dici_or_band_inverse(Z, layout, cfg, initial="jacobi")
        np.testing.assert_allclose(distributed.band().to_dense(), central.band.to_dense(), atol=1e-10)
        assert distributed.iterations == 39

    def test_network_copies_are_identical(self, setup):
        subs, layout, Z = setup
        cfg = JorConfig(gamma=0.2, budget=15, strict=False)
        plain = dici_or_band_inverse(Z, layout, cfg)
        network = CommNetwork(default_comm_graph(subs))
        routed = dici_or_band_inverse(Z, layout, cfg, network=network)
        for sid in layout.sensors:
            np.testing.assert_array_equal(routed.owned[sid], plain.owned[sid])
        report = network.traffic_report()
        assert report.messages["dici"] > 0
        assert report.max_payload < layout.n

    def test_converges_to_exact_band(self, setup):
        _, layout, Z = setup
        cfg = JorConfig(gamma=0.3, max_iter=20000, tol=1e-13, strict=False)
        result = dici_or_band_inverse(Z, layout, cfg)
        S = np.linalg.inv(Z)
        np.testing.assert_allclose(result.band().to_dense(), band_of(S, 2), atol=1e-8)
        assert result.trace() == pytest.approx(np.trace(S), rel=1e-8)
        for sid in layout.sensors:
            C = layout.cutsets[sid]
            local = result.local_covariance(sid)
            near = np.abs(np.subtract.outer(C, C)) <= 2
            np.testing.assert_allclose(local[near], S[np.ix_(C, C)][near], atol=1e-8)

    def test_budget_one_is_decoupled(self, setup):
        _, layout, Z = setup
        result = dici_or_band_inverse(Z, layout, JorConfig(budget=1), initial="jacobi")
        assert result.iterations == 0
        np.testing.assert_allclose(result.band().to_dense(), np.diag(1.0 / np.diag(Z)))

    def test_unknown_initial(self, setup):
        _, layout, Z = setup
        with pytest.raises(ConfigError, match="Condicion inicial"):
            dici_or_band_inverse(Z, layout, JorConfig(), initial="otra")

    def test_vector_solve(self, setup, rng):
        _, layout, Z = setup
        z = rng.standard_normal((24, 3))
        cfg = JorConfig(gamma=0.3, max_iter=20000, tol=1e-13, strict=False)
        result = dici_solve_vector(Z, z, layout, cfg)
        np.testing.assert_allclose(result.assemble(), np.linalg.solve(Z, z), atol=1e-8)
        for sid in layout.sensors:
            np.testing.assert_allclose(
                result.cutset_values(sid), np.linalg.solve(Z, z)[layout.cutsets[sid]], atol=1e-8
            )


class TestContractionAndBound:

    def test_contraction_samples(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            sample = contraction_trial(12, rng)
            assert np.isfinite(sample.alpha) and sample.alpha > 0.0
            assert 1 <= sample.L <= 6
            assert sample.resamples >= 0

    def test_contraction_requires_two_states(self, rng):
        with pytest.raises(ConfigError):
            contraction_trial(1, rng)

    def test_error_bound_shapes(self):
        stats = error_bound_experiment(16, 2, 3, JorConfig(gamma=0.1), seed=4, iterations=12)
        rows = stats.rows()
        assert len(rows) == 13
        assert rows[0][0] == 0
        # ambos parten de M^{-1}
        assert abs(rows[0][1]) <= 1e-12 and abs(rows[0][2]) <= 1e-12
        assert np.all(np.isfinite(stats.final_dici_error))

    def test_full_band_control_has_no_gap(self):
        stats = error_bound_experiment(8, 7, 3, JorConfig(gamma=0.1), seed=5, iterations=20)
        assert np.max(np.abs(stats.max_diff)) <= 1e-10
        assert np.max(np.abs(stats.min_diff)) <= 1e-10


@pytest.mark.slow
class TestAtScale:

    def test_jor_bound_hundred_systems(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            Z = scaled_spd(50, rng)
            result = jor_inverse(Z, JorConfig(gamma=optimal_gamma(Z), budget=100), reference=np.linalg.inv(Z))
            rho = result.spectral_radius
            for t, error in enumerate(result.scaled_errors):
                assert error <= rho ** t * result.scaled_errors[0] * (1 + 1e-10) + 1e-12

    def test_contraction_factor_below_one(self):
        rng = np.random.default_rng(10_000)
        alphas = np.array([contraction_trial(100, rng).alpha for _ in range(10_000)])
        assert np.all((alphas > 0.0) & (alphas < 1.0))

    def test_dici_error_never_exceeds_jor(self):
        stats = error_bound_experiment(50, 2, 100, JorConfig(gamma=0.1), seed=2024, iterations=100)
        assert stats.min_diff.min() >= -1e-10

    def test_per_sensor_cost_independent_of_n(self):
        flops, sent, payloads = [], [], []
        for n in (50, 100, 200):
            subs = decompose(chain_blocks(n), 2)
            layout = BandLayout(subs, 2)
            network = CommNetwork(default_comm_graph(subs))
            Z = random_banded_spd(n, 2, np.random.default_rng(n))
            dici_or_band_inverse(Z, layout, JorConfig(gamma=0.1, budget=20, strict=False), network=network)
            report = network.traffic_report()
            flops.append(report.sensor_max("flops"))
            sent.append(report.sensor_max("sent_messages"))
            payloads.append(report.max_payload)
            assert report.max_payload < n
        assert max(flops) <= 1.05 * min(flops)
        assert max(sent) <= 1.05 * min(sent)
        assert len(set(payloads)) == 1

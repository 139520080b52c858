"""Pruebas del consenso promedio y de la fusion de variables de observacion."""

import networkx as nx
import numpy as np
import pytest

from dkf.consensus import (
    consensus_sum,
    export_consensus_log,
    fuse_observation_variables,
    second_eigenvalue,
)
from dkf.decomposition import build_fusion_topology, decompose, metropolis_weights
from dkf.errors import ConsensusError
from dkf.simulator import CommNetwork
from utils.export import read_csv

TOL = 1e-13
MAX_ITER = 5000


def path_weights(m):
    graph = nx.path_graph(m)
    return graph, metropolis_weights(graph, range(m))


def local_observations(model, subsystems, y):
    """i^(l) e I^(l) de cada sensor a partir de una observacion global."""

    i_locals, I_locals = {}, {}
    for sub in subsystems:
        rows = model._rows(sub.sensor_id)
        i_locals[sub.sensor_id] = sub.observation_vector(y[rows])
        I_locals[sub.sensor_id] = sub.observation_information()
    return i_locals, I_locals


class TestConsensusSum:

    def test_equal_values_need_no_iterations(self):
        _, W = path_weights(4)
        values = np.full((4, 3), 2.5)
        result, run = consensus_sum(values, range(4), W, TOL, MAX_ITER)
        assert run.iterations == 0
        assert run.converged
        np.testing.assert_allclose(result, 10.0)

    def test_two_sensors_converge_in_one_iteration(self):
        _, W = path_weights(2)
        result, run = consensus_sum(np.array([[1.0], [3.0]]), (0, 1), W, TOL, MAX_ITER)
        assert run.iterations == 1
        np.testing.assert_allclose(result, [[4.0], [4.0]])

    def test_recovers_sum(self, rng):
        graph = nx.cycle_graph(6)
        W = metropolis_weights(graph, range(6))
        values = rng.standard_normal((6, 5))
        result, run = consensus_sum(values, range(6), W, TOL, MAX_ITER)
        for row in result:
            np.testing.assert_allclose(row, values.sum(axis=0), atol=1e-10)
        assert 0.0 < run.rho < 1.0
        assert run.deviation < 1e-10

    def test_single_member(self):
        values = np.array([[1.0, 2.0]])
        result, run = consensus_sum(values, (3,), np.ones((1, 1)), TOL, MAX_ITER)
        np.testing.assert_array_equal(result, values)
        assert run.iterations == 0
        assert run.messages == 0

    def test_strict_failure(self):
        _, W = path_weights(5)
        values = np.arange(5.0).reshape(5, 1)
        with pytest.raises(ConsensusError, match="Consenso sin converger") as excinfo:
            consensus_sum(values, range(5), W, TOL, 3)
        assert excinfo.value.iterations == 3

    def test_zero_tolerance_runs_exactly_max_iter(self):
        _, W = path_weights(5)
        values = np.arange(5.0).reshape(5, 1)
        _, run = consensus_sum(values, range(5), W, 0.0, 7, strict=False)
        assert run.iterations == 7
        assert not run.converged

    def test_messages_over_network(self):
        graph, W = path_weights(4)
        network = CommNetwork(graph)
        values = np.arange(8.0).reshape(4, 2)
        plain, _ = consensus_sum(values, range(4), W, TOL, MAX_ITER)
        routed, run = consensus_sum(values, range(4), W, TOL, MAX_ITER, network=network)
        np.testing.assert_allclose(routed, plain, atol=1e-10)
        # 3 aristas no dirigidas = 6 mensajes por ronda; la ronda final de comprobacion tambien cuenta
        assert run.messages == (run.iterations + 1) * 6
        assert network.traffic_report().messages["fusion"] == run.messages

    def test_second_eigenvalue(self):
        assert second_eigenvalue(np.ones((1, 1))) == 0.0
        _, W = path_weights(2)
        assert second_eigenvalue(W) == pytest.approx(0.0, abs=1e-15)


class TestObservationFusion:

    def test_vectors_and_matrices_match_global(self, five_state_model, rng):
        model = five_state_model
        subs = decompose(model, 1)
        topology = build_fusion_topology(model, subs)
        y = rng.standard_normal(model.p)
        i_locals, I_locals = local_observations(model, subs, y)
        fused = fuse_observation_variables(subs, topology, i_locals, I_locals, TOL, MAX_ITER)

        i_global = model.H.T @ np.linalg.solve(model.R, y)
        I_global = model.H.T @ np.linalg.solve(model.R, model.H)
        for sub in subs:
            cut = sub.cutset
            np.testing.assert_allclose(fused.vectors[sub.sensor_id], i_global[cut], atol=1e-10)
            np.testing.assert_allclose(fused.matrices[sub.sensor_id], I_global[np.ix_(cut, cut)], atol=1e-10)

    def test_banded_matrix_fusion(self, medium_random_model, rng):
        model = medium_random_model
        subs = decompose(model, 2)
        topology = build_fusion_topology(model, subs)
        i_locals, I_locals = local_observations(model, subs, rng.standard_normal(model.p))
        fused = fuse_observation_variables(subs, topology, i_locals, I_locals, TOL, MAX_ITER, L=2)
        I_global = model.H.T @ np.linalg.solve(model.R, model.H)
        for sub in subs:
            cut = sub.cutset
            offsets = np.abs(np.subtract.outer(cut, cut))
            expected = np.where(offsets <= 2, I_global[np.ix_(cut, cut)], 0.0)
            np.testing.assert_allclose(fused.matrices[sub.sensor_id], expected, atol=1e-10)

    def test_non_member_holders_receive_values(self, five_state_model, rng):
        model = five_state_model
        subs = decompose(model, 2)
        topology = build_fusion_topology(model, subs)
        network = CommNetwork(topology.comm_graph)
        y = rng.standard_normal(model.p)
        i_locals, _ = local_observations(model, subs, y)
        fused = fuse_observation_variables(subs, topology, i_locals, None, TOL, MAX_ITER, network=network)
        assert fused.matrices is None
        i_global = model.H.T @ np.linalg.solve(model.R, y)
        # el sensor 2 guarda x_2 sin observarlo
        assert 2 in subs[2].cutset
        assert 2 not in topology.members(2)
        np.testing.assert_allclose(fused.vectors[2], i_global[subs[2].cutset], atol=1e-10)
        assert network.traffic_report().messages["fusion"] > fused.messages

    def test_export_log(self, tmp_path, five_state_model, rng):
        subs = decompose(five_state_model, 1)
        topology = build_fusion_topology(five_state_model, subs)
        i_locals, I_locals = local_observations(five_state_model, subs, rng.standard_normal(3))
        fused = fuse_observation_variables(subs, topology, i_locals, I_locals, TOL, MAX_ITER)
        path = export_consensus_log(fused.runs, tmp_path / "consensus.csv", {"step": 0})
        metadata, header, rows = read_csv(path)
        assert metadata["step"] == "0"
        assert header == ["subgraph", "label", "iterations", "residual", "deviation", "rho", "messages"]
        assert len(rows) == len(fused.runs)

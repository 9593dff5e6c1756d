import math
import unittest

import numpy as np

from sums.core import graphs
from sums.core.graphs import ProcessGraph, RateGraph
from sums.core.model import ProcessSpec, StudyDesign
from sums.exceptions import GraphStructureError, ValidationError

from .factories import binary_design


class TestProcessGraph(unittest.TestCase):

    def test_edges_are_normalised(self):
        graph = ProcessGraph(3, frozenset({(2, 0)}))
        self.assertEqual(graph.edges, frozenset({(0, 2)}))
        self.assertTrue(graph.has_edge(2, 0))
        self.assertEqual(graph.n_possible, 3)

    def test_edge_list_is_one_based(self):
        graph = ProcessGraph.from_edge_list(3, [[1, 3], [2, 3]])
        self.assertTrue(graph.has_edge(0, 2))
        self.assertEqual(graph.to_edge_list(), [[1, 3], [2, 3]])

    def test_invalid_edges(self):
        with self.assertRaises(ValidationError):
            ProcessGraph(3, frozenset({(1, 1)}))
        with self.assertRaises(ValidationError):
            ProcessGraph(2, frozenset({(0, 2)}))

    def test_toggle(self):
        graph = ProcessGraph.empty(3).toggle(0, 1)
        self.assertEqual(graph.n_edges, 1)
        self.assertEqual(graph.toggle(1, 0).n_edges, 0)

    def test_all_graphs(self):
        self.assertEqual(len(list(graphs.all_process_graphs(3))), 8)
        self.assertEqual(len(set(graphs.all_process_graphs(4))), 64)


class TestRateGraph(unittest.TestCase):

    def test_from_adjacency(self):
        adjacency = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
        graph = RateGraph.from_adjacency(adjacency)
        self.assertEqual(graph.n_edges, 2)
        self.assertEqual(graph.neighbours(1), [0, 2])
        np.testing.assert_array_equal(graph.adjacency(), adjacency)
        self.assertFalse(graph.is_complete())

    def test_rejects_asymmetric(self):
        with self.assertRaises(ValidationError):
            RateGraph.from_adjacency(np.array([[0, 1], [0, 0]], dtype=bool))

    def test_equality(self):
        a = RateGraph(2, [0b10, 0b01])
        b = RateGraph.from_adjacency(np.array([[0, 1], [1, 0]], dtype=bool))
        self.assertEqual(a, b)
        self.assertEqual(hash(a), hash(b))
        self.assertTrue(a.is_complete())


class TestExpansion(unittest.TestCase):

    def test_empty_graph_is_block_cliques(self):
        design = binary_design(2)
        graph = graphs.expand(ProcessGraph.empty(2), design)
        self.assertEqual(graph.n_edges, 2)
        self.assertTrue(graph.has_edge(0, 1))
        self.assertTrue(graph.has_edge(2, 3))
        self.assertFalse(graph.has_edge(1, 2))

    def test_full_graph_is_complete(self):
        design = binary_design(3)
        self.assertTrue(graphs.expand(ProcessGraph.full(3), design).is_complete())

    def test_mixed_state_counts(self):
        design = StudyDesign([ProcessSpec("A", 3), ProcessSpec("B", 2)])
        graph = graphs.expand(ProcessGraph.from_edge_list(2, [[1, 2]]), design)
        self.assertEqual(graph.n_nodes, 8)
        self.assertTrue(graph.is_complete())
        empty = graphs.expand(ProcessGraph.empty(2), design)
        self.assertEqual(empty.n_edges, 15 + 1)

    def test_contract_inverts_expand(self):
        design = StudyDesign(
            [ProcessSpec("A", 3), ProcessSpec("B", 2), ProcessSpec("C", 2)]
        )
        for g0 in graphs.all_process_graphs(3):
            self.assertEqual(graphs.contract(graphs.expand(g0, design), design), g0)

    def test_contract_rejects_partial_blocks(self):
        design = binary_design(2)
        adjacency = graphs.expand(ProcessGraph.empty(2), design).adjacency()
        adjacency[0, 2] = adjacency[2, 0] = True
        with self.assertRaises(GraphStructureError):
            graphs.contract(RateGraph.from_adjacency(adjacency), design)
        adjacency = np.zeros((4, 4), dtype=bool)
        with self.assertRaisesRegex(GraphStructureError, "clique"):
            graphs.contract(RateGraph.from_adjacency(adjacency), design)

    def test_size_mismatch(self):
        with self.assertRaises(ValidationError):
            graphs.expand(ProcessGraph.empty(3), binary_design(2))


class TestEdgePrior(unittest.TestCase):

    def test_log_prior(self):
        g0 = ProcessGraph.from_edge_list(3, [[1, 2]])
        expected = math.log(0.1) + 2 * math.log(0.9)
        self.assertAlmostEqual(graphs.log_prior(g0, 0.1), expected, places=12)

    def test_prior_sums_to_one(self):
        total = sum(
            math.exp(graphs.log_prior(g0, 0.3)) for g0 in graphs.all_process_graphs(4)
        )
        self.assertAlmostEqual(total, 1.0, places=12)

    def test_ratio_matches_difference(self):
        g0 = ProcessGraph.from_edge_list(3, [[1, 2]])
        for edge in g0.candidate_edges():
            toggled = graphs.log_prior(g0.toggle(*edge), 0.2)
            expected = toggled - graphs.log_prior(g0, 0.2)
            ratio = graphs.log_prior_ratio(g0, edge, 0.2)
            self.assertAlmostEqual(ratio, expected, places=12)

    def test_invalid_eta(self):
        with self.assertRaises(ValidationError):
            graphs.log_prior(ProcessGraph.empty(2), 0.0)

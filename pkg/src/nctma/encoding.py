"""Typed graph view of a network for the message-passing model.

Node order is servers, flows, path-ordering nodes (flow by flow, in hop
order), then cut nodes (flow by flow, boundary by boundary). Every node
carries ``FEATURE_WIDTH`` inputs: a one-hot node type followed by two value
slots.

=============  ======================  ======================
node type      slot 0                  slot 1
=============  ======================  ======================
server         service rate            service latency
flow           arrival rate            arrival burst
path order     hop number (1-based)    0
cut            0                       0
=============  ======================  ======================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Network

SERVER, FLOW, PATH_ORDER, CUT = range(4)
NODE_TYPES = ("server", "flow", "pathOrder", "cut")
NUM_TYPES = 4
FEATURE_WIDTH = NUM_TYPES + 2

#: feature name -> (node type, column in the feature matrix)
FEATURES = {
    "serverRate": (SERVER, NUM_TYPES),
    "serverLatency": (SERVER, NUM_TYPES + 1),
    "flowRate": (FLOW, NUM_TYPES),
    "flowBurst": (FLOW, NUM_TYPES + 1),
    "pathOrder": (PATH_ORDER, NUM_TYPES),
}


@dataclass
class EncodedGraph:
    node_type: np.ndarray          # (N,) int
    features: np.ndarray           # (N, FEATURE_WIDTH) float64
    edges: np.ndarray              # (E, 2) int, undirected, each pair once
    cut_index: dict[tuple[int, int], int]
    flow_path_len: dict[int, int]
    network_id: int = 0
    _directed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return len(self.node_type)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def cut_nodes(self, flow_id: int) -> list[int]:
        """Cut node ids of a flow, ordered by boundary 1..k-1."""
        k = self.flow_path_len[flow_id]
        return [self.cut_index[(flow_id, b)] for b in range(1, k)]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)

    def with_features(self, features: np.ndarray) -> "EncodedGraph":
        return EncodedGraph(self.node_type, features, self.edges, self.cut_index,
                            self.flow_path_len, self.network_id)


def encode(net: Network) -> EncodedGraph:
    S = net.num_servers
    F = net.num_flows
    n_path = sum(f.path_length for f in net.flows)
    n_cut = sum(max(f.path_length - 1, 0) for f in net.flows)
    N = S + F + n_path + n_cut

    node_type = np.empty(N, dtype=np.int64)
    feats = np.zeros((N, FEATURE_WIDTH))
    edges: list[tuple[int, int]] = []

    for s in net.servers:
        node_type[s.id] = SERVER
        feats[s.id, NUM_TYPES:] = (s.service.rate, s.service.latency)
    for f in net.flows:
        node_type[S + f.id] = FLOW
        feats[S + f.id, NUM_TYPES:] = (f.arrival.rate, f.arrival.burst)
    edges.extend(sorted(net.links))

    nxt = S + F
    for f in net.flows:
        for hop, s in enumerate(f.path, start=1):
            node_type[nxt] = PATH_ORDER
            feats[nxt, NUM_TYPES] = hop
            edges.append((S + f.id, nxt))
            edges.append((nxt, s))
            nxt += 1

    cut_index = {}
    for f in net.flows:
        for b in range(1, f.path_length):
            node_type[nxt] = CUT
            cut_index[(f.id, b)] = nxt
            edges.append((nxt, S + f.id))
            edges.append((nxt, f.path[b - 1]))
            edges.append((nxt, f.path[b]))
            nxt += 1

    feats[np.arange(N), node_type] = 1.0
    return EncodedGraph(node_type, feats, np.array(edges, dtype=np.int64).reshape(-1, 2),
                        cut_index, {f.id: f.path_length for f in net.flows}, net.id)

"""Feed-forward server graphs, random topology generators and the JSONL dataset format.

Randomness comes exclusively from numpy's ``Philox`` bit generator (a 4x64
counter-based generator), keyed through ``SeedSequence``. Both are
platform-independent, so a seed identifies a dataset exactly. Network ``i``
of a dataset with master seed ``s`` draws its parameters from the stream
``SeedSequence([s, i, 0])`` (the last key is bumped only when a draw has to
be rejected), independently of every other network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .curves import RateLatency, TokenBucket

__all__ = [
    "Flow",
    "GenerationFailed",
    "GeneratorParams",
    "LabeledFlow",
    "Network",
    "SchemaError",
    "Server",
    "ValidationReport",
    "generate",
    "generate_dataset",
    "generate_erdos_renyi",
    "generate_tandem",
    "generate_tree",
    "load_dataset",
    "make_rng",
    "network_from_dict",
    "network_to_dict",
    "save_dataset",
    "validate",
]

TOPOLOGIES = ("tandem", "tree", "erdos-renyi")


class GenerationFailed(RuntimeError):
    """No flow path could be placed in a generated graph."""


class SchemaError(ValueError):
    """A dataset line does not follow the JSONL schema."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Server:
    id: int
    service: RateLatency


@dataclass(frozen=True)
class Flow:
    id: int
    arrival: TokenBucket
    path: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(s) for s in self.path))

    @property
    def path_length(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class LabeledFlow:
    """Best decomposition of a flow found by exhaustive search.

    ``cuts`` is ``None`` and ``delay`` is ``inf`` for flows whose best bound is
    unbounded; those are skipped during training.
    """

    flow: int
    cuts: tuple[int, ...] | None
    delay: float

    @property
    def skip(self) -> bool:
        return self.cuts is None


@dataclass
class Network:
    servers: list[Server]
    links: set[tuple[int, int]]
    flows: list[Flow]
    id: int = 0
    labels: list[LabeledFlow] | None = None
    _topo: list[int] | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def num_servers(self) -> int:
        return len(self.servers)

    @property
    def num_flows(self) -> int:
        return len(self.flows)

    def flows_at(self) -> list[list[int]]:
        """Flow ids crossing each server, ordered by flow id."""
        at: list[list[int]] = [[] for _ in self.servers]
        for f in self.flows:
            for s in f.path:
                at[s].append(f.id)
        return at

    def topological_order(self) -> list[int]:
        """Servers in a deterministic topological order of the link graph.

        Ties are broken by lowest server id, so the order is unique.
        """
        if self._topo is None:
            import heapq

            indeg = [0] * self.num_servers
            succ: list[list[int]] = [[] for _ in self.servers]
            for u, v in sorted(self.links):
                succ[u].append(v)
                indeg[v] += 1
            heap = [s for s in range(self.num_servers) if indeg[s] == 0]
            heapq.heapify(heap)
            order = []
            while heap:
                u = heapq.heappop(heap)
                order.append(u)
                for v in succ[u]:
                    indeg[v] -= 1
                    if indeg[v] == 0:
                        heapq.heappush(heap, v)
            if len(order) != self.num_servers:
                raise ValueError("link graph contains a cycle")
            self._topo = order
        return self._topo

    def labels_by_flow(self) -> dict[int, LabeledFlow]:
        return {lab.flow: lab for lab in self.labels or ()}


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate(net: Network) -> ValidationReport:
    """Check ids, acyclicity and paths; warn about over-utilized servers."""
    report = ValidationReport()
    ids = [s.id for s in net.servers]
    if ids != list(range(len(ids))):
        report.violations.append(f"server ids are not 0..{len(ids) - 1}: {ids}")
    fids = [f.id for f in net.flows]
    if fids != list(range(len(fids))):
        report.violations.append(f"flow ids are not 0..{len(fids) - 1}: {fids}")
    for u, v in sorted(net.links):
        if not (0 <= u < len(ids) and 0 <= v < len(ids)):
            report.violations.append(f"link ({u},{v}) references an unknown server")
        elif u == v:
            report.violations.append(f"self-loop on server {u}")

    graph: dict[int, set[int]] = {s: set() for s in range(len(ids))}
    for u, v in net.links:
        graph.setdefault(v, set()).add(u)
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as err:
        report.violations.append(f"cycle in link graph: {err.args[1]}")

    for f in net.flows:
        if not f.path:
            report.violations.append(f"flow {f.id} has an empty path")
            continue
        if len(set(f.path)) != len(f.path):
            report.violations.append(f"flow {f.id} repeats a server: {list(f.path)}")
        for s in f.path:
            if not 0 <= s < len(ids):
                report.violations.append(f"flow {f.id} visits unknown server {s}")
        for u, v in zip(f.path, f.path[1:]):
            if (u, v) not in net.links:
                report.violations.append(f"flow {f.id} uses missing link ({u},{v})")

    load = [0.0] * len(ids)
    for f in net.flows:
        for s in f.path:
            if 0 <= s < len(ids):
                load[s] += f.arrival.rate
    for s in net.servers:
        if s.id < len(load) and load[s.id] >= s.service.rate:
            report.warnings.append(
                f"server {s.id} unstable: load {load[s.id]!r} >= rate {s.service.rate!r}")
    return report


# -- generators ---------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorParams:
    """Parameters for one random network.

    ``max_hops`` optionally caps flow path length (and so the 2**(k-1)
    decompositions an exhaustive search has to visit).
    """

    topology: str
    server_count: int
    flow_count: int
    edge_probability: float = 0.5
    utilization_cap: float = 0.9
    seed: int = 0
    max_hops: int | None = None

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}; expected one of {TOPOLOGIES}")
        if self.server_count < 2:
            raise ValueError("server_count must be >= 2")
        if self.flow_count < 1:
            raise ValueError("flow_count must be >= 1")
        if not 0 < self.edge_probability <= 1:
            raise ValueError("edge_probability must be in (0, 1]")
        if not 0 < self.utilization_cap <= 1:
            raise ValueError("utilization_cap must be in (0, 1]")
        if self.max_hops is not None and self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")


def make_rng(*key: int) -> np.random.Generator:
    """Philox stream keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def _unit(rng: np.random.Generator, size=None):
    """Uniform draws on (0, 1]."""
    return 1.0 - rng.random(size)


def _finish(rng, params: GeneratorParams, links, paths, net_id) -> Network:
    s_rates = _unit(rng, params.server_count)
    s_lats = _unit(rng, params.server_count)
    f_rates = _unit(rng, len(paths))
    f_bursts = _unit(rng, len(paths))

    load = np.zeros(params.server_count)
    for rate, path in zip(f_rates, paths):
        load[list(path)] += rate
    # per-server headroom; a flow is scaled by its tightest server
    with np.errstate(divide="ignore"):
        headroom = np.where(load > 0, params.utilization_cap * s_rates / load, np.inf)
    scaled = [float(r * min(1.0, headroom[list(p)].min())) for r, p in zip(f_rates, paths)]

    servers = [Server(i, RateLatency(float(s_rates[i]), float(s_lats[i])))
               for i in range(params.server_count)]
    flows = [Flow(i, TokenBucket(scaled[i], float(f_bursts[i])), tuple(p))
             for i, p in enumerate(paths)]
    return Network(servers, set(links), flows, id=net_id)


def _cap(params: GeneratorParams, hops: int) -> int:
    return hops if params.max_hops is None else min(hops, params.max_hops)


def generate_tandem(params: GeneratorParams, net_id: int = 0) -> Network:
    if params.topology != "tandem":
        raise ValueError("generate_tandem requires topology='tandem'")
    rng = make_rng(params.seed)
    n = params.server_count
    links = [(i, i + 1) for i in range(n - 1)]
    hop_cap = _cap(params, n)
    intervals = [(i, j) for i in range(n) for j in range(i, min(n, i + hop_cap))]
    paths = []
    for _ in range(params.flow_count):
        i, j = intervals[int(rng.integers(0, len(intervals)))]
        paths.append(tuple(range(i, j + 1)))
    return _finish(rng, params, links, paths, net_id)


def generate_tree(params: GeneratorParams, net_id: int = 0) -> Network:
    """Random sink tree: every server forwards towards root 0.

    The tree is decoded from a uniformly random Pruefer sequence.
    """
    if params.topology != "tree":
        raise ValueError("generate_tree requires topology='tree'")
    rng = make_rng(params.seed)
    n = params.server_count
    parent = _pruefer_parents(rng, n)
    links = [(v, parent[v]) for v in range(1, n)]
    paths = []
    for _ in range(params.flow_count):
        src = int(rng.integers(0, n))
        root_path = [src]
        while root_path[-1] != 0:
            root_path.append(parent[root_path[-1]])
        hops = int(rng.integers(1, _cap(params, len(root_path)) + 1))
        paths.append(tuple(root_path[:hops]))
    return _finish(rng, params, links, paths, net_id)


def _pruefer_parents(rng: np.random.Generator, n: int) -> list[int]:
    """Parent of each node in a uniform random labelled tree rooted at 0."""
    adj: list[list[int]] = [[] for _ in range(n)]
    if n == 2:
        adj[0].append(1)
        adj[1].append(0)
    else:
        import heapq

        seq = [int(x) for x in rng.integers(0, n, size=n - 2)]
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        leaves = [i for i in range(n) if degree[i] == 1]
        heapq.heapify(leaves)
        for x in seq:
            leaf = heapq.heappop(leaves)
            adj[leaf].append(x)
            adj[x].append(leaf)
            degree[x] -= 1
            if degree[x] == 1:
                heapq.heappush(leaves, x)
        u, v = heapq.heappop(leaves), heapq.heappop(leaves)
        adj[u].append(v)
        adj[v].append(u)
    parent = [-1] * n
    stack = [0]
    seen = {0}
    while stack:
        u = stack.pop()
        for v in sorted(adj[u]):
            if v not in seen:
                seen.add(v)
                parent[v] = u
                stack.append(v)
    return parent


def generate_erdos_renyi(params: GeneratorParams, net_id: int = 0,
                         endpoint_retries: int = 100) -> Network:
    """G(n, p) with edges oriented from lower to higher index.

    Each flow picks a random source and a random sink reachable from it
    (sink != source), then a path drawn uniformly among the directed paths
    between them that respect ``max_hops``. Endpoint pairs with no such path
    are rejected and redrawn up to ``endpoint_retries`` times.
    """
    if params.topology != "erdos-renyi":
        raise ValueError("generate_erdos_renyi requires topology='erdos-renyi'")
    rng = make_rng(params.seed)
    n = params.server_count
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(len(iu)) < params.edge_probability
    links = [(int(a), int(b)) for a, b in zip(iu[mask], ju[mask])]
    succ: list[list[int]] = [[] for _ in range(n)]
    for a, b in links:
        succ[a].append(b)
    reach = _reachability(succ)
    hop_cap = _cap(params, n)

    paths = []
    for _ in range(params.flow_count):
        for _attempt in range(endpoint_retries):
            src = int(rng.integers(0, n))
            sinks = sorted(reach[src])
            if not sinks:
                continue
            dst = sinks[int(rng.integers(0, len(sinks)))]
            path = _uniform_path(rng, succ, src, dst, hop_cap)
            if path is not None:
                paths.append(path)
                break
        else:
            raise GenerationFailed(
                f"could not place a flow after {endpoint_retries} endpoint draws "
                f"(n={n}, p={params.edge_probability}, max_hops={params.max_hops})")
    return _finish(rng, params, links, paths, net_id)


def _reachability(succ: list[list[int]]) -> list[set[int]]:
    n = len(succ)
    reach: list[set[int]] = [set() for _ in range(n)]
    for u in reversed(range(n)):  # successors always have higher index
        for v in succ[u]:
            reach[u].add(v)
            reach[u] |= reach[v]
    return reach


def _uniform_path(rng, succ, src, dst, hop_cap):
    """Uniformly random src->dst path with at most ``hop_cap`` servers, or None."""
    n = len(succ)
    # counts[r][v]: number of v->dst paths with at most r servers
    counts = [[0] * n for _ in range(hop_cap + 1)]
    for r in range(1, hop_cap + 1):
        row = counts[r]
        row[dst] = 1
        prev = counts[r - 1]
        for v in range(dst - 1, src - 1, -1):
            row[v] = sum(prev[w] for w in succ[v] if w <= dst)
    if counts[hop_cap][src] == 0:
        return None
    path = [src]
    u, left = src, hop_cap
    while u != dst:
        options = [w for w in succ[u] if w <= dst and counts[left - 1][w] > 0]
        weights = np.array([counts[left - 1][w] for w in options], dtype=float)
        u = options[int(rng.choice(len(options), p=weights / weights.sum()))]
        path.append(u)
        left -= 1
    return tuple(path)


_GENERATORS = {
    "tandem": generate_tandem,
    "tree": generate_tree,
    "erdos-renyi": generate_erdos_renyi,
}


def generate(params: GeneratorParams, net_id: int = 0) -> Network:
    return _GENERATORS[params.topology](params, net_id)


def generate_dataset(count: int, seed: int, servers: tuple[int, int] = (2, 8),
                     flows: tuple[int, int] = (1, 30),
                     topologies: Sequence[str] = TOPOLOGIES,
                     edge_probability: float | tuple[float, float] = (0.3, 0.8),
                     utilization_cap: float = 0.9,
                     max_hops: int | None = None, first_id: int = 0) -> list[Network]:
    """Draw ``count`` networks with sizes uniform in the inclusive ranges.

    Network ``i`` depends only on ``(seed, i)``, so datasets can be produced
    in chunks or in parallel.
    """
    nets = []
    for net_id in range(first_id, first_id + count):
        for attempt in range(100):
            params = _draw_params(seed, net_id, attempt, servers, flows, topologies,
                                  edge_probability, utilization_cap, max_hops)
            try:
                nets.append(generate(params, net_id))
                break
            except GenerationFailed:
                continue  # e.g. an edgeless G(n, p) draw; redraw the parameters
        else:
            raise GenerationFailed(f"network {net_id}: every parameter draw failed")
    return nets


def _draw_params(seed, net_id, attempt, servers, flows, topologies, edge_probability,
                 utilization_cap, max_hops) -> GeneratorParams:
    rng = make_rng(seed, net_id, attempt)
    topology = topologies[int(rng.integers(0, len(topologies)))]
    n_servers = int(rng.integers(servers[0], servers[1] + 1))
    n_flows = int(rng.integers(flows[0], flows[1] + 1))
    if isinstance(edge_probability, tuple):
        lo, hi = edge_probability
        p = float(lo + (hi - lo) * _unit(rng))
    else:
        p = float(edge_probability)
    sub_seed = int(rng.integers(0, 2**63))
    return GeneratorParams(topology, n_servers, n_flows, p, utilization_cap, sub_seed, max_hops)


# -- serialization ------------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    obj = {
        "id": net.id,
        "servers": [{"id": s.id, "rate": s.service.rate, "latency": s.service.latency}
                    for s in net.servers],
        "links": [[u, v] for u, v in sorted(net.links)],
        "flows": [{"id": f.id, "rate": f.arrival.rate, "burst": f.arrival.burst,
                   "path": list(f.path)} for f in net.flows],
    }
    if net.labels is not None:
        obj["labels"] = [
            {"flow": lab.flow,
             "cuts": None if lab.cuts is None else list(lab.cuts),
             "delay": None if math.isinf(lab.delay) else lab.delay}
            for lab in net.labels]
    return obj


def network_from_dict(obj: dict, line: int | None = None) -> Network:
    if not isinstance(obj, dict):
        raise SchemaError("expected a JSON object", line)
    for key in ("id", "servers", "links", "flows"):
        if key not in obj:
            raise SchemaError(f"missing key {key!r}", line)
    try:
        servers = [Server(int(s["id"]), RateLatency(float(s["rate"]), float(s["latency"])))
                   for s in obj["servers"]]
        links = {(int(u), int(v)) for u, v in obj["links"]}
        flows = [Flow(int(f["id"]), TokenBucket(float(f["rate"]), float(f["burst"])),
                      tuple(int(s) for s in f["path"]))
                 for f in obj["flows"]]
        labels = None
        if "labels" in obj and obj["labels"] is not None:
            labels = [LabeledFlow(int(lab["flow"]),
                                  None if lab["cuts"] is None else tuple(int(c) for c in lab["cuts"]),
                                  math.inf if lab["delay"] is None else float(lab["delay"]))
                      for lab in obj["labels"]]
    except (KeyError, TypeError, ValueError) as err:
        raise SchemaError(f"malformed network: {err!r}", line) from err
    return Network(servers, links, flows, id=int(obj["id"]), labels=labels)


def dumps(net: Network) -> str:
    return json.dumps(network_to_dict(net), separators=(",", ":"))


def save_dataset(networks: Iterable[Network], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for net in networks:
            fh.write(dumps(net))
            fh.write("\n")


def load_dataset(path) -> list[Network]:
    nets = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as err:
                raise SchemaError(f"invalid JSON: {err.msg}", lineno) from err
            nets.append(network_from_dict(obj, lineno))
    return nets

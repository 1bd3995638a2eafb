"""Labelling, training-set assembly, and the evaluation experiments.

All experiments are deterministic given their seed: every random draw comes
from a Philox stream keyed by ``(seed, ...)`` and work items are merged in
(network id, flow id) order.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .encoding import FEATURES, EncodedGraph, encode
from .gnn import GraphBatch, ModelParams, TrainSample, forward_batch
from .heuristic import deep_tma_delays, threshold_mask
from .network import LabeledFlow, Network, make_rng
from .tma import analyzer

CSV_HEADER = ["network_id", "flow_id", "path_len", "heuristic", "n", "delay_exhaustive",
              "delay_heuristic", "rel_err", "wall_time_s"]
SUMMARY_HEADER = ["path_len", "heuristic", "n", "count", "mean_rel_err", "median_rel_err",
                  "excluded_unbounded"]


class UndefinedRelErr(ValueError):
    """Relative error requested against an unbounded or zero reference delay."""


def rel_err(delay_heuristic: float, delay_exhaustive: float) -> float:
    if not math.isfinite(delay_exhaustive) or delay_exhaustive <= 0:
        raise UndefinedRelErr(f"reference delay {delay_exhaustive!r} is not finite and positive")
    return (delay_heuristic - delay_exhaustive) / delay_exhaustive


# -- labelling ------------------------------------------------------------------

def label_network(net: Network) -> Network:
    """Copy of ``net`` carrying the exhaustive optimum of every flow with k >= 2."""
    an = analyzer(net)
    labels = []
    for f in net.flows:
        if f.path_length < 2:
            continue
        best = an.exhaustive(f.id)
        if math.isinf(best.delay):
            labels.append(LabeledFlow(f.id, None, math.inf))
        else:
            labels.append(LabeledFlow(f.id, best.decomposition, best.delay))
    out = replace(net, labels=labels)
    return out


def label_dataset(nets: Sequence[Network], jobs: int = 1) -> list[Network]:
    if jobs <= 1:
        return [label_network(n) for n in nets]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(label_network, nets, chunksize=16))


def exhaustive_delays(net: Network) -> dict[int, float]:
    """Best delay per flow (k >= 2), from labels when present."""
    if net.labels is not None:
        return {lab.flow: lab.delay for lab in net.labels}
    an = analyzer(net)
    return {f.id: an.exhaustive(f.id).delay for f in net.flows if f.path_length >= 2}


def train_sample(net: Network, graph: EncodedGraph | None = None) -> TrainSample:
    """Cut-node targets from a labelled network; skipped flows stay unlabelled."""
    if net.labels is None:
        net = label_network(net)
    graph = encode(net) if graph is None else graph
    labels = {}
    for lab in net.labels:
        if lab.skip:
            continue
        k = net.flows[lab.flow].path_length
        for b in range(1, k):
            labels[graph.cut_index[(lab.flow, b)]] = int(b in lab.cuts)
    return TrainSample(graph, labels)


# -- inference helpers ------------------------------------------------------------

def batched_probabilities(params: ModelParams, graphs: Sequence[EncodedGraph],
                          iterations: int | None = None, batch_size: int = 32
                          ) -> list[dict[int, np.ndarray]]:
    """Per graph, per flow, cut probabilities in boundary order."""
    out = []
    for lo in range(0, len(graphs), batch_size):
        chunk = graphs[lo:lo + batch_size]
        batch = GraphBatch.build(chunk)
        for g, probs in zip(chunk, batch.cut_probabilities(forward_batch(params, batch, iterations))):
            out.append({f: np.array([probs[(f, b)] for b in range(1, k)])
                        for f, k in g.flow_path_len.items()})
    return out


def _threshold_rel_errs(nets, probs_per_net, references) -> list[float]:
    """RelErr of the thresholded prediction for each flow with a finite reference."""
    errs = []
    for net, probs, ref in zip(nets, probs_per_net, references):
        an = analyzer(net)
        for fid in sorted(ref):
            if not math.isfinite(ref[fid]) or ref[fid] <= 0:
                continue
            d = an.best_of(fid, [threshold_mask(probs[fid])]).delay
            errs.append(rel_err(d, ref[fid]))
    return errs


# -- evaluation ------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecord:
    network_id: int
    flow_id: int
    path_len: int
    heuristic: str
    n: int
    delay_exhaustive: float
    delay_heuristic: float
    rel_err: float
    wall_time: float | None = None

    def row(self) -> list:
        return [self.network_id, self.flow_id, self.path_len, self.heuristic, self.n,
                repr(self.delay_exhaustive), repr(self.delay_heuristic), repr(self.rel_err),
                "" if self.wall_time is None else f"{self.wall_time:.6f}"]


@dataclass
class Evaluation:
    records: list[EvalRecord]
    excluded: dict[int, int]       # path length -> flows with unbounded exhaustive delay

    def summary(self) -> list[list]:
        """Mean/median RelErr grouped by (path length, heuristic, n)."""
        groups: dict[tuple[int, str, int], list[float]] = {}
        for r in self.records:
            groups.setdefault((r.path_len, r.heuristic, r.n), []).append(r.rel_err)
        rows = []
        for (k, name, n), errs in sorted(groups.items()):
            rows.append([k, name, n, len(errs), repr(statistics.fmean(errs)),
                         repr(statistics.median(errs)), self.excluded.get(k, 0)])
        for k in sorted(set(self.excluded) - {key[0] for key in groups}):
            rows.append([k, "", "", 0, "", "", self.excluded[k]])
        return rows

    def mean_rel_err(self, heuristic: str, n: int) -> float:
        errs = [r.rel_err for r in self.records if r.heuristic == heuristic and r.n == n]
        return statistics.fmean(errs) if errs else math.nan

    def per_flow(self, heuristic: str) -> dict[tuple[int, int], dict[int, float]]:
        out: dict[tuple[int, int], dict[int, float]] = {}
        for r in self.records:
            if r.heuristic == heuristic:
                out.setdefault((r.network_id, r.flow_id), {})[r.n] = r.rel_err
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(self.summary())
        return buf.getvalue()


def evaluate_dataset(params: ModelParams, nets: Sequence[Network], n_values: Iterable[int],
                     seed: int, timing: bool = False, include_random: bool = True) -> Evaluation:
    """DeepTMA_n and random_n against the exhaustive optimum, per flow with k >= 2.

    ``wall_time`` is recorded only when ``timing`` is set, since it would make
    otherwise reproducible output differ between runs.
    """
    n_values = sorted(set(int(n) for n in n_values))
    if not n_values or n_values[0] < 1:
        raise ValueError("n values must be >= 1")
    clock = time.perf_counter
    records: list[EvalRecord] = []
    excluded: dict[int, int] = {}
    graphs = [encode(n) for n in nets]
    all_probs = batched_probabilities(params, graphs)
    for net, probs in zip(nets, all_probs):
        an = analyzer(net)
        refs = exhaustive_delays(net)
        for f in net.flows:
            k = f.path_length
            if k < 2:
                continue
            ref = refs[f.id]
            if not math.isfinite(ref):
                excluded[k] = excluded.get(k, 0) + 1
                continue
            for n in n_values:
                t0 = clock()
                d = deep_tma_delays(net, f.id, probs[f.id], [n], seed)[n].delay
                dt = clock() - t0 if timing else None
                records.append(EvalRecord(net.id, f.id, k, "deeptma", n, ref, d,
                                          rel_err(d, ref), dt))
            if include_random:
                for n in n_values:
                    t0 = clock()
                    d = an.random_heuristic(f.id, n, seed).delay
                    dt = clock() - t0 if timing else None
                    records.append(EvalRecord(net.id, f.id, k, "random", n, ref, d,
                                              rel_err(d, ref), dt))
    return Evaluation(records, excluded)


# -- importance ------------------------------------------------------------------

@dataclass(frozen=True)
class ImportanceRecord:
    feature: str | int
    importance: float


def permute_feature(graph: EncodedGraph, feature: str, rng: np.random.Generator) -> EncodedGraph:
    """Shuffle one feature column among the nodes of its type."""
    if feature not in FEATURES:
        raise KeyError(f"unknown feature {feature!r}; expected one of {sorted(FEATURES)}")
    node_type, col = FEATURES[feature]
    idx = np.flatnonzero(graph.node_type == node_type)
    feats = graph.features.copy()
    feats[idx, col] = feats[rng.permutation(idx), col]
    return graph.with_features(feats)


def _mean_rel_err_delta(nets, refs, base_probs, other_probs) -> float:
    base = _threshold_rel_errs(nets, base_probs, refs)
    other = _threshold_rel_errs(nets, other_probs, refs)
    if not base:
        return 0.0
    return math.fsum(o - b for o, b in zip(other, base)) / len(base)


def permutation_importance(params: ModelParams, nets: Sequence[Network], feature: str,
                           permutations: int = 10, seed: int = 0) -> ImportanceRecord:
    """Mean increase in DeepTMA_1 RelErr when ``feature`` is shuffled, over draws."""
    if feature not in FEATURES:
        raise KeyError(f"unknown feature {feature!r}; expected one of {sorted(FEATURES)}")
    graphs = [encode(n) for n in nets]
    refs = [exhaustive_delays(n) for n in nets]
    base = batched_probabilities(params, graphs)
    deltas = []
    for draw in range(permutations):
        permuted = [permute_feature(g, feature, make_rng(seed, draw, net.id))
                    for g, net in zip(graphs, nets)]
        deltas.append(_mean_rel_err_delta(nets, refs, base,
                                          batched_probabilities(params, permuted)))
    return ImportanceRecord(feature, statistics.fmean(deltas) if deltas else 0.0)


def iteration_sweep(params: ModelParams, nets: Sequence[Network], seed: int = 0
                    ) -> list[ImportanceRecord]:
    """Mean RelErr change when stopping message passing after t iterations.

    The thresholded prediction is deterministic, so ``seed`` is accepted only
    for interface symmetry.
    """
    graphs = [encode(n) for n in nets]
    refs = [exhaustive_delays(n) for n in nets]
    full = batched_probabilities(params, graphs)
    out = []
    for t in range(params.iterations + 1):
        probs = full if t == params.iterations else batched_probabilities(params, graphs, t)
        out.append(ImportanceRecord(t, _mean_rel_err_delta(nets, refs, full, probs)))
    return out

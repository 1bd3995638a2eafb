"""Model-guided decomposition choice: thresholded prediction and n-candidate sampling.

Every candidate decomposition is still evaluated by the formal analysis in
:mod:`nctma.tma`, so the returned delay is always a valid bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import EncodedGraph, encode
from .gnn import GraphBatch, ModelParams, forward_batch
from .network import Flow, Network, make_rng
from .tma import DelayResult, analyzer, mask_to_cuts

THRESHOLD = 0.5
RETRY_FACTOR = 10


@dataclass(frozen=True)
class PredictionSet:
    foi: int
    decompositions: list[tuple[int, ...]]
    n_requested: int


def flow_probabilities(params: ModelParams, graph: EncodedGraph | Network,
                       iterations: int | None = None) -> dict[int, np.ndarray]:
    """Cut probabilities of every flow, in boundary order (empty for k = 1)."""
    if isinstance(graph, Network):
        graph = encode(graph)
    batch = GraphBatch.build([graph])
    probs = batch.cut_probabilities(forward_batch(params, batch, iterations))[0]
    return {f: np.array([probs[(f, b)] for b in range(1, k)])
            for f, k in graph.flow_path_len.items()}


def threshold_mask(probs: np.ndarray) -> int:
    return int(np.sum((probs > THRESHOLD) << np.arange(len(probs), dtype=np.int64)))


def _sampled_masks(probs: np.ndarray, n: int, rng: np.random.Generator) -> list[int]:
    """Thresholded mask followed by distinct samples, at most n, at most 10n draws."""
    if n <= 0:
        return []
    weights = 1 << np.arange(len(probs), dtype=np.int64)
    first = threshold_mask(probs)
    out = [first]
    seen = {first}
    draws = 0
    while len(out) < n and draws < RETRY_FACTOR * n:
        u = rng.random(len(probs))
        mask = int(np.sum((u <= probs) * weights))
        draws += 1
        if mask not in seen:
            seen.add(mask)
            out.append(mask)
    return out


def candidate_masks(probs: np.ndarray, n: int, rng: np.random.Generator) -> list[int]:
    """Decomposition bitmasks for n requested candidates.

    If the path has at most n decompositions all of them are returned. The
    list for n is always a prefix of the list for n + 1 under the same
    stream; in the exhaustive case the sampled prefix for ``2**(k-1) - 1``
    comes first and the remaining decompositions follow in bitmask order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 1 << len(probs)
    if total > n:
        return _sampled_masks(probs, n, rng)
    head = _sampled_masks(probs, total - 1, rng)
    taken = set(head)
    return head + [m for m in range(total) if m not in taken]


def _flow_rng(seed: int, net: Network, foi_id: int) -> np.random.Generator:
    return make_rng(seed, net.id, foi_id)


def _fid(foi) -> int:
    return foi.id if isinstance(foi, Flow) else int(foi)


def predict_decomposition(params: ModelParams, net: Network, foi,
                          probs: np.ndarray | None = None) -> tuple[int, ...]:
    fid = _fid(foi)
    if probs is None:
        probs = flow_probabilities(params, net)[fid]
    return mask_to_cuts(threshold_mask(probs), net.flows[fid].path_length)


def sample_decompositions(params: ModelParams, net: Network, foi, n: int, seed: int,
                          probs: np.ndarray | None = None) -> PredictionSet:
    fid = _fid(foi)
    if probs is None:
        probs = flow_probabilities(params, net)[fid]
    k = net.flows[fid].path_length
    masks = candidate_masks(probs, n, _flow_rng(seed, net, fid))
    return PredictionSet(fid, [mask_to_cuts(m, k) for m in masks], n)


def deep_tma_delay(params: ModelParams, net: Network, foi, n: int, seed: int,
                   probs: np.ndarray | None = None) -> DelayResult:
    fid = _fid(foi)
    if probs is None:
        probs = flow_probabilities(params, net)[fid]
    masks = candidate_masks(probs, n, _flow_rng(seed, net, fid))
    return analyzer(net).best_of(fid, masks)


def deep_tma_delays(net: Network, fid: int, probs: np.ndarray, n_values,
                    seed: int) -> dict[int, DelayResult]:
    """DeepTMA_n for several n, reusing one set of probabilities."""
    an = analyzer(net)
    return {n: an.best_of(fid, candidate_masks(probs, n, _flow_rng(seed, net, fid)))
            for n in sorted(set(n_values))}

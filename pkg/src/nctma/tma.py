"""Delay bounds under a tandem decomposition, and searches over decompositions.

A flow of interest (foi) crossing ``k`` servers can be cut at any of the
boundaries ``1..k-1`` (boundary ``i`` lies between path positions ``i-1`` and
``i``). Every sub-tandem between cuts gets a pay-multiplexing-only-once
residual service curve; the residuals are concatenated and the foi's delay is
the horizontal deviation against its own token bucket.

Cross traffic is bounded per flow: a flow's token bucket is pushed server by
server through its own single-server residual (``left_over_single`` followed
by ``output_bound``), in topological order of the server graph.

A decomposition is represented as a sorted tuple of boundary indices; the
bitmask of a decomposition sets bit ``i - 1`` for boundary ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import chain

import numpy as np

from .curves import (
    UNBOUNDED,
    RateLatency,
    TokenBucket,
    UnstableServer,
    aggregate,
    horizontal_deviation,
    left_over_single,
    output_bound,
)
from .network import Flow, Network, make_rng

Decomposition = tuple  # sorted tuple[int, ...] of boundary indices


@dataclass(frozen=True)
class DelayResult:
    delay: float
    decomposition: tuple[int, ...]
    evaluated_count: int


def mask_to_cuts(mask: int, k: int) -> tuple[int, ...]:
    return tuple(i for i in range(1, k) if mask >> (i - 1) & 1)


def cuts_to_mask(cuts) -> int:
    mask = 0
    for c in cuts:
        mask |= 1 << (c - 1)
    return mask


def decompositions_for_length(k: int) -> list[tuple[int, ...]]:
    """All ``2**(k-1)`` decompositions of a k-server path, in bitmask order."""
    if k < 1:
        raise ValueError("path length must be >= 1")
    return [mask_to_cuts(m, k) for m in range(1 << (k - 1))]


def enumerate_decompositions(foi: Flow) -> list[tuple[int, ...]]:
    return decompositions_for_length(foi.path_length)


def check_decomposition(cuts, k: int) -> tuple[int, ...]:
    cuts = tuple(sorted(int(c) for c in cuts))
    if len(set(cuts)) != len(cuts):
        raise ValueError(f"duplicate cut in {cuts}")
    if cuts and (cuts[0] < 1 or cuts[-1] > k - 1):
        raise ValueError(f"cuts {cuts} out of range 1..{k - 1}")
    return cuts


def _better(delay, mask, best_delay, best_mask) -> bool:
    """Strictly smaller bound wins; ties go to fewer cuts, then lower bitmask."""
    if delay != best_delay:
        return delay < best_delay
    return (mask.bit_count(), mask) < (best_mask.bit_count(), best_mask)


class Analyzer:
    """Per-network analysis state with memoized arrival bounds and residuals.

    The memo tables are filled deterministically; share an instance across
    threads only behind a lock.
    """

    def __init__(self, net: Network):
        self.net = net
        self._bounds: list[list[TokenBucket | None]] | None = None
        self._segments: dict[tuple[int, int, int], tuple[float, list[float]] | None] = {}
        self._position: list[dict[int, int]] = [
            {s: p for p, s in enumerate(f.path)} for f in net.flows]
        self._at: list[list[int]] | None = None

    # -- arrival bounding ---------------------------------------------------

    def _compute_bounds(self):
        net = self.net
        bounds: list[list[TokenBucket | None]] = [
            [None] * f.path_length for f in net.flows]
        for f in net.flows:
            bounds[f.id][0] = f.arrival
        at = net.flows_at()
        for s in net.topological_order():
            here = at[s]
            service = net.servers[s].service
            for g in here:
                pos = self._position[g][s]
                if pos + 1 == net.flows[g].path_length:
                    continue
                own = bounds[g][pos]
                others = [bounds[h][self._position[h][s]] for h in here if h != g]
                if own is None or any(o is None for o in others):
                    continue
                try:
                    residual = left_over_single(service, aggregate(others))
                    bounds[g][pos + 1] = output_bound(own, residual)
                except UnstableServer:
                    pass
        self._bounds = bounds

    def arrival_bound(self, flow_id: int, position: int) -> TokenBucket:
        """Token bucket of flow ``flow_id`` entering its ``position``-th server.

        Raises UnstableServer if an upstream server has no residual capacity.
        """
        if self._bounds is None:
            self._compute_bounds()
        if not 0 <= position < self.net.flows[flow_id].path_length:
            raise IndexError(f"position {position} not on flow {flow_id}'s path")
        tb = self._bounds[flow_id][position]
        if tb is None:
            raise UnstableServer(f"arrivals of flow {flow_id} at position {position} are unbounded")
        return tb

    # -- sub-tandem residuals ---------------------------------------------------

    def _cross_pieces(self, foi_id: int, start: int, stop: int):
        """Cross traffic of segment ``path[start:stop]`` as (flow, entry pos, foi positions).

        A flow that leaves the segment and comes back, or that skips a server
        of the segment, is split into runs that are contiguous on both paths.
        """
        foi = self.net.flows[foi_id]
        seg_pos = {s: p for p, s in enumerate(foi.path[start:stop], start=start)}
        if self._at is None:
            self._at = self.net.flows_at()
        touching = sorted({g for s in seg_pos for g in self._at[s]} - {foi_id})
        pieces = []
        for gid in touching:
            run: list[int] = []
            entry = None
            for gp, s in enumerate(self.net.flows[gid].path):
                fp = seg_pos.get(s)
                if fp is not None and run and fp == run[-1] + 1:
                    run.append(fp)
                else:
                    if run:
                        pieces.append((gid, entry, run))
                    run, entry = ([fp], gp) if fp is not None else ([], None)
            if run:
                pieces.append((gid, entry, run))
        return pieces

    def _segment(self, foi_id: int, start: int, stop: int):
        """(residual rate, latency terms) of the segment, or None if unstable."""
        key = (foi_id, start, stop)
        if key in self._segments:
            return self._segments[key]
        net = self.net
        foi = net.flows[foi_id]
        servers = [net.servers[s].service for s in foi.path[start:stop]]
        load = [0.0] * len(servers)
        crosses = []
        result = None
        try:
            for g, entry, run in self._cross_pieces(foi_id, start, stop):
                tb = self.arrival_bound(g, entry)
                for fp in run:
                    load[fp - start] += tb.rate
                crosses.append((tb, math.fsum(servers[fp - start].latency for fp in run)))
            rate = min(sv.rate - ld for sv, ld in zip(servers, load))
            if rate > 0:
                terms = [sv.latency for sv in servers]
                terms.extend((tb.burst + tb.rate * lat) / rate for tb, lat in crosses)
                result = (rate, terms)
        except UnstableServer:
            pass
        self._segments[key] = result
        return result

    def sub_tandem_left_over(self, foi_id: int, start: int, stop: int) -> RateLatency:
        """PMOO residual service for foi positions ``start..stop-1``."""
        if not 0 <= start < stop <= self.net.flows[foi_id].path_length:
            raise IndexError(f"segment [{start}, {stop}) invalid for flow {foi_id}")
        seg = self._segment(foi_id, start, stop)
        if seg is None:
            raise UnstableServer(f"segment [{start}, {stop}) of flow {foi_id} is unstable")
        rate, terms = seg
        return RateLatency(rate, math.fsum(terms))

    # -- delay bounds -----------------------------------------------------------

    def delay_bound(self, foi_id: int, cuts=()) -> float:
        foi = self.net.flows[foi_id]
        k = foi.path_length
        cuts = check_decomposition(cuts, k)
        return self._delay(foi, cuts)

    def _delay(self, foi: Flow, cuts: tuple[int, ...]) -> float:
        edges = (0,) + cuts + (foi.path_length,)
        rates = []
        terms = []
        for a, b in zip(edges, edges[1:]):
            seg = self._segment(foi.id, a, b)
            if seg is None:
                return UNBOUNDED
            rates.append(seg[0])
            terms.append(seg[1])
        # fsum over the flat term list: regrouping by cuts cannot change the sum
        service = RateLatency(min(rates), math.fsum(chain.from_iterable(terms)))
        return horizontal_deviation(foi.arrival, service)

    def best_of(self, foi_id: int, masks) -> DelayResult:
        """Minimum bound over the given decomposition bitmasks (deduplicated)."""
        foi = self.net.flows[foi_id]
        k = foi.path_length
        best_delay, best_mask = math.inf, None
        seen = set()
        for mask in masks:
            if mask in seen:
                continue
            seen.add(mask)
            d = self._delay(foi, mask_to_cuts(mask, k))
            if best_mask is None or _better(d, mask, best_delay, best_mask):
                best_delay, best_mask = d, mask
        if best_mask is None:
            raise ValueError("no decomposition given")
        return DelayResult(best_delay, mask_to_cuts(best_mask, k), len(seen))

    def exhaustive(self, foi_id: int) -> DelayResult:
        k = self.net.flows[foi_id].path_length
        return self.best_of(foi_id, range(1 << (k - 1)))

    def random_heuristic(self, foi_id: int, count: int, seed: int) -> DelayResult:
        """Best of ``count`` uniformly random decompositions (fair coin per boundary)."""
        if count < 1:
            raise ValueError("count must be >= 1")
        k = self.net.flows[foi_id].path_length
        if count >= 1 << (k - 1):
            return self.exhaustive(foi_id)
        rng = make_rng(seed, self.net.id, foi_id, 1)  # disjoint from the model sampler
        coins = rng.random((count, k - 1)) < 0.5
        weights = 1 << np.arange(k - 1)
        masks = [int(m) for m in coins.astype(int) @ weights]
        return self.best_of(foi_id, masks)


def analyzer(net: Network) -> Analyzer:
    """The cached Analyzer of ``net`` (networks are treated as immutable)."""
    cached = getattr(net, "_analyzer", None)
    if cached is None or cached.net is not net:
        cached = Analyzer(net)
        net._analyzer = cached
    return cached


def _fid(foi) -> int:
    return foi.id if isinstance(foi, Flow) else int(foi)


def arrival_bound_at(net: Network, flow, position: int) -> TokenBucket:
    return analyzer(net).arrival_bound(_fid(flow), position)


def sub_tandem_left_over(net: Network, foi, start: int, stop: int) -> RateLatency:
    return analyzer(net).sub_tandem_left_over(_fid(foi), start, stop)


def delay_bound(net: Network, foi, cuts=()) -> float:
    return analyzer(net).delay_bound(_fid(foi), cuts)


def exhaustive_tma(net: Network, foi) -> DelayResult:
    return analyzer(net).exhaustive(_fid(foi))


def random_heuristic(net: Network, foi, count: int, seed: int) -> DelayResult:
    return analyzer(net).random_heuristic(_fid(foi), count, seed)

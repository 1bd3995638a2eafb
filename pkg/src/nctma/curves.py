"""Affine arrival and service curves and their closed-form min-plus operations.

Only two curve shapes exist in this package:

* token bucket ``alpha(d) = rate * d + burst`` for ``d > 0`` and ``0`` otherwise,
* rate latency ``beta(d) = rate * max(0, d - latency)``.

Every operation maps in-family curves to in-family curves, or raises
:class:`UnstableServer`. Delays are plain floats with ``math.inf`` standing
for an unbounded delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

__all__ = [
    "UNBOUNDED",
    "RateLatency",
    "TokenBucket",
    "UnstableServer",
    "aggregate",
    "convolve",
    "horizontal_deviation",
    "is_unbounded",
    "left_over_single",
    "output_bound",
]

#: Delay value used when no finite bound exists.
UNBOUNDED = math.inf


class UnstableServer(ArithmeticError):
    """Raised when cross traffic saturates a server, leaving no residual rate."""


@dataclass(frozen=True)
class TokenBucket:
    """Token-bucket arrival curve."""

    rate: float
    burst: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and math.isfinite(self.burst)):
            raise ValueError(f"token bucket parameters must be finite: {self}")
        if self.rate < 0 or self.burst < 0:
            raise ValueError(f"token bucket parameters must be >= 0: {self}")

    def __call__(self, d):
        """Evaluate the curve at interval length ``d`` (scalar)."""
        return self.rate * d + self.burst if d > 0 else 0.0


@dataclass(frozen=True)
class RateLatency:
    """Rate-latency strict service curve, ``R * (d - T)^+`` with T in time units."""

    rate: float
    latency: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and math.isfinite(self.latency)):
            raise ValueError(f"rate-latency parameters must be finite: {self}")
        if self.rate <= 0 or self.latency < 0:
            raise ValueError(f"rate-latency needs rate > 0 and latency >= 0: {self}")

    def __call__(self, d):
        return self.rate * max(0.0, d - self.latency)


def is_unbounded(delay: float) -> bool:
    return math.isinf(delay)


def convolve(a: RateLatency, b: RateLatency) -> RateLatency:
    """Min-plus convolution: the service of two servers in sequence."""
    return RateLatency(min(a.rate, b.rate), a.latency + b.latency)


def aggregate(flows: Iterable[TokenBucket]) -> TokenBucket:
    rate = 0.0
    burst = 0.0
    for tb in flows:
        rate += tb.rate
        burst += tb.burst
    return TokenBucket(rate, burst)


def left_over_single(server: RateLatency, cross: TokenBucket) -> RateLatency:
    """Residual service ``[beta - alpha]^+`` under arbitrary multiplexing.

    The residual of ``R (d - T)^+`` after ``rho d + b`` is again rate-latency,
    with rate ``R - rho`` and latency ``T + (b + rho T) / (R - rho)``.
    """
    residual_rate = server.rate - cross.rate
    if residual_rate <= 0:
        raise UnstableServer(
            f"cross rate {cross.rate} saturates server rate {server.rate}")
    latency = server.latency + (cross.burst + cross.rate * server.latency) / residual_rate
    return RateLatency(residual_rate, latency)


def output_bound(arrival: TokenBucket, service: RateLatency) -> TokenBucket:
    """Min-plus deconvolution ``alpha (/) beta``, an arrival curve for departures."""
    if arrival.rate > service.rate:
        raise UnstableServer(
            f"arrival rate {arrival.rate} exceeds service rate {service.rate}")
    return TokenBucket(arrival.rate, arrival.burst + arrival.rate * service.latency)


def horizontal_deviation(arrival: TokenBucket, service: RateLatency) -> float:
    """Delay bound: the largest horizontal distance from ``arrival`` to ``service``."""
    if arrival.rate > service.rate:
        return UNBOUNDED
    return service.latency + arrival.burst / service.rate

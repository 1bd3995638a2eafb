"""Why the choice of cuts matters.

Two tiny two-server networks. In the first, analysing the whole path at once
gives the tighter bound; in the second, cutting between the servers wins.
Run with ``python demos/01_decompositions.py``.
"""

from nctma import Flow, Network, RateLatency, Server, TokenBucket
from nctma.tma import Analyzer, arrival_bound_at

# Network A: both servers are slow (rate 1), and a cross flow shares the
# whole path with the flow of interest (flow 0).
net_a = Network(
    servers=[Server(0, RateLatency(1, 1)), Server(1, RateLatency(1, 1))],
    links={(0, 1)},
    flows=[Flow(0, TokenBucket(0.1, 1), (0, 1)), Flow(1, TokenBucket(0.2, 0.5), (0, 1))],
)

an = Analyzer(net_a)
print("network A")
print("  cross flow after server 0:", arrival_bound_at(net_a, 1, 1))
for cuts in [(), (1,)]:
    print(f"  cuts {cuts!s:6} -> delay bound {an.delay_bound(0, cuts):.6f}")
print("  best:", an.exhaustive(0))

# Network B: the second server is fast but carries a bursty local flow.
# Keeping both servers in one sub-tandem charges that burst against the slow
# server's rate; cutting charges it against the fast one.
net_b = Network(
    servers=[Server(0, RateLatency(1, 1)), Server(1, RateLatency(10, 1))],
    links={(0, 1)},
    flows=[Flow(0, TokenBucket(0.1, 1), (0, 1)), Flow(1, TokenBucket(0.5, 5), (1,))],
)

an = Analyzer(net_b)
print("network B")
for cuts in [(), (1,)]:
    print(f"  cuts {cuts!s:6} -> delay bound {an.delay_bound(0, cuts):.6f}")
print("  best:", an.exhaustive(0))

# Neither rule "always cut" nor "never cut" is right, and a path of k servers
# has 2**(k-1) candidates. That is what the learned model is for.

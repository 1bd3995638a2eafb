"""Network-calculus delay bounds with tandem decompositions chosen by a graph model.

Modules, bottom-up:

- :mod:`nctma.curves`: token-bucket / rate-latency curve algebra
- :mod:`nctma.network`: network model, validation, generators, JSONL I/O
- :mod:`nctma.tma`: per-decomposition delay bounds and the exhaustive search
- :mod:`nctma.encoding`: typed graph view of a network
- :mod:`nctma.gnn`: gated message-passing model (numpy, hand-written gradients)
- :mod:`nctma.heuristic`: thresholded and sampled decomposition prediction
- :mod:`nctma.experiments`: labelling, evaluation, importance studies
- :mod:`nctma.cli`: command-line driver
"""

from .curves import RateLatency, TokenBucket, UnstableServer
from .network import Flow, GeneratorParams, Network, Server, generate, generate_dataset, \
    load_dataset, save_dataset, validate
from .tma import DelayResult, delay_bound, exhaustive_tma, random_heuristic

__version__ = "0.1.0"

__all__ = [
    "DelayResult", "Flow", "GeneratorParams", "Network", "RateLatency", "Server", "TokenBucket",
    "UnstableServer", "delay_bound", "exhaustive_tma", "generate", "generate_dataset",
    "load_dataset", "random_heuristic", "save_dataset", "validate",
]

"""Desk-scale training run shared by the acceptance suite.

One configuration, fixed here so the acceptance numbers are reproducible:
5000 mixed-topology training networks (2-8 servers, 1-30 flows), a disjoint
held-out set drawn from the same distribution, and a scaled-up set with ten
times the servers and flows.
"""

import time
from dataclasses import dataclass

from nctma.experiments import label_dataset, train_sample
from nctma.gnn import ModelParams, TrainConfig, train_epochs
from nctma.network import generate_dataset

TRAIN_COUNT = 5000
HELD_OUT_COUNT = 500
SCALE_COUNT = 20
SERVERS = (2, 8)
FLOWS = (1, 30)
SCALE_SERVERS = (20, 80)
SCALE_FLOWS = (10, 300)
SCALE_MAX_HOPS = 10

CONFIG = TrainConfig(learning_rate=3e-3, epochs=28, batch_size=16, seed=0, attention=True,
                     hidden=64, iterations=15)
CPU_BUDGET_S = 30 * 60


@dataclass
class DeskRun:
    params: ModelParams
    history: list
    train_cpu_s: float
    held_out: list
    scaled: list


def held_out_set():
    return label_dataset(generate_dataset(HELD_OUT_COUNT, 2, SERVERS, FLOWS))


def scaled_set():
    return label_dataset(generate_dataset(SCALE_COUNT, 3, SCALE_SERVERS, SCALE_FLOWS,
                                          max_hops=SCALE_MAX_HOPS))


def run(log=None) -> DeskRun:
    train = label_dataset(generate_dataset(TRAIN_COUNT, 1, SERVERS, FLOWS))
    data = [train_sample(n) for n in train]
    t0 = time.process_time()
    params, history = train_epochs(data, CONFIG, log=log)
    cpu = time.process_time() - t0
    return DeskRun(params, history, cpu, held_out_set(), scaled_set())

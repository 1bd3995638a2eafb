"""Generate, label, train, evaluate: a pipeline small enough to finish in about a minute.

The acceptance suite runs the same steps at a larger scale. Here the model is
tiny and under-trained, so expect its error to sit between "random cuts" and
the exhaustive optimum.
"""

import time

from nctma.experiments import evaluate_dataset, label_dataset, train_sample
from nctma.gnn import TrainConfig, train_epochs
from nctma.network import generate_dataset

t0 = time.perf_counter()
train = label_dataset(generate_dataset(1500, seed=1, servers=(2, 6), flows=(1, 15)))
test = label_dataset(generate_dataset(60, seed=2, servers=(2, 6), flows=(1, 15)))
labelled = sum(len(n.labels) for n in train)
print(f"{len(train)} training networks, {labelled} labelled flows "
      f"({time.perf_counter() - t0:.1f} s)")

# How often is the best decomposition "no cuts at all"?
no_cut = sum(1 for n in train for lab in n.labels if lab.cuts == ())
print(f"best decomposition is the uncut path for {no_cut / labelled:.0%} of flows")

cfg = TrainConfig(learning_rate=3e-3, epochs=15, batch_size=16, hidden=32, iterations=6)
params, history = train_epochs([train_sample(n) for n in train], cfg,
                               log=lambda e, loss: print(f"  epoch {e + 1}: loss {loss:.4f}"))

ev = evaluate_dataset(params, test, n_values=[1, 2, 4], seed=0)
print("mean relative error against the exhaustive optimum:")
for n in (1, 2, 4):
    print(f"  n={n}: model {ev.mean_rel_err('deeptma', n):7.2%}   "
          f"random {ev.mean_rel_err('random', n):7.2%}")
print(f"done in {time.perf_counter() - t0:.0f} s")

"""Which inputs matter, and how many message-passing rounds are needed.

Trains a small model, then shuffles one input feature at a time and measures
how much worse the thresholded prediction gets. The second half stops message
passing early and reports the same kind of degradation per round.
"""

from nctma.encoding import FEATURES
from nctma.experiments import iteration_sweep, label_dataset, permutation_importance, train_sample
from nctma.gnn import TrainConfig, train_epochs
from nctma.network import generate_dataset

train = label_dataset(generate_dataset(1500, seed=1, servers=(2, 6), flows=(1, 15)))
probe = label_dataset(generate_dataset(40, seed=3, servers=(2, 6), flows=(1, 15)))
params, _ = train_epochs([train_sample(n) for n in train],
                         TrainConfig(learning_rate=3e-3, epochs=15, hidden=32, iterations=6))

print("permutation importance (increase in mean relative error):")
for name in FEATURES:
    rec = permutation_importance(params, probe, name, permutations=3, seed=0)
    print(f"  {name:14} {rec.importance:+.4f}")

print("stopping after t rounds of message passing:")
for rec in iteration_sweep(params, probe):
    print(f"  t={rec.feature:2d}  {rec.importance:+.4f}")

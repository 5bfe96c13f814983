"""Train a scaled-down model on the synthetic four-class corpus.

A shorter run than the full learnability check: 30 epochs, about a
minute on one core.  Pass ``--epochs 200`` for the full run.
"""

import argparse

from wmagin.aggregators import AggregatorWeights
from wmagin.data import SynthSpec, generate_synthetic
from wmagin.model import ModelConfig
from wmagin.trainer import TrainConfig, evaluate, split_indices, train

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=30)
parser.add_argument("--ablate", action="store_true", help="zero all aggregator weights")
args = parser.parse_args()

data = generate_synthetic(SynthSpec())
split = split_indices(len(data), (8, 1, 1), seed=0)
train_set = [data[i] for i in split.train]
valid_set = [data[i] for i in split.valid]
test_set = [data[i] for i in split.test]

w = 0.0 if args.ablate else 1 / 3
model = ModelConfig(feature_dim=8, graph_len=24, gru_hidden_per_dir=16, gin_hidden=32,
                    aggregator_weights=AggregatorWeights(w, w, w))
result = train(train_set, valid_set, model,
               TrainConfig(max_epochs=args.epochs, early_stop_patience=args.epochs))

for rec in result.log[:: max(1, args.epochs // 6)]:
    print(f"epoch {rec['epoch']:3d}  loss {rec['total_loss']:.4f}  valid WA {rec['valid_wa']:.3f}")
report = evaluate(test_set, result.params, model)
print(f"best epoch {result.best_epoch}; held-out WA {report.wa:.3f}, UA {report.ua:.3f}")
print(report.confusion)

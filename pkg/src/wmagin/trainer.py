"""Multi-stage loss, Adam, early-stopped training, evaluation and k-fold CV."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import FrameGraph, UtteranceFeatures, batch_graphs, segment_utterance
from .model import ModelConfig, Params, checkpoint_dict, forward_batch, init_params
from .tensor import Tensor, cross_entropy_logits

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 200
    early_stop_patience: int = 20
    # None: take the model's stage count (5 for the default four-layer model)
    num_stages: int | None = None
    seed: int = 0
    folds: int = 5
    split_ratio: tuple[int, int, int] = (8, 1, 1)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.split_ratio = tuple(int(r) for r in self.split_ratio)
        if len(self.split_ratio) != 3 or min(self.split_ratio) <= 0:
            raise ValueError("split_ratio needs three positive parts")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.weight_decay < 0 or self.early_stop_patience < 0:
            raise ValueError("weight_decay and early_stop_patience must be non-negative")
        if (self.num_stages is not None and self.num_stages < 1) or self.folds < 2:
            raise ValueError("num_stages must be >= 1 and folds >= 2")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_ratio"] = list(self.split_ratio)
        return d


# ---- loss -----------------------------------------------------------------
def stage_weights(num_stages: int) -> np.ndarray:
    """Weight i / (1 + 2 + ... + I) for stage i = 1..I."""
    i = np.arange(1, num_stages + 1, dtype=np.float64)
    return i / i.sum()


def multi_stage_loss(stages: Sequence[Tensor], labels, num_stages: int | None = None) -> Tensor:
    """Depth-weighted mean of per-stage cross-entropies.

    ``stages`` run from shallowest to deepest and end with the summed
    logits G, which receives the largest weight.
    """
    expected = len(stages) if num_stages is None else num_stages
    if len(stages) != expected:
        raise ValueError(f"expected {expected} stage logits, got {len(stages)}")
    return weighted_stage_sum([cross_entropy_logits(s, labels) for s in stages])


def weighted_stage_sum(losses: Sequence) -> Tensor:
    total = 0.0
    for i, loss in enumerate(losses, start=1):
        total = total + i * loss
    denom = len(losses) * (len(losses) + 1) // 2
    if not isinstance(total, Tensor):
        total = Tensor(total)
    return total / float(denom)


# ---- optimiser ------------------------------------------------------------
@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """One in-place Adam update with bias correction.

    Weight decay is classic L2: ``wd * param`` is added to the gradient
    before the moment updates.
    """
    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if config.weight_decay:
            g = g + config.weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p.data = p.data - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)


def zero_grads(params: Params) -> None:
    for p in params.values():
        p.grad = None


# ---- metrics --------------------------------------------------------------
@dataclass
class EvalReport:
    wa: float
    ua: float
    confusion: np.ndarray
    per_class_recall: np.ndarray

    def to_dict(self) -> dict:
        return {
            "wa": self.wa,
            "ua": self.ua,
            "confusion": self.confusion.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
        }


def report_from_confusion(confusion) -> EvalReport:
    """WA = trace / total; UA = mean recall over classes that occur."""
    c = np.asarray(confusion, dtype=np.int64)
    support = c.sum(axis=1)
    recall = np.divide(np.diag(c), support, out=np.zeros(len(c)), where=support > 0)
    present = support > 0
    wa = float(np.trace(c) / c.sum()) if c.sum() else 0.0
    ua = float(recall[present].mean()) if present.any() else 0.0
    return EvalReport(wa, ua, c, recall)


def confusion_matrix(labels, preds, num_classes: int) -> np.ndarray:
    c = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(c, (np.asarray(labels), np.asarray(preds)), 1)
    return c


def evaluate_graphs(graphs: Sequence[FrameGraph], params: Params, config: ModelConfig,
                    batch_size: int = 256) -> EvalReport:
    """Classify every graph by the argmax of G (lowest index wins ties)."""
    labels, preds = [], []
    for start in range(0, len(graphs), batch_size):
        feats, mask, y = batch_graphs(graphs[start:start + batch_size])
        logits = forward_batch(feats, mask, params, config).G.data
        preds.append(np.argmax(logits, axis=-1))
        labels.append(y)
    if not labels:
        raise ValueError("cannot evaluate an empty dataset")
    cm = confusion_matrix(np.concatenate(labels), np.concatenate(preds), config.num_classes)
    return report_from_confusion(cm)


def to_graphs(utterances: Sequence[UtteranceFeatures], graph_len: int) -> list[FrameGraph]:
    return [g for u in utterances for g in segment_utterance(u, graph_len)]


def evaluate(dataset: Sequence[UtteranceFeatures], params: Params, config: ModelConfig) -> EvalReport:
    return evaluate_graphs(to_graphs(dataset, config.graph_len), params, config)


# ---- training -------------------------------------------------------------
@dataclass
class TrainResult:
    params: Params
    config: ModelConfig
    log: list[dict]
    best_epoch: int

    def checkpoint(self) -> dict:
        return checkpoint_dict(self.params, self.config, {"best_epoch": self.best_epoch})


def _copy_params(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def train_step(batch: Sequence[FrameGraph], params: Params, config: ModelConfig,
               state: AdamState, train_config: TrainConfig) -> tuple[float, list[float]]:
    feats, mask, labels = batch_graphs(batch)
    out = forward_batch(feats, mask, params, config)
    stage_ce = [cross_entropy_logits(s, labels) for s in out.stages()]
    expected = train_config.num_stages or config.num_stages
    if len(stage_ce) != expected:
        raise ValueError(f"model emits {len(stage_ce)} stages but num_stages = {expected}")
    loss = weighted_stage_sum(stage_ce)
    zero_grads(params)
    loss.backward()
    adam_step(params, {k: p.grad for k, p in params.items() if p.grad is not None}, state, train_config)
    return loss.item(), [s.item() for s in stage_ce]


def train(train_set: Sequence[UtteranceFeatures], valid_set: Sequence[UtteranceFeatures],
          model_config: ModelConfig, train_config: TrainConfig,
          log_path=None, params: Params | None = None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation WA.

    Returns the parameters from the epoch with the best validation WA
    (earliest epoch wins ties) and one log record per epoch.
    """
    if not train_set or not valid_set:
        raise ValueError("train and validation sets must be non-empty")
    rng = np.random.default_rng(train_config.seed)
    if params is None:
        params = init_params(model_config, rng)
    train_graphs = to_graphs(train_set, model_config.graph_len)
    valid_graphs = to_graphs(valid_set, model_config.graph_len)
    state = AdamState()
    log: list[dict] = []
    best = (-1.0, 0, _copy_params(params))
    stale = 0
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, train_config.max_epochs + 1):
            order = rng.permutation(len(train_graphs))
            totals, stage_sums, seen = 0.0, np.zeros(model_config.num_stages), 0
            for start in range(0, len(order), train_config.batch_size):
                # final short batch is kept as-is
                batch = [train_graphs[i] for i in order[start:start + train_config.batch_size]]
                loss, stage_losses = train_step(batch, params, model_config, state, train_config)
                totals += loss * len(batch)
                stage_sums += np.asarray(stage_losses) * len(batch)
                seen += len(batch)
            report = evaluate_graphs(valid_graphs, params, model_config)
            record = {
                "epoch": epoch,
                "stage_losses": (stage_sums / seen).tolist(),
                "total_loss": totals / seen,
                "valid_wa": report.wa,
                "valid_ua": report.ua,
            }
            log.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            logger.debug("epoch %d loss %.5f valid WA %.4f", epoch, record["total_loss"], report.wa)
            if report.wa > best[0]:
                best = (report.wa, epoch, _copy_params(params))
                stale = 0
            else:
                stale += 1
            if stale >= train_config.early_stop_patience:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(best[2], model_config, log, best[1])


# ---- splitting ------------------------------------------------------------
@dataclass
class FoldSplit:
    train: list[int]
    valid: list[int]
    test: list[int]


def split_indices(n: int, ratio=(8, 1, 1), seed: int = 0) -> FoldSplit:
    """Shuffle 0..n-1 and cut into train/valid/test by ``ratio`` (each part non-empty)."""
    if n < 3:
        raise ValueError("need at least 3 items to split three ways")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    total = sum(ratio)
    n_valid = max(1, round(n * ratio[1] / total))
    n_test = max(1, round(n * ratio[2] / total))
    n_train = n - n_valid - n_test
    if n_train < 1:
        raise ValueError(f"{n} items too few for ratio {ratio}")
    return FoldSplit(sorted(perm[:n_train]), sorted(perm[n_train:n_train + n_valid]),
                     sorted(perm[n_train + n_valid:]))


def group_folds(groups: Sequence[str], folds: int, valid_fraction: float = 1 / 9,
                seed: int = 0) -> list[FoldSplit]:
    """Speaker-independent folds over utterance indices.

    Distinct groups are dealt round-robin (in shuffled order) into
    ``folds`` buckets; each bucket is one fold's test set.  The validation
    set is a random ``valid_fraction`` of the remaining utterances.
    """
    unique = sorted(set(groups))
    if len(unique) < folds:
        raise ValueError(f"{len(unique)} groups cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    shuffled = [unique[i] for i in rng.permutation(len(unique))]
    bucket = {gid: k % folds for k, gid in enumerate(shuffled)}
    splits = []
    for k in range(folds):
        test = [i for i, gid in enumerate(groups) if bucket[gid] == k]
        rest = np.array([i for i, gid in enumerate(groups) if bucket[gid] != k])
        perm = rest[rng.permutation(len(rest))]
        n_valid = max(1, round(len(rest) * valid_fraction))
        splits.append(FoldSplit(sorted(perm[n_valid:].tolist()), sorted(perm[:n_valid].tolist()), test))
    return splits


@dataclass
class CrossValReport:
    folds: list[EvalReport]
    mean_wa: float
    mean_ua: float

    def to_dict(self) -> dict:
        return {
            "folds": [f.to_dict() for f in self.folds],
            "mean_wa": self.mean_wa,
            "mean_ua": self.mean_ua,
        }


def cross_validate(dataset: Sequence[UtteranceFeatures], model_config: ModelConfig,
                   train_config: TrainConfig) -> CrossValReport:
    splits = group_folds([u.group_id for u in dataset], train_config.folds, seed=train_config.seed)
    reports = []
    for k, split in enumerate(splits):
        pick = lambda idx: [dataset[i] for i in idx]  # noqa: E731
        result = train(pick(split.train), pick(split.valid), model_config, train_config)
        report = evaluate(pick(split.test), result.params, model_config)
        logger.info("fold %d: WA %.4f UA %.4f", k + 1, report.wa, report.ua)
        reports.append(report)
    return CrossValReport(
        reports,
        float(np.mean([r.wa for r in reports])),
        float(np.mean([r.ua for r in reports])),
    )

"""Feature CSV ingestion, synthetic datasets and the flat key-value config format."""

from __future__ import annotations

import csv
import dataclasses
import io
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .aggregators import AggregatorWeights
from .graph import UtteranceFeatures
from .model import ModelConfig, atomic_write_text
from .trainer import TrainConfig

SEED_ENV = "WMAGIN_SEED"


class DataFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---- CSV ------------------------------------------------------------------
FIXED_COLUMNS = ["utterance_id", "group_id", "label", "frame_index"]


def load_dataset(path, num_classes: int | None = None) -> list[UtteranceFeatures]:
    """Read ``utterance_id,group_id,label,frame_index,f0,...,f{h-1}`` rows.

    Rows of one utterance must be consecutive with frame_index 0, 1, 2, ...
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:4] != FIXED_COLUMNS:
            raise DataFormatError(f"{path}:1: header must start with {','.join(FIXED_COLUMNS)}")
        feat_cols = header[4:]
        if not feat_cols or feat_cols != [f"f{i}" for i in range(len(feat_cols))]:
            raise DataFormatError(f"{path}:1: feature columns must be f0..f{{h-1}}")
        h = len(feat_cols)

        utterances: list[UtteranceFeatures] = []
        cur_id, cur_group, cur_label, rows = None, None, None, []
        done: set[str] = set()

        def flush():
            if cur_id is not None:
                utterances.append(UtteranceFeatures(np.array(rows), cur_label, cur_id, cur_group))
                done.add(cur_id)

        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 4 + h:
                raise DataFormatError(f"{path}:{lineno}: expected {4 + h} columns, got {len(rec)}")
            uid, gid = rec[0].strip(), rec[1].strip()
            try:
                label = int(rec[2])
                frame_index = int(rec[3])
                values = [float(v) for v in rec[4:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if num_classes is not None and not 0 <= label < num_classes:
                raise DataFormatError(f"{path}:{lineno}: unknown label {label}")
            if label < 0:
                raise DataFormatError(f"{path}:{lineno}: unknown label {label}")
            if not np.all(np.isfinite(values)):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            if uid != cur_id:
                if uid in done:
                    raise DataFormatError(f"{path}:{lineno}: rows of utterance {uid!r} are not contiguous")
                flush()
                cur_id, cur_group, cur_label, rows = uid, gid, label, []
            elif label != cur_label or gid != cur_group:
                raise DataFormatError(f"{path}:{lineno}: label/group changes within utterance {uid!r}")
            if frame_index != len(rows):
                raise DataFormatError(
                    f"{path}:{lineno}: frame_index {frame_index} of {uid!r}, expected {len(rows)}"
                )
            rows.append(values)
        flush()
    if not utterances:
        raise DataFormatError(f"{path}: no data rows")
    return utterances


def dataset_to_csv(utterances: Sequence[UtteranceFeatures]) -> str:
    if not utterances:
        raise ValueError("cannot write an empty dataset")
    h = utterances[0].feature_dim
    if any(u.feature_dim != h for u in utterances):
        raise ValueError("inconsistent feature dimension across utterances")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIXED_COLUMNS + [f"f{i}" for i in range(h)])
    for u in utterances:
        for t, frame in enumerate(u.frames):
            # repr keeps every float exactly
            writer.writerow([u.utterance_id, u.group_id, u.label, t, *map(repr, frame.tolist())])
    return buf.getvalue()


def save_dataset(path, utterances: Sequence[UtteranceFeatures]) -> None:
    atomic_write_text(path, dataset_to_csv(utterances))


# ---- synthetic data -------------------------------------------------------
@dataclass
class SynthSpec:
    """Four-class toy corpus standing in for frame-level acoustic features.

    Each utterance is a set of sinusoidal channels under an envelope.
    Per class: a base frequency (cycles per frame), an amplitude, and an
    envelope shape.  Phase is random per utterance, so a single frame says
    little about the class; the signal lives in how frames relate in time.
    """

    num_classes: int = 4
    utterances_per_class: int = 50
    frames_range: tuple[int, int] = (40, 160)
    feature_dim: int = 8
    base_freqs: tuple[float, ...] = (0.03, 0.06, 0.10, 0.15)
    amplitudes: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    envelope_rates: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    noise: float = 0.5
    num_groups: int = 10
    group_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.frames_range = tuple(int(v) for v in self.frames_range)
        for name in ("base_freqs", "amplitudes", "envelope_rates"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
            if len(getattr(self, name)) != self.num_classes:
                raise ValueError(f"{name} needs one entry per class ({self.num_classes})")
        lo, hi = self.frames_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad frames_range {self.frames_range}")
        if self.noise < 0 or self.feature_dim < 1 or self.num_groups < 1:
            raise ValueError("noise must be >= 0; feature_dim and num_groups >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def generate_synthetic(spec: SynthSpec) -> list[UtteranceFeatures]:
    """Deterministic function of ``spec``; labels cycle 0, 1, ..., C-1."""
    rng = np.random.default_rng(spec.seed)
    h = spec.feature_dim
    lo, hi = spec.frames_range
    # per-speaker frequency scale and per-channel gain
    speaker_scale = 1.0 + spec.group_jitter * rng.uniform(-1, 1, spec.num_groups)
    speaker_gain = 1.0 + spec.group_jitter * rng.uniform(-1, 1, (spec.num_groups, h))
    channel_mult = 1.0 + 0.5 * np.arange(h) / max(h - 1, 1)
    out = []
    total = spec.num_classes * spec.utterances_per_class
    for k in range(total):
        label = k % spec.num_classes
        group = (k // spec.num_classes) % spec.num_groups
        t_len = int(rng.integers(lo, hi + 1))
        t = np.arange(t_len)[:, None]
        freq = spec.base_freqs[label] * speaker_scale[group] * channel_mult[None, :]
        phase = rng.uniform(0, 2 * np.pi, h)
        env = np.exp(-spec.envelope_rates[label] * t / t_len)
        clean = spec.amplitudes[label] * env * np.sin(2 * np.pi * freq * t + phase)
        frames = speaker_gain[group] * clean + spec.noise * rng.standard_normal((t_len, h))
        out.append(UtteranceFeatures(frames, label, f"utt{k:05d}", f"spk{group:02d}"))
    return out


# ---- config ---------------------------------------------------------------
@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "synth": self.synth.to_dict() if self.synth else None,
        }


def _parse_number(text: str, key: str, kind: type):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(Fraction(text)) if "/" in text else float(text)
        if kind is str:
            return text
    except (ValueError, ZeroDivisionError):
        pass
    raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}")


def _parse_tuple(text: str, key: str, kind: type) -> tuple:
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: expected a comma-separated list")
    return tuple(_parse_number(p, key, kind) for p in parts)


_MODEL_FIELDS = {
    "feature_dim": int, "graph_len": int, "gru_hidden_per_dir": int, "gin_hidden": int,
    "num_gin_layers": int, "fa_layer_index": int, "num_classes": int,
    "residual": bool, "stage_e_source": str,
    "alpha": float, "beta": float, "gamma": float,
}
_TRAIN_FIELDS = {
    "learning_rate": float, "weight_decay": float, "batch_size": int, "max_epochs": int,
    "early_stop_patience": int, "num_stages": int, "seed": int, "folds": int,
    "beta1": float, "beta2": float, "adam_eps": float,
}
_SYNTH_FIELDS = {
    "num_classes": int, "utterances_per_class": int, "feature_dim": int, "noise": float,
    "num_groups": int, "group_jitter": float, "seed": int,
}
_SYNTH_TUPLES = {"frames_range": int, "base_freqs": float, "amplitudes": float,
                 "envelope_rates": float}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse flat ``section.key = value`` lines; '#' starts a comment.

    ``model.aggregator_weights = softmax,sum,mean`` takes the three weights
    in that column order (so ``1,0,0`` is softmax-only); ``model.alpha``,
    ``model.beta`` and ``model.gamma`` set sum/mean/softmax individually.
    """
    model: dict = {}
    weights: dict = {}
    train: dict = {}
    synth: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section == "model" and name == "aggregator_weights":
            if value.count(",") != 2:
                raise ConfigError(f"{key}: expected three weights softmax,sum,mean")
            soft, summ, mean = _parse_tuple(value, key, float)
            weights.update(alpha=summ, beta=mean, gamma=soft)
        elif section == "model" and name in ("alpha", "beta", "gamma"):
            weights[name] = _parse_number(value, key, float)
        elif section == "model" and name in _MODEL_FIELDS:
            model[name] = _parse_number(value, key, _MODEL_FIELDS[name])
        elif section == "train" and name == "split_ratio":
            train[name] = _parse_tuple(value.replace(":", ","), key, int)
        elif section == "train" and name in _TRAIN_FIELDS:
            train[name] = _parse_number(value, key, _TRAIN_FIELDS[name])
        elif section == "synth" and name in _SYNTH_TUPLES:
            synth[name] = _parse_tuple(value, key, _SYNTH_TUPLES[name])
        elif section == "synth" and name in _SYNTH_FIELDS:
            synth[name] = _parse_number(value, key, _SYNTH_FIELDS[name])
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")

    seed_override = os.environ.get(SEED_ENV)
    if seed_override is not None:
        train["seed"] = _parse_number(seed_override, SEED_ENV, int)
    try:
        defaults = AggregatorWeights()
        model["aggregator_weights"] = AggregatorWeights(
            weights.get("alpha", defaults.alpha),
            weights.get("beta", defaults.beta),
            weights.get("gamma", defaults.gamma),
        )
        model_cfg = ModelConfig(**model)
        if "num_stages" not in train:
            train["num_stages"] = model_cfg.num_stages
        train_cfg = TrainConfig(**train)
        synth_cfg = None
        if synth:
            synth.setdefault("num_classes", model_cfg.num_classes)
            if synth["num_classes"] != 4:
                for name in ("base_freqs", "amplitudes", "envelope_rates"):
                    if name not in synth:
                        raise ConfigError(f"synth.{name} required when synth.num_classes != 4")
            synth_cfg = SynthSpec(**synth)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if train_cfg.num_stages != model_cfg.num_stages:
        raise ConfigError(
            f"train.num_stages = {train_cfg.num_stages} but the model emits {model_cfg.num_stages} stages"
        )
    return RunConfig(model_cfg, train_cfg, synth_cfg)


def parse_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), os.fspath(path))

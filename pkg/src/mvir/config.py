"""Declarative run configuration.

One JSON document drives every command: training hyperparameters, model
structure, the dilated-conv bank layout, data paths, and the synthetic
generator spec. Validation collects every violated field before raising,
and unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigValidationError
from .synth import SyntheticSpec
from .views import DEFAULT_PYRAMID, PyramidConfig

VARIANTS = ("full", "no_mvr", "no_mvff", "no_mva")
DECISIONS = ("max_fake", "max_real", "average")
SCORE_AXES = ("regions", "views")
AGGREGATORS = ("attention", "mean")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    dropout: float = 0.5
    heads: int = 4
    d: int = 256
    views: int = 12
    layers: int = 3
    ffn_dim: int = 1024
    decision_dim: int = 256
    decision: str = "max_fake"
    score_softmax_axis: str = "regions"
    aggregator: str = "attention"
    variant: str = "full"
    pyramid: tuple = tuple(DEFAULT_PYRAMID)
    fixture: str | None = None
    manifest: str | None = None
    split: dict = field(default_factory=lambda: {"train": 0.7, "val": 0.15, "test": 0.15})
    output_dir: str = "runs/run"
    synthetic: SyntheticSpec | None = None

    def pyramid_config(self) -> PyramidConfig:
        return PyramidConfig.from_lists(self.pyramid)

    def validate(self) -> None:
        problems = []
        for name in ("seed", "epochs", "batch_size", "heads", "d", "views",
                     "layers", "ffn_dim", "decision_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < (0 if name == "seed" else 1):
                problems.append(f"{name}: must be a positive integer (got {value!r})")
        if not isinstance(self.learning_rate, (int, float)) or self.learning_rate < 0:
            problems.append(f"learning_rate: must be >= 0 (got {self.learning_rate!r})")
        if not isinstance(self.dropout, (int, float)) or not 0 <= self.dropout < 1:
            problems.append(f"dropout: must be in [0, 1) (got {self.dropout!r})")
        if isinstance(self.heads, int) and isinstance(self.d, int) \
                and self.heads >= 1 and self.d >= 1 and self.d % self.heads != 0:
            problems.append(f"d: {self.d} not divisible by heads {self.heads}")
        if self.decision not in DECISIONS:
            problems.append(f"decision: {self.decision!r} not one of {DECISIONS}")
        if self.score_softmax_axis not in SCORE_AXES:
            problems.append(f"score_softmax_axis: {self.score_softmax_axis!r} not one of {SCORE_AXES}")
        if self.aggregator not in AGGREGATORS:
            problems.append(f"aggregator: {self.aggregator!r} not one of {AGGREGATORS}")
        if self.variant not in VARIANTS:
            problems.append(f"variant: {self.variant!r} not one of {VARIANTS}")
        try:
            self.pyramid_config()
        except Exception as exc:
            problems.append(f"pyramid: {exc}")
        split_keys = set(self.split) if isinstance(self.split, dict) else set()
        if split_keys != {"train", "val", "test"}:
            problems.append(f"split: needs exactly train/val/test ratios (got {sorted(split_keys)})")
        elif abs(sum(self.split.values()) - 1.0) > 1e-9:
            problems.append(f"split: ratios sum to {sum(self.split.values())}, expected 1")
        if problems:
            raise ConfigValidationError(problems)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pyramid"] = [list(e) for e in self.pyramid]
        if self.synthetic is not None:
            out["synthetic"] = asdict(self.synthetic)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        problems = [f"{key}: unknown key" for key in unknown]
        data = {k: v for k, v in raw.items() if k in known}
        if "pyramid" in data:
            try:
                data["pyramid"] = tuple(tuple(int(x) for x in entry) for entry in data["pyramid"])
            except (TypeError, ValueError):
                problems.append("pyramid: entries must be [width, dilation, channels] triples")
                del data["pyramid"]
        if data.get("synthetic") is not None:
            syn = data["synthetic"]
            syn_known = set(SyntheticSpec.__dataclass_fields__)
            syn_unknown = sorted(set(syn) - syn_known)
            problems += [f"synthetic.{key}: unknown key" for key in syn_unknown]
            try:
                data["synthetic"] = SyntheticSpec(**{k: v for k, v in syn.items() if k in syn_known})
            except Exception as exc:
                problems.append(f"synthetic: {exc}")
                del data["synthetic"]
        if problems:
            raise ConfigValidationError(problems)
        config = cls(**data)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigValidationError([f"config file not found: {path}"])
        except json.JSONDecodeError as exc:
            raise ConfigValidationError([f"config is not valid JSON: {exc}"])
        if not isinstance(raw, dict):
            raise ConfigValidationError(["config must be a JSON object"])
        config = cls.from_dict(raw)
        env_seed = os.environ.get("MVIR_SEED")
        if env_seed is not None:
            config = replace(config, seed=int(env_seed))
        return config


def arch_fingerprint(config: RunConfig, c_img: int, c_txt: int) -> int:
    """64-bit hash of the architecture-determining config subset.

    Checkpoints embed this so a load against a structurally different
    config fails before any shape comparison. Training-only knobs (epochs,
    learning rate, paths) deliberately stay out.
    """
    arch = {
        "c_img": c_img,
        "c_txt": c_txt,
        "d": config.d,
        "heads": config.heads,
        "views": config.views,
        "layers": config.layers,
        "ffn_dim": config.ffn_dim,
        "decision_dim": config.decision_dim,
        "aggregator": config.aggregator,
        "variant": config.variant,
        "pyramid": [list(e) for e in config.pyramid],
    }
    canonical = json.dumps(arch, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(canonical, digest_size=8).digest(), "little")

"""Synthetic feature generator with a plantable class signal.

Real-class records are pure Gaussian noise. Fake-class records add a fixed
unit direction to one randomly chosen contiguous cluster of region rows and
to a random subset of text rows, at a configurable strength. At strength
well above the noise scale a linear rule on the right region subset
separates the classes, which is what makes desk-scale training and
ablation runs meaningful; at strength zero the two classes are
distributionally identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureRecord
from .errors import ConfigurationError


@dataclass(frozen=True)
class SyntheticSpec:
    real_count: int = 400
    fake_count: int = 400
    regions: int = 12
    tokens_min: int = 6
    tokens_max: int = 12
    image_dim: int = 64
    text_dim: int = 48
    signal_strength: float = 3.0
    noise_scale: float = 1.0
    view_clusters: int = 4
    seed: int = 42

    def __post_init__(self):
        problems = []
        if self.real_count < 0 or self.fake_count < 0:
            problems.append("record counts must be nonnegative")
        if self.regions < 1 or self.image_dim < 1 or self.text_dim < 1:
            problems.append("regions and feature dims must be >= 1")
        if not 1 <= self.tokens_min <= self.tokens_max:
            problems.append("need 1 <= tokens_min <= tokens_max")
        if self.signal_strength < 0:
            problems.append("signal strength must be >= 0")
        if self.noise_scale < 0:
            problems.append("noise scale must be >= 0")
        if not 1 <= self.view_clusters <= self.regions:
            problems.append("view clusters must be in [1, regions]")
        if problems:
            raise ConfigurationError("; ".join(problems))


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_generate(spec: SyntheticSpec) -> list[FeatureRecord]:
    """Generate real then fake records, fully determined by the spec."""
    rng = np.random.default_rng(spec.seed)
    image_dir = _unit(rng, spec.image_dim)
    text_dir = _unit(rng, spec.text_dim)
    bounds = np.linspace(0, spec.regions, spec.view_clusters + 1).astype(int)

    records = []
    total = spec.real_count + spec.fake_count
    width = max(4, len(str(max(total - 1, 0))))
    for i in range(total):
        fake = i >= spec.real_count
        m = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
        image = spec.noise_scale * rng.standard_normal((spec.regions, spec.image_dim))
        text = spec.noise_scale * rng.standard_normal((m, spec.text_dim))
        if fake:
            cluster = int(rng.integers(0, spec.view_clusters))
            lo, hi = bounds[cluster], bounds[cluster + 1]
            image[lo:hi] += spec.signal_strength * image_dir
            mask = rng.random(m) < 0.5
            if not mask.any():
                mask[int(rng.integers(0, m))] = True
            text[mask] += spec.signal_strength * text_dir
        records.append(FeatureRecord(
            id=f"syn-{i:0{width}d}", label=int(fake),
            image_features=image, text_features=text))
    return records


def pooled_features(records: list[FeatureRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Mean-pool each record's region and token rows into one flat vector.

    This is the representation the independent linear probe runs on; it
    deliberately ignores all model structure.
    """
    xs = [np.concatenate([r.image_features.mean(axis=0), r.text_features.mean(axis=0)])
          for r in records]
    ys = [r.label for r in records]
    return np.stack(xs), np.asarray(ys, dtype=np.float64)

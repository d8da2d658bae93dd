"""Multi-view representation of image regions.

A bank of parallel dilated 1-D convolutions runs over the sequence of
projected region features to gather multi-scale context, a learned scorer
turns the concatenated bank output into per-view importance distributions
over regions, and each view summarizes the regions as the convex
combination given by its score column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError

# (width, dilation, out_channels) for the default seven-kernel bank: one
# pointwise entry at full width plus wider kernels at growing dilations.
DEFAULT_PYRAMID = (
    (1, 1, 256),
    (3, 1, 128),
    (3, 2, 128),
    (3, 3, 128),
    (5, 1, 128),
    (5, 2, 128),
    (5, 3, 128),
)


@dataclass(frozen=True)
class PyramidEntry:
    width: int
    dilation: int
    channels: int


@dataclass(frozen=True)
class PyramidConfig:
    """Ordered bank of dilated convolution entries applied in parallel."""

    entries: tuple[PyramidEntry, ...] = field(
        default_factory=lambda: tuple(PyramidEntry(*e) for e in DEFAULT_PYRAMID))

    def __post_init__(self):
        if len(self.entries) < 1:
            raise ConfigurationError("pyramid needs at least one entry")
        for i, e in enumerate(self.entries):
            if e.width < 1 or e.width % 2 == 0:
                raise ConfigurationError(f"pyramid entry {i}: width {e.width} must be odd")
            if e.dilation < 1:
                raise ConfigurationError(f"pyramid entry {i}: dilation {e.dilation} must be >= 1")
            if e.channels < 1:
                raise ConfigurationError(f"pyramid entry {i}: channels {e.channels} must be >= 1")

    @property
    def total_channels(self) -> int:
        return sum(e.channels for e in self.entries)

    @classmethod
    def from_lists(cls, triples) -> "PyramidConfig":
        return cls(tuple(PyramidEntry(int(w), int(d), int(s)) for w, d, s in triples))


@dataclass
class ViewScorer:
    """Maps bank features to per-view region-importance logits."""

    weight: Tensor  # total_channels x n_views
    bias: Tensor    # n_views
    n_views: int

    def __post_init__(self):
        if self.n_views < 1:
            raise ConfigurationError(f"view count {self.n_views} must be >= 1")
        if self.weight.shape[1] != self.n_views or self.bias.shape != (self.n_views,):
            raise DimensionError(
                f"scorer weight {self.weight.shape} / bias {self.bias.shape} "
                f"inconsistent with {self.n_views} views")


@dataclass
class ViewScoreMatrix:
    """Region-by-view importance scores; each view column is a distribution over regions."""

    scores: Tensor


@dataclass
class MultiViewSummary:
    """One summary row per view, each a convex combination of region features."""

    views: Tensor


def pyramid_forward(regions: Tensor, cfg: PyramidConfig,
                    kernels: list[tuple[Tensor, Tensor]]) -> Tensor:
    """Run every bank entry over the region sequence and concatenate channels.

    ``kernels`` pairs up with ``cfg.entries``: one (kernel, bias) per entry,
    kernel shaped width-by-d-by-channels.
    """
    if len(kernels) != len(cfg.entries):
        raise ConfigurationError(
            f"{len(kernels)} kernel tensors for {len(cfg.entries)} pyramid entries")
    d = regions.shape[1]
    outputs = []
    for i, (entry, (kernel, bias)) in enumerate(zip(cfg.entries, kernels)):
        expect = (entry.width, d, entry.channels)
        if kernel.shape != expect:
            raise ConfigurationError(
                f"pyramid entry {i}: kernel shape {kernel.shape}, config wants {expect}")
        outputs.append(ad.dilated_conv1d(regions, kernel, bias, entry.dilation))
    return ad.concat_axis(outputs, axis=1)


def view_scores(features: Tensor, scorer: ViewScorer,
                softmax_over: str = "regions") -> ViewScoreMatrix:
    """Score each region's importance to each view and normalize.

    The default normalizes over the region axis so each view column is a
    probability distribution over regions, which is what makes the summary
    step a convex combination. ``softmax_over="views"`` normalizes each
    region's row instead (kept for ablation experiments).
    """
    if features.shape[1] != scorer.weight.shape[0]:
        raise DimensionError(
            f"feature width {features.shape[1]} does not match scorer input "
            f"width {scorer.weight.shape[0]}")
    logits = ad.add(ad.matmul(features, scorer.weight), scorer.bias)
    if softmax_over == "regions":
        axis = 0
    elif softmax_over == "views":
        axis = 1
    else:
        raise ConfigurationError(f"unknown softmax_over mode {softmax_over!r}")
    return ViewScoreMatrix(ad.softmax_axis(logits, axis))


def summarize(regions: Tensor, score_matrix: ViewScoreMatrix) -> MultiViewSummary:
    """Collapse regions into per-view summaries: scores-transposed times regions."""
    scores = score_matrix.scores
    if scores.shape[0] != regions.shape[0]:
        raise DimensionError(
            f"score rows {scores.shape[0]} != region rows {regions.shape[0]}")
    return MultiViewSummary(ad.matmul(ad.transpose(scores), regions))


def mvr_forward(raw_regions: Tensor, proj_weight: Tensor, proj_bias: Tensor,
                cfg: PyramidConfig, kernels: list[tuple[Tensor, Tensor]],
                scorer: ViewScorer, softmax_over: str = "regions",
                ) -> tuple[Tensor, MultiViewSummary]:
    """Project raw region features to model width, then score and summarize.

    Returns the projected regions (the summary is a convex combination of
    their rows) together with the per-view summary matrix.
    """
    if raw_regions.shape[1] != proj_weight.shape[0]:
        raise DimensionError(
            f"raw region width {raw_regions.shape[1]} does not match "
            f"projection input width {proj_weight.shape[0]}")
    projected = ad.add(ad.matmul(raw_regions, proj_weight), proj_bias)
    bank = pyramid_forward(projected, cfg, kernels)
    scores = view_scores(bank, scorer, softmax_over)
    return projected, summarize(projected, scores)


def check_summary_invariants(regions: np.ndarray, scores: np.ndarray,
                             summary: np.ndarray, atol: float = 1e-9) -> bool:
    """Re-derive each summary row as the score-weighted sum of region rows."""
    n_views = scores.shape[1]
    for n in range(n_views):
        recombined = sum(scores[i, n] * regions[i] for i in range(regions.shape[0]))
        if np.max(np.abs(recombined - summary[n])) > atol:
            return False
    return True

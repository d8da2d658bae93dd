"""Per-view aggregation, decision heads, and the final verdict rule.

Each view owns a learned-query attention pooler over the whole fused set,
a single pooler of the same form condenses the text tokens, and a shared
two-layer decision net scores every view as a (real, fake) probability
pair. The verdict rule collapses the per-view pairs into one fake
probability: the maximum fake probability by default ("one bad cue sinks
the item"), with max-real and average variants for comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, UsageError

DECISION_RULES = ("max_fake", "max_real", "average")
FAKE, REAL = 1, 0  # class indices; fake is the positive class throughout


@dataclass
class Aggregator:
    """Learned-query attention pooling over a set of feature rows."""

    query: Tensor  # shape (d,)


@dataclass
class DecisionNet:
    """Two-layer head: concat(view, text) -> relu hidden -> (real, fake) logits."""

    w1: Tensor  # 2d x hidden
    b1: Tensor
    w2: Tensor  # hidden x 2
    b2: Tensor

    def __post_init__(self):
        if self.w2.shape[1] != 2 or self.b2.shape != (2,):
            raise ConfigurationError(
                f"decision output must be 2-wide, got {self.w2.shape}/{self.b2.shape}")


@dataclass
class DecisionOutput:
    per_view_probs: Tensor   # n_views x 2 rows summing to 1
    fake_prob: Tensor        # scalar, kept as a tensor so gradients flow
    verdict_view: int        # view attaining the max under the rule (lowest index on ties)

    @property
    def value(self) -> float:
        return self.fake_prob.item()


def _pool(rows: Tensor, query: Tensor) -> Tensor:
    """Attention-pool rows with a learned query at temperature sqrt(d); returns (d,)."""
    d = rows.shape[1]
    if query.shape != (d,):
        raise DimensionError(f"query shape {query.shape} does not match rows {rows.shape}")
    q = ad.reshape(query, (1, d))
    logits = ad.scale(ad.matmul(q, ad.transpose(rows)), 1.0 / math.sqrt(d))
    weights = ad.softmax_axis(logits, 1)
    return ad.reshape(ad.matmul(weights, rows), (d,))


def aggregate_views(fused: Tensor, aggregators: list[Aggregator],
                    kind: str = "attention") -> Tensor:
    """Pool the whole fused set once per view, each view with its own query.

    ``kind="mean"`` replaces every pooled row with the plain mean of the
    fused rows (the structure-removing fallback used by comparison runs).
    """
    n = fused.shape[0]
    if len(aggregators) != n:
        raise DimensionError(f"{len(aggregators)} aggregators for {n} views")
    if kind == "mean":
        return ad.tile_rows(ad.mean_axis0(fused), n)
    if kind != "attention":
        raise ConfigurationError(f"unknown aggregator kind {kind!r}")
    rows = [ad.reshape(_pool(fused, agg.query), (1, fused.shape[1]))
            for agg in aggregators]
    return ad.concat_axis(rows, axis=0)


def text_embed(text: Tensor, aggregator: Aggregator, kind: str = "attention") -> Tensor:
    """Pool the text token rows into a single embedding."""
    if text.shape[0] < 1:
        raise UsageError("text_embed requires at least one token row")
    if kind == "mean":
        return ad.mean_axis0(text)
    return _pool(text, aggregator.query)


def view_logits(view_embedding: Tensor, text_embedding: Tensor, net: DecisionNet) -> Tensor:
    """Probability pair (real, fake) for a single view embedding."""
    joint = ad.concat_axis([view_embedding, text_embedding], axis=0)
    hidden = ad.relu(ad.add(ad.reshape(ad.matmul(ad.reshape(joint, (1, joint.shape[0])), net.w1),
                                       (net.w1.shape[1],)), net.b1))
    logits = ad.add(ad.reshape(ad.matmul(ad.reshape(hidden, (1, hidden.shape[0])), net.w2),
                               (2,)), net.b2)
    return ad.softmax_axis(logits, 0)


def view_probs_matrix(view_embeddings: Tensor, text_embedding: Tensor,
                      net: DecisionNet) -> Tensor:
    """All views through the decision head at once; one probability row per view."""
    n = view_embeddings.shape[0]
    joint = ad.concat_axis([view_embeddings, ad.tile_rows(text_embedding, n)], axis=1)
    hidden = ad.relu(ad.add(ad.matmul(joint, net.w1), net.b1))
    logits = ad.add(ad.matmul(hidden, net.w2), net.b2)
    return ad.softmax_axis(logits, 1)


def decide(per_view_probs: Tensor, rule: str = "max_fake") -> DecisionOutput:
    """Collapse per-view probability rows into the final fake probability.

    max_fake takes the largest fake probability; max_real inverts the
    largest real probability; average takes the mean fake probability.
    Gradients flow only through the selected view under the max rules and
    through all views under average.
    """
    if rule not in DECISION_RULES:
        raise ConfigurationError(f"unknown decision rule {rule!r}")
    n = per_view_probs.shape[0]
    if n < 1:
        raise UsageError("decide on an empty view set")
    fake_col = ad.reshape(ad.slice_cols(per_view_probs, FAKE, FAKE + 1), (n,))
    if rule == "max_fake":
        fake_prob = ad.vmax(fake_col)
        verdict = int(np.argmax(fake_col.data))
    elif rule == "max_real":
        real_col = ad.reshape(ad.slice_cols(per_view_probs, REAL, REAL + 1), (n,))
        fake_prob = 1.0 - ad.vmax(real_col)
        verdict = int(np.argmax(real_col.data))
    else:
        # left-fold sum then true division: bit-identical to a per-view scan
        fake_prob = ad.div_const(ad.fold_sum(fake_col), float(n))
        verdict = int(np.argmax(fake_col.data))
    return DecisionOutput(per_view_probs, fake_prob, verdict)

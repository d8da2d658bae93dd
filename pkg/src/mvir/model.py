"""Full model assembly: parameters, forward pass, and the training objective.

The forward path projects raw image-region and text-token features to the
model width, summarizes regions into views, fuses the views with the text,
pools per view, and scores every view through a shared decision head; the
verdict rule then collapses the per-view probabilities. Structural
variants for comparison runs replace one stage at a time with its minimal
substitute (mean pooling or a pass-through).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregation import (
    Aggregator,
    DecisionNet,
    DecisionOutput,
    aggregate_views,
    decide,
    text_embed,
    view_probs_matrix,
)
from .autodiff import Tensor
from .config import RunConfig
from .data import FeatureRecord
from .errors import DimensionError, UsageError
from .fusion import CoAttentionLayer, fuse
from .views import ViewScorer, mvr_forward


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MViRParams:
    """Every learnable tensor, plus the typed blocks wired over them."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    proj_img: tuple[Tensor, Tensor] | None = None
    proj_txt: tuple[Tensor, Tensor] | None = None
    pyramid_kernels: list[tuple[Tensor, Tensor]] = field(default_factory=list)
    scorer: ViewScorer | None = None
    stack: list[CoAttentionLayer] = field(default_factory=list)
    view_aggs: list[Aggregator] = field(default_factory=list)
    text_agg: Aggregator | None = None
    net: DecisionNet | None = None
    c_img: int = 0
    c_txt: int = 0

    def census(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def shape_table(self) -> dict[str, tuple[int, ...]]:
        return {name: t.shape for name, t in self.tensors.items()}

    @classmethod
    def build(cls, config: RunConfig, c_img: int, c_txt: int,
              rng: np.random.Generator) -> "MViRParams":
        """Construct and initialize all tensors the configured variant uses.

        ReLU-adjacent weights get He-uniform fan-in scaling, attention and
        plain linear maps get Xavier-uniform, biases start at zero, and
        layer norms at unit gain.
        """
        d, n_views = config.d, config.views
        params = cls(c_img=c_img, c_txt=c_txt)

        def register(name, data) -> Tensor:
            t = Tensor(data, requires_grad=True)
            params.tensors[name] = t
            return t

        params.proj_img = (register("proj_img.weight", xavier_uniform(rng, (c_img, d), c_img, d)),
                           register("proj_img.bias", np.zeros(d)))
        params.proj_txt = (register("proj_txt.weight", xavier_uniform(rng, (c_txt, d), c_txt, d)),
                           register("proj_txt.bias", np.zeros(d)))

        if config.variant != "no_mvr":
            pyramid = config.pyramid_config()
            for i, entry in enumerate(pyramid.entries):
                kernel = register(f"pyramid.{i}.kernel",
                                  he_uniform(rng, (entry.width, d, entry.channels),
                                             fan_in=entry.width * d))
                bias = register(f"pyramid.{i}.bias", np.zeros(entry.channels))
                params.pyramid_kernels.append((kernel, bias))
            total = pyramid.total_channels
            params.scorer = ViewScorer(
                register("scorer.weight", xavier_uniform(rng, (total, n_views), total, n_views)),
                register("scorer.bias", np.zeros(n_views)),
                n_views)

        if config.variant != "no_mvff":
            for j in range(config.layers):
                prefix = f"fusion.{j}"
                params.stack.append(CoAttentionLayer(
                    wq=register(f"{prefix}.wq", xavier_uniform(rng, (d, d), d, d)),
                    wk=register(f"{prefix}.wk", xavier_uniform(rng, (d, d), d, d)),
                    wv=register(f"{prefix}.wv", xavier_uniform(rng, (d, d), d, d)),
                    wo=register(f"{prefix}.wo", xavier_uniform(rng, (d, d), d, d)),
                    ffn_w1=register(f"{prefix}.ffn_w1",
                                    he_uniform(rng, (d, config.ffn_dim), fan_in=d)),
                    ffn_b1=register(f"{prefix}.ffn_b1", np.zeros(config.ffn_dim)),
                    ffn_w2=register(f"{prefix}.ffn_w2",
                                    xavier_uniform(rng, (config.ffn_dim, d), config.ffn_dim, d)),
                    ffn_b2=register(f"{prefix}.ffn_b2", np.zeros(d)),
                    attn_gain=register(f"{prefix}.attn_gain", np.ones(d)),
                    attn_shift=register(f"{prefix}.attn_shift", np.zeros(d)),
                    ffn_gain=register(f"{prefix}.ffn_gain", np.ones(d)),
                    ffn_shift=register(f"{prefix}.ffn_shift", np.zeros(d)),
                    heads=config.heads,
                ))

        if config.variant != "no_mva":
            params.view_aggs = [
                Aggregator(register(f"agg.view{n}.query",
                                    xavier_uniform(rng, (d,), d, d)))
                for n in range(n_views)]
        params.text_agg = Aggregator(register("agg.text.query",
                                              xavier_uniform(rng, (d,), d, d)))

        dz = config.decision_dim
        params.net = DecisionNet(
            w1=register("decision.w1", he_uniform(rng, (2 * d, dz), fan_in=2 * d)),
            b1=register("decision.b1", np.zeros(dz)),
            w2=register("decision.w2", xavier_uniform(rng, (dz, 2), dz, 2)),
            b2=register("decision.b2", np.zeros(2)),
        )
        return params


@contextmanager
def _stage(name: str):
    """Re-raise shape errors with the failing stage named."""
    try:
        yield
    except DimensionError as exc:
        raise DimensionError(f"{name}: {exc}") from exc


def forward(record: FeatureRecord, params: MViRParams, config: RunConfig,
            mode: str = "eval", rng: np.random.Generator | None = None) -> DecisionOutput:
    """Run one record through the configured variant of the model."""
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    n_views = config.views
    v_raw = Tensor(record.image_features)
    t_raw = Tensor(record.text_features)

    with _stage("text-projection"):
        text = ad.add(ad.matmul(t_raw, params.proj_txt[0]), params.proj_txt[1])

    if config.variant == "no_mvr":
        with _stage("image-projection"):
            projected = ad.add(ad.matmul(v_raw, params.proj_img[0]), params.proj_img[1])
        view_summary = ad.tile_rows(ad.mean_axis0(projected), n_views)
    else:
        with _stage("view-representation"):
            _, summary = mvr_forward(v_raw, params.proj_img[0], params.proj_img[1],
                                     config.pyramid_config(), params.pyramid_kernels,
                                     params.scorer, config.score_softmax_axis)
        view_summary = summary.views

    if config.variant == "no_mvff":
        fused = view_summary
    else:
        with _stage("fusion"):
            fused = fuse(view_summary, text, params.stack,
                         config.dropout, rng, training)

    with _stage("aggregation"):
        t_emb = text_embed(text, params.text_agg, config.aggregator)
        if config.variant == "no_mva":
            pooled = ad.reshape(ad.mean_axis0(fused), (1, config.d))
        else:
            pooled = aggregate_views(fused, params.view_aggs, config.aggregator)

    with _stage("decision"):
        probs = view_probs_matrix(pooled, t_emb, params.net)
        return decide(probs, config.decision)


PROB_CLAMP = 1e-7


def bce_loss(preds: list[Tensor], labels: list[int]) -> Tensor:
    """Summed binary cross-entropy over the batch.

    Predictions are clamped to [1e-7, 1-1e-7] before the logs so saturated
    max-rule outputs cannot produce log(0).
    """
    if len(preds) != len(labels):
        raise UsageError(f"{len(preds)} predictions for {len(labels)} labels")
    if not preds:
        raise UsageError("bce_loss on an empty batch")
    total = None
    for pred, label in zip(preds, labels):
        p = ad.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
        term = -(float(label) * ad.log(p) + (1.0 - float(label)) * ad.log(1.0 - p))
        total = term if total is None else total + term
    return total

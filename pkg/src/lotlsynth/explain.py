"""Token attributions: model-agnostic occlusion and split-gain importance for trees."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .features import EncoderSpec, encode_batch
from .models import GbdtModel, RandomForestModel, predict_scores
from .records import CommandRecord
from .textproc import OOV_ID, PAD_ID, Tokenizer, Vocabulary


@dataclass(frozen=True)
class Attribution:
    """Mean score drop when ``token`` is removed; positive pushes toward malicious."""

    token: str
    value: float
    support: int

    def to_dict(self) -> dict:
        return {"token": self.token, "value": self.value, "support": self.support}


ScoreFn = Callable[[object], np.ndarray]


def _score_fn(model) -> ScoreFn:
    if callable(model) and not hasattr(model, "predict_proba"):
        return model
    return lambda X: predict_scores(model, X)


def occlusion_deltas(model, encoder: EncoderSpec, tokens: Sequence[str]) -> dict[str, float]:
    """``score(x) - score(x without t)`` for every in-vocabulary token ``t`` of one command."""
    score = _score_fn(model)
    vocab = encoder.vocabulary
    uniq = sorted({t for t in tokens if vocab.lookup(t) not in (OOV_ID, PAD_ID)})
    if not uniq:
        return {}
    variants = [list(tokens)] + [[t for t in tokens if t != u] for u in uniq]
    scores = score(encode_batch(variants, encoder).model_input())
    return {u: float(scores[0] - scores[i + 1]) for i, u in enumerate(uniq)}


def occlusion_attribution(model, encoder: EncoderSpec, samples: Sequence[CommandRecord], top_k: int = 10,
                          tokenizer: Callable[[str], list[str]] | None = None) -> list[Attribution]:
    """Per-token occlusion deltas averaged over the samples that contain the token.

    Returns the ``top_k`` tokens by absolute value, ties broken by token.
    """
    tokenizer = tokenizer or Tokenizer()
    sums: dict[str, float] = defaultdict(float)
    support: dict[str, int] = defaultdict(int)
    for r in samples:
        for tok, delta in occlusion_deltas(model, encoder, tokenizer(r.cmd)).items():
            sums[tok] += delta
            support[tok] += 1
    attrs = [Attribution(t, sums[t] / support[t], support[t]) for t in sums]
    attrs.sort(key=lambda a: (-abs(a.value), a.token))
    return attrs[:top_k]


def tree_gain_importance(model: GbdtModel | RandomForestModel) -> dict[int, float]:
    """Total split gain per feature over all trees; unused features are absent."""
    if not isinstance(model, (GbdtModel, RandomForestModel)):
        raise TypeError(f"gain importance needs a tree model, got {type(model).__name__}")
    out: dict[int, float] = defaultdict(float)
    for tree in model.trees:
        for f, g in zip(tree.feature, tree.gain):
            if f >= 0:
                out[int(f)] += float(max(g, 0.0))
    return dict(sorted(out.items()))


def name_features(importance: dict[int, float], vocabulary: Vocabulary) -> dict[str, float]:
    """Map vocabulary-indexed feature importances to token strings."""
    return {vocabulary.tokens[f] if f < len(vocabulary) else f"#{f}": v for f, v in importance.items()}

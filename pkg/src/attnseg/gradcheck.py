"""End-to-end gradient verification on a toy model.

Checks the analytic gradients of the NLL, the auxiliary loss (two ratios),
and their weighted combination against central finite differences, in both
attention modes. Dropout is disabled so every loss is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import Batch, SentencePair, build_vocabularies, encode_pairs, make_batch
from .model import HyperParams, Model, forward_teacher_forced
from .training import aux_loss_graph, nll_loss

TOY_SENTENCES = [
    SentencePair(["aa", "bb", "cc"], list("abca")),
    SentencePair(["bb", "dd"], list("db")),
]


@dataclass
class CheckResult:
    attention_mode: str
    loss_name: str
    max_error: float
    per_parameter: dict[str, float]


def toy_model(attention_mode: str, seed: int = 13) -> tuple[Model, Batch]:
    hp = HyperParams(
        embedding_dim=3,
        encoder_hidden=3,
        decoder_hidden=3,
        attention_hidden=3,
        dropout_rate=0.0,
        attention_mode=attention_mode,
        epochs=1,
        wait=0,
        batch_size=2,
        seed=seed,
    )
    src_vocab, tgt_vocab = build_vocabularies(TOY_SENTENCES)
    model = Model.create(hp, src_vocab, tgt_vocab)
    encoded = encode_pairs(TOY_SENTENCES, src_vocab, tgt_vocab)
    batch = make_batch(encoded, np.arange(len(encoded)))
    return model, batch


def run_gradcheck(step: float = 1e-5) -> list[CheckResult]:
    """Finite-difference every loss variant; returns one result per check."""
    results = []
    for mode in ("plain", "length_bias"):
        model, batch = toy_model(mode)

        def forward():
            return forward_teacher_forced(batch, model, training=False)

        losses = {
            "nll": lambda: nll_loss(forward().step_logits, batch),
            "aux_r1": lambda: aux_loss_graph(forward().step_alpha, batch, 1.0),
            "aux_r2": lambda: aux_loss_graph(forward().step_alpha, batch, 2.0),
            "nll+0.5aux": lambda: _combined(forward(), batch),
        }
        for name, loss_fn in losses.items():
            report = ad.finite_diff_report(loss_fn, model.params, step)
            results.append(CheckResult(mode, name, max(report.values()), report))
    return results


def _combined(result, batch):
    nll = nll_loss(result.step_logits, batch)
    aux = aux_loss_graph(result.step_alpha, batch, 1.0)
    return nll + ad.scale(aux, 0.5)

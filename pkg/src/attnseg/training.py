"""Loss computation, the auxiliary-loss schedule, Adam, and the epoch loop.

The total loss at epoch k is the token-mean NLL plus lambda(k) times the
sentence-mean auxiliary term, where lambda(k) = max(k - W, 0) / K ramps in
after a wait of W epochs. The auxiliary term pushes the number of implied
target segments toward the (scaled) source length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .corpus import Batch, EncodedPair, SentencePair, build_vocabularies, encode_pairs, epoch_batches
from .errors import DataError, NumericError
from .model import HyperParams, Model, ForwardResult, forward_teacher_forced


@dataclass
class LossBreakdown:
    nll: float
    aux: float
    lambda_aux: float
    total: float


def lambda_aux(epoch: int, wait: int, total_epochs: int) -> float:
    """Auxiliary-loss coefficient: zero through the wait, then a linear ramp."""
    return max(epoch - wait, 0) / total_epochs


def nll_loss(step_logits: list[Tensor], batch: Batch) -> Tensor:
    """Mean of -log p(target unit) over all non-pad decode steps in the batch."""
    b, vocab = step_logits[0].shape
    acc = None
    for i, logits in enumerate(step_logits):
        logp = ad.log_softmax(logits)
        onehot = np.zeros((b, vocab))
        onehot[np.arange(b), batch.target[:, i + 1]] = batch.target_mask[:, i]
        picked = ad.rowwise_dot(logp, ad.constant(onehot))
        acc = picked if acc is None else acc + picked
    count = batch.target_mask.sum()
    return ad.scale(ad.sum_all(acc), -1.0 / count)


def aux_loss(matrix: np.ndarray, ratio: float = 1.0) -> float:
    """Auxiliary loss of one attention matrix: smooth |I - r J - sum <A_i, A_i+1>|.

    Consecutive-row dot products near 1 mean adjacent units share an aligned
    source word (no boundary), so the inner sum counts non-boundary steps.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise DataError(f"attention matrix must have at least one row, got {m.shape}")
    if ratio <= 0:
        raise DataError(f"ratio must be > 0, got {ratio}")
    i_len, j_len = m.shape
    inner = float((m[:-1] * m[1:]).sum())
    x = i_len - ratio * j_len - inner
    return float(np.sqrt(x * x + ad.SMOOTH_ABS_EPS))


def aux_loss_graph(step_alpha: list[Tensor], batch: Batch, ratio: float) -> Tensor:
    """Batched in-graph auxiliary loss, averaged per sentence.

    Padded decode steps are excluded: the dot product of rows i and i+1 only
    counts when step i+1 is real (masks are contiguous, so step i is too).
    """
    b = batch.size
    inner = None
    for i in range(len(step_alpha) - 1):
        term = ad.rowwise_dot(step_alpha[i], step_alpha[i + 1])
        gate = batch.target_mask[:, i + 1:i + 2]
        if gate.min() < 1.0:
            term = term * ad.constant(gate)
        inner = term if inner is None else inner + term
    target = batch.target_lengths.reshape(-1, 1) - ratio * batch.source_lengths.reshape(-1, 1)
    diff = ad.constant(target) - inner if inner is not None else ad.constant(target)
    return ad.scale(ad.sum_all(ad.smooth_abs(diff)), 1.0 / b)


def estimate_length_ratio(pairs: list[SentencePair], first_n: int = 100,
                          include_eos: bool = False) -> float:
    """Target-tokens-per-source-token ratio over the first gold sentences."""
    head = pairs[:first_n]
    if not head:
        raise DataError("cannot estimate a length ratio from an empty corpus")
    target_tokens = 0
    source_tokens = 0
    for pair in head:
        if pair.gold_boundaries is None:
            raise DataError("length-ratio estimation needs gold-segmented targets")
        target_tokens += len(pair.gold_boundaries) + 1
        source_tokens += len(pair.source_tokens)
        if include_eos:
            source_tokens += 1
    return target_tokens / source_tokens


class Adam:
    """Standard Adam with bias-corrected moments (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, store: ParameterStore, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.value) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.value) for name, t in store.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.store.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _batch_losses(result: ForwardResult, batch: Batch, hp: HyperParams,
                  lam: float) -> tuple[Tensor, float, float]:
    """Total loss graph for one batch plus the numeric (nll, aux) pair."""
    nll = nll_loss(result.step_logits, batch)
    if hp.loss_mode == "base":
        return nll, nll.item(), 0.0
    if lam > 0.0:
        aux = aux_loss_graph(result.step_alpha, batch, hp.ratio)
        total = nll + ad.scale(aux, lam)
        return total, nll.item(), aux.item()
    # During the wait the aux term carries no gradient; log it anyway.
    aux_value = float(np.mean([aux_loss(m, hp.ratio)
                               for m in result.attention_matrices(batch)]))
    return nll, nll.item(), aux_value


def train(pairs: list[SentencePair], hp: HyperParams,
          progress=None) -> tuple[Model, list[LossBreakdown]]:
    """Train a fresh model on the corpus; fully deterministic given hp.seed.

    ``progress`` is an optional callable invoked as progress(epoch, breakdown)
    after every epoch. Returns the model and the per-epoch loss log.
    """
    hp.validate()
    if not pairs:
        raise DataError("cannot train on an empty corpus")
    src_vocab, tgt_vocab = build_vocabularies(pairs)
    model = Model.create(hp, src_vocab, tgt_vocab)
    encoded = encode_pairs(pairs, src_vocab, tgt_vocab)
    log = train_model(model, encoded, progress)
    return model, log


def train_model(model: Model, encoded: list[EncodedPair],
                progress=None) -> list[LossBreakdown]:
    """Run the epoch loop on an existing model, updating it in place."""
    hp = model.hp
    dropout_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([hp.seed, 1])))
    optimizer = Adam(model.params, hp.learning_rate)
    log = []
    for epoch in range(1, hp.epochs + 1):
        lam = lambda_aux(epoch, hp.wait, hp.epochs) if hp.loss_mode != "base" else 0.0
        nll_sum = 0.0
        aux_sum = 0.0
        token_count = 0
        sentence_count = 0
        for batch_no, batch in enumerate(epoch_batches(encoded, hp.batch_size, hp.seed, epoch)):
            result = forward_teacher_forced(batch, model, training=True, rng=dropout_rng)
            try:
                total, nll_value, aux_value = _batch_losses(result, batch, hp, lam)
                model.params.zero_grads()
                ad.backward(total)
                optimizer.step()
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {batch_no}: {exc}") from None
            tokens = int(batch.target_mask.sum())
            nll_sum += nll_value * tokens
            token_count += tokens
            aux_sum += aux_value * batch.size
            sentence_count += batch.size
        nll_epoch = nll_sum / token_count
        aux_epoch = aux_sum / sentence_count
        breakdown = LossBreakdown(nll_epoch, aux_epoch, lam, nll_epoch + lam * aux_epoch)
        log.append(breakdown)
        if progress is not None:
            progress(epoch, breakdown)
    return log


def write_loss_log(log: list[LossBreakdown], path: str, header: str | None = None) -> None:
    """Tab-separated loss log: epoch, nll, aux, lambda, total."""
    with open(path, "w", encoding="utf-8") as handle:
        if header:
            handle.write(f"# {header}\n")
        handle.write("epoch\tnll\taux\tlambda\ttotal\n")
        for epoch, row in enumerate(log, start=1):
            handle.write(f"{epoch}\t{row.nll:.6f}\t{row.aux:.6f}\t"
                         f"{row.lambda_aux:.6f}\t{row.total:.6f}\n")

"""Attentional encoder-decoder for word-to-character alignment.

Bidirectional GRU encoder over source words, MLP attention with optional
temperature and word-length bias, and a GRU decoder that generates first:
the distribution for step i is computed from s_{i-1} before the state is
updated with the ground-truth current unit (teacher forcing throughout).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .corpus import Batch, Vocabulary
from .errors import ConfigError, DataError, GraphError

ATTENTION_MODES = ("plain", "length_bias")
LOSS_MODES = ("base", "aux", "aux_ratio")

MODEL_FORMAT = "attnseg-model"
MODEL_VERSION = 1


@dataclass
class HyperParams:
    embedding_dim: int = 64
    encoder_hidden: int = 64
    decoder_hidden: int = 64
    attention_hidden: int = 64
    dropout_rate: float = 0.5
    temperature: float = 1.0
    attention_mode: str = "plain"
    epochs: int = 800
    wait: int = 200
    batch_size: int = 64
    learning_rate: float = 0.001
    loss_mode: str = "base"
    ratio: float = 1.0
    ratio_include_eos: bool = False
    seed: int = 0

    def validate(self) -> None:
        dims = (self.embedding_dim, self.encoder_hidden, self.decoder_hidden,
                self.attention_hidden)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be >= 1, got {dims}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if not 0 <= self.wait <= self.epochs:
            raise ConfigError(
                f"wait must be in [0, epochs], got wait={self.wait} epochs={self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.ratio <= 0:
            raise ConfigError(f"ratio must be > 0, got {self.ratio}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


class GRUCell:
    """Update/reset/candidate gates over row-vector states.

    h' = (1 - z) * n + z * h with n = tanh(W_n x + r * (U_n h) + b_n).
    """

    def __init__(self, store: ParameterStore, prefix: str):
        self.w_z = store[f"{prefix}.W_z"]
        self.u_z = store[f"{prefix}.U_z"]
        self.b_z = store[f"{prefix}.b_z"]
        self.w_r = store[f"{prefix}.W_r"]
        self.u_r = store[f"{prefix}.U_r"]
        self.b_r = store[f"{prefix}.b_r"]
        self.w_n = store[f"{prefix}.W_n"]
        self.u_n = store[f"{prefix}.U_n"]
        self.b_n = store[f"{prefix}.b_n"]

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        z = ad.sigmoid(x @ self.w_z + h @ self.u_z + self.b_z)
        r = ad.sigmoid(x @ self.w_r + h @ self.u_r + self.b_r)
        n = ad.tanh(x @ self.w_n + r * (h @ self.u_n) + self.b_n)
        return (1.0 - z) * n + z * h


def _init_gru(store: ParameterStore, prefix: str, input_dim: int, hidden: int,
              rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(hidden)
    for gate in ("z", "r", "n"):
        store.add(f"{prefix}.W_{gate}", rng.uniform(-bound, bound, (input_dim, hidden)))
        store.add(f"{prefix}.U_{gate}", rng.uniform(-bound, bound, (hidden, hidden)))
        store.add(f"{prefix}.b_{gate}", np.zeros((1, hidden)))


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


def init_parameters(hp: HyperParams, src_vocab_size: int, tgt_vocab_size: int,
                    seed: int) -> ParameterStore:
    """Fresh parameters: Glorot for linear layers, zero biases, N(0, 0.1)
    embeddings, and uniform +/-1/sqrt(hidden) GRU matrices."""
    hp.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    store = ParameterStore()
    e, h_enc, h_dec, a = (hp.embedding_dim, hp.encoder_hidden,
                          hp.decoder_hidden, hp.attention_hidden)
    context_dim = 2 * h_enc

    store.add("src_embed", rng.normal(0.0, 0.1, (src_vocab_size, e)))
    store.add("tgt_embed", rng.normal(0.0, 0.1, (tgt_vocab_size, e)))
    _init_gru(store, "enc_fwd", e, h_enc, rng)
    _init_gru(store, "enc_bwd", e, h_enc, rng)
    store.add("bridge.W", glorot(rng, h_enc, h_dec))
    store.add("bridge.b", np.zeros((1, h_dec)))
    _init_gru(store, "dec", e + context_dim, h_dec, rng)
    store.add("attn.W", glorot(rng, h_dec, a))
    store.add("attn.U", glorot(rng, context_dim, a))
    store.add("attn.v", glorot(rng, a, 1))
    store.add("out.W1", glorot(rng, e + h_dec + context_dim, h_dec))
    store.add("out.b1", np.zeros((1, h_dec)))
    store.add("out.W2", glorot(rng, h_dec, tgt_vocab_size))
    store.add("out.b2", np.zeros((1, tgt_vocab_size)))
    return store


@dataclass
class Model:
    hp: HyperParams
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    params: ParameterStore

    @classmethod
    def create(cls, hp: HyperParams, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> "Model":
        params = init_parameters(hp, len(src_vocab), len(tgt_vocab), hp.seed)
        return cls(hp, src_vocab, tgt_vocab, params)

    def save(self, path: str) -> None:
        write_model(self, path)

    @classmethod
    def load(cls, path: str) -> "Model":
        return read_model(path)


@dataclass
class EncoderStates:
    """Per-position concatenated forward/backward states plus attention projections."""

    states: list[Tensor]        # J tensors of shape B x 2H
    attn_proj: list[Tensor]     # J tensors of shape B x A (U_a h_j)
    source_mask: np.ndarray     # B x J
    bwd_first: Tensor           # B x H, backward state after position 1


def _gated_step(cell: GRUCell, x: Tensor, h: Tensor, mask_col: np.ndarray) -> Tensor:
    """GRU step that freezes the state at padded positions."""
    new_h = cell.step(x, h)
    if mask_col.min() == 1.0:
        return new_h
    keep = ad.constant(mask_col)
    return keep * new_h + ad.constant(1.0 - mask_col) * h


def encode(batch: Batch, model: Model, training: bool = False,
           rng: np.random.Generator | None = None) -> EncoderStates:
    """Run the bidirectional encoder; h_j concatenates both directions."""
    hp = model.hp
    params = model.params
    b, j_max = batch.source.shape
    embeddings = []
    for j in range(j_max):
        emb = ad.gather_rows(params["src_embed"], batch.source[:, j])
        if training and hp.dropout_rate > 0.0:
            emb = ad.dropout(emb, hp.dropout_rate, rng)
        embeddings.append(emb)

    zero = ad.constant(np.zeros((b, hp.encoder_hidden)))
    fwd_cell = GRUCell(params, "enc_fwd")
    bwd_cell = GRUCell(params, "enc_bwd")

    fwd_states = []
    h = zero
    for j in range(j_max):
        h = _gated_step(fwd_cell, embeddings[j], h, batch.source_mask[:, j:j + 1])
        fwd_states.append(h)

    bwd_states: list[Tensor | None] = [None] * j_max
    h = zero
    for j in range(j_max - 1, -1, -1):
        h = _gated_step(bwd_cell, embeddings[j], h, batch.source_mask[:, j:j + 1])
        bwd_states[j] = h

    states = [ad.concat_cols([fwd_states[j], bwd_states[j]]) for j in range(j_max)]
    attn_proj = [states[j] @ params["attn.U"] for j in range(j_max)]
    return EncoderStates(states, attn_proj, batch.source_mask, bwd_states[0])


def length_bias_renormalize(alpha: Tensor, word_lengths: np.ndarray) -> Tensor:
    """Reweight attention by source-word character length and renormalize.

    alpha~_ij = |w_j| alpha_ij / sum_k |w_k| alpha_ik. Keeps rows summing to 1
    and preserves exact zeros (padded columns have length 0).
    """
    lengths = ad.constant(word_lengths)
    weighted = alpha * lengths
    denom = ad.rowwise_dot(alpha, lengths)
    return weighted / denom


def attention_weights(energies: Tensor, source_mask: np.ndarray, temperature: float,
                      word_lengths: np.ndarray | None = None) -> Tensor:
    """Masked softmax of energies / T, optionally with the word-length bias."""
    scaled = ad.scale(energies, 1.0 / temperature) if temperature != 1.0 else energies
    alpha = ad.masked_softmax(scaled, source_mask)
    if word_lengths is not None:
        alpha = length_bias_renormalize(alpha, word_lengths)
    return alpha


def attend(s_prev: Tensor, enc: EncoderStates, model: Model,
           word_lengths: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """One attention step: returns (row used for the context, context vector).

    In length-bias mode the biased row is both used for the context and
    reported, so the stored matrices are the renormalized ones.
    """
    hp = model.hp
    params = model.params
    query = s_prev @ params["attn.W"]
    v = params["attn.v"]
    cols = [ad.tanh(query + proj) @ v for proj in enc.attn_proj]
    energies = ad.concat_cols(cols)
    biased = word_lengths if hp.attention_mode == "length_bias" else None
    alpha = attention_weights(energies, enc.source_mask, hp.temperature, biased)

    context = None
    for j, h_j in enumerate(enc.states):
        term = ad.slice_cols(alpha, j, j + 1) * h_j
        context = term if context is None else context + term
    return alpha, context


def decode_step(prev_embed: Tensor, cur_embed: Tensor, s_prev: Tensor,
                context: Tensor, model: Model, cell: GRUCell) -> tuple[Tensor, Tensor]:
    """Generate first: logits from (prev unit, old state, context), then the
    state update from the ground-truth current unit."""
    params = model.params
    hidden = ad.tanh(ad.concat_cols([prev_embed, s_prev, context]) @ params["out.W1"]
                     + params["out.b1"])
    logits = hidden @ params["out.W2"] + params["out.b2"]
    s_new = cell.step(ad.concat_cols([cur_embed, context]), s_prev)
    return logits, s_new


@dataclass
class ForwardResult:
    """Per-step logits and the attention rows actually used at each step."""

    step_logits: list[Tensor]
    step_alpha: list[Tensor]

    def attention_matrices(self, batch: Batch) -> list[np.ndarray]:
        """Crop the batched rows into one I x J matrix per sentence."""
        matrices = []
        for row in range(batch.size):
            i_len = int(batch.target_lengths[row])
            j_len = int(batch.source_lengths[row])
            m = np.empty((i_len, j_len))
            for i in range(i_len):
                m[i] = self.step_alpha[i].value[row, :j_len]
            matrices.append(m)
        return matrices


def forward_teacher_forced(batch: Batch, model: Model, training: bool = False,
                           rng: np.random.Generator | None = None) -> ForwardResult:
    """Force-decode a batch, collecting logits and attention rows per step.

    Step i predicts target unit i (EOS included) from the BOS-shifted history;
    the state is initialized from the last backward encoder state through a
    tanh bridge.
    """
    if training and model.hp.dropout_rate > 0.0 and rng is None:
        raise GraphError("training forward pass needs an RNG for dropout")
    hp = model.hp
    params = model.params
    enc = encode(batch, model, training, rng)
    steps = batch.target_mask.shape[1]

    embeddings = []
    for i in range(steps + 1):
        emb = ad.gather_rows(params["tgt_embed"], batch.target[:, i])
        if training and hp.dropout_rate > 0.0:
            emb = ad.dropout(emb, hp.dropout_rate, rng)
        embeddings.append(emb)

    s = ad.tanh(enc.bwd_first @ params["bridge.W"] + params["bridge.b"])
    cell = GRUCell(params, "dec")
    word_lengths = batch.word_lengths if hp.attention_mode == "length_bias" else None

    step_logits = []
    step_alpha = []
    for i in range(steps):
        alpha, context = attend(s, enc, model, word_lengths)
        logits, s = decode_step(embeddings[i], embeddings[i + 1], s, context, model, cell)
        step_logits.append(logits)
        step_alpha.append(alpha)
    return ForwardResult(step_logits, step_alpha)


# ---------------------------------------------------------------------------
# Model file format: plain text, exact float64 round trip
# ---------------------------------------------------------------------------

def _hyper_items(hp: HyperParams) -> list[tuple[str, str]]:
    return [(f.name, str(getattr(hp, f.name))) for f in fields(HyperParams)]


def write_model(model: Model, path: str) -> None:
    buf = io.StringIO()
    buf.write(f"{MODEL_FORMAT} {MODEL_VERSION}\n")
    for key, value in _hyper_items(model.hp):
        buf.write(f"hyper {key} {value}\n")
    for tag, vocab in (("source", model.src_vocab), ("target", model.tgt_vocab)):
        symbols = vocab.non_reserved()
        buf.write(f"vocab {tag} {len(symbols)}\n")
        for sym in symbols:
            buf.write(sym + "\n")
    for name, tensor in model.params.items():
        rows, cols = tensor.value.shape
        buf.write(f"param {name} {rows} {cols}\n")
        for row in tensor.value:
            buf.write(" ".join(repr(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(buf.getvalue())


def _parse_hyper(items: dict[str, str]) -> HyperParams:
    kwargs = {}
    for f in fields(HyperParams):
        if f.name not in items:
            raise DataError(f"model file missing hyperparameter '{f.name}'")
        raw = items[f.name]
        if f.type == "int":
            kwargs[f.name] = int(raw)
        elif f.type == "float":
            kwargs[f.name] = float(raw)
        elif f.type == "bool":
            kwargs[f.name] = raw == "True"
        else:
            kwargs[f.name] = raw
    return HyperParams(**kwargs)


def read_model(path: str) -> Model:
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    pos = 0

    def next_line() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise DataError(f"{path}: truncated model file")
        line = lines[pos]
        pos += 1
        return line

    header = next_line().split()
    if len(header) != 2 or header[0] != MODEL_FORMAT or int(header[1]) != MODEL_VERSION:
        raise DataError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} file")

    hyper_items: dict[str, str] = {}
    vocabs: dict[str, Vocabulary] = {}
    arrays: dict[str, np.ndarray] = {}
    while pos < len(lines):
        line = lines[pos]
        if not line:
            pos += 1
            continue
        kind = line.split(None, 1)[0]
        if kind == "hyper":
            _, key, value = next_line().split(None, 2)
            hyper_items[key] = value
        elif kind == "vocab":
            _, tag, count = next_line().split()
            vocabs[tag] = Vocabulary([next_line() for _ in range(int(count))])
        elif kind == "param":
            _, name, rows, cols = next_line().split()
            rows, cols = int(rows), int(cols)
            data = np.empty((rows, cols))
            for r in range(rows):
                values = next_line().split()
                if len(values) != cols:
                    raise DataError(f"{path}: bad row width in parameter '{name}'")
                data[r] = [float(v) for v in values]
            arrays[name] = data
        else:
            raise DataError(f"{path}: unexpected line {pos + 1}: {line!r}")

    hp = _parse_hyper(hyper_items)
    if "source" not in vocabs or "target" not in vocabs:
        raise DataError(f"{path}: missing vocabulary blocks")
    store = ParameterStore()
    for name, data in arrays.items():
        store.add(name, data)
    expected = init_parameters(hp, len(vocabs["source"]), len(vocabs["target"]), hp.seed)
    if store.names() != expected.names():
        raise DataError(f"{path}: parameter blocks do not match the architecture")
    for name, tensor in expected.items():
        if store[name].value.shape != tensor.value.shape:
            raise DataError(f"{path}: parameter '{name}' has the wrong shape")
    return Model(hp, vocabs["source"], vocabs["target"], store)

"""Decoder-only autoregressive transformer over grammar strings.

Pre-norm blocks, GELU feed-forward at 4x width, learned position
embeddings, affine-free layer norms and no bias vectors anywhere: every
parameter is a Gaussian-initialized weight matrix, so init_scale 0 gives
the exactly-uniform model (all logits zero). Sequences are scored
teacher-forced as [BOS] + tokens -> tokens + [EOS], each sequence's NLL
averaged over its own length, so strings of different lengths are
comparable and batch packing never changes a string's loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, RunError

__all__ = [
    "Vocabulary",
    "ModelConfig",
    "ModelParameters",
    "init_params",
    "forward",
    "sequence_loss",
    "sequence_accuracy",
    "batch_losses",
    "batch_eval",
    "loss_gradient",
    "encode_batch",
    "save_params",
    "load_params",
]

EVAL_BATCH = 32


@dataclass(frozen=True)
class Vocabulary:
    """Terminals in sorted order, then BOS/EOS/PAD. Ids are dense 0..V-1."""

    terminals: tuple[str, ...]

    @staticmethod
    def from_terminals(terminals) -> "Vocabulary":
        return Vocabulary(terminals=tuple(sorted(set(terminals))))

    @property
    def size(self) -> int:
        return len(self.terminals) + 3

    @property
    def bos_id(self) -> int:
        return len(self.terminals)

    @property
    def eos_id(self) -> int:
        return len(self.terminals) + 1

    @property
    def pad_id(self) -> int:
        return len(self.terminals) + 2

    def encode(self, tokens) -> np.ndarray:
        try:
            table = self._table
        except AttributeError:
            table = {t: i for i, t in enumerate(self.terminals)}
            object.__setattr__(self, "_table", table)
        try:
            return np.array([table[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise ConfigError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> tuple[str, ...]:
        out = []
        for i in ids:
            if not 0 <= int(i) < len(self.terminals):
                raise ConfigError(f"id {int(i)} is not a terminal token id")
            out.append(self.terminals[int(i)])
        return tuple(out)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    context_len: int = 128
    init_scale: float = 0.02
    float_width: int = 64  # only 64-bit floats are supported

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover at least one terminal + specials")
        if min(self.d_model, self.n_layers, self.n_heads, self.context_len) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.init_scale < 0:
            raise ConfigError("init_scale must be >= 0")
        if self.float_width != 64:
            raise ConfigError("only float_width=64 is supported")


@dataclass
class ModelParameters:
    """Config plus named weight tensors; dict order is declaration order."""

    config: ModelConfig
    tensors: dict[str, Tensor]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def _param_shapes(cfg: ModelConfig):
    """Canonical (name, shape) declaration order for init and checkpoints."""
    d, v = cfg.d_model, cfg.vocab_size
    yield "tok_emb", (v, d)
    yield "pos_emb", (cfg.context_len, d)
    for i in range(cfg.n_layers):
        for w in ("wq", "wk", "wv", "wo"):
            yield f"layer{i}.{w}", (d, d)
        yield f"layer{i}.w1", (d, 4 * d)
        yield f"layer{i}.w2", (4 * d, d)
    yield "out_proj", (d, v)


def init_params(cfg: ModelConfig, seed) -> ModelParameters:
    """Gaussian(0, init_scale^2) weights, drawn in declaration order."""
    rng = np.random.default_rng(seed)
    tensors = {
        name: Tensor(cfg.init_scale * rng.standard_normal(shape))
        for name, shape in _param_shapes(cfg)
    }
    return ModelParameters(config=cfg, tensors=tensors)


def _check_finite_params(params: ModelParameters) -> None:
    for name, t in params.tensors.items():
        if not np.all(np.isfinite(t.data)):
            raise RunError(f"non-finite parameter detected in {name}")


# ---------------------------------------------------------------------------
# forward pass


def _split_heads(x: Tensor, w: Tensor, n_heads: int) -> Tensor:
    B, T, d = x.shape
    proj = ad.matmul(x, w)
    return ad.transpose(
        ad.reshape(proj, (B, T, n_heads, d // n_heads)), (0, 2, 1, 3)
    )


def _logits(params: ModelParameters, ids: np.ndarray) -> Tensor:
    cfg = params.config
    t = params.tensors
    B, T = ids.shape
    if T > cfg.context_len:
        raise ConfigError(f"sequence length {T} exceeds context_len {cfg.context_len}")
    head_dim = cfg.d_model // cfg.n_heads
    # additive causal mask; exp(-1e30) underflows to exactly 0 in float64
    causal = Tensor(np.triu(np.full((T, T), -1e30), k=1))

    x = ad.add(ad.embed(t["tok_emb"], ids), ad.take_rows(t["pos_emb"], T))
    for i in range(cfg.n_layers):
        xn = ad.layer_norm(x)
        q = _split_heads(xn, t[f"layer{i}.wq"], cfg.n_heads)
        k = _split_heads(xn, t[f"layer{i}.wk"], cfg.n_heads)
        v = _split_heads(xn, t[f"layer{i}.wv"], cfg.n_heads)
        scores = ad.add(
            ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim)),
            causal,
        )
        ctx = ad.matmul(ad.softmax(scores), v)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, T, cfg.d_model))
        x = ad.add(x, ad.matmul(ctx, t[f"layer{i}.wo"]))
        xn = ad.layer_norm(x)
        x = ad.add(x, ad.matmul(ad.gelu(ad.matmul(xn, t[f"layer{i}.w1"])), t[f"layer{i}.w2"]))
    return ad.matmul(ad.layer_norm(x), t["out_proj"])


def forward(params: ModelParameters, prefix) -> np.ndarray:
    """Next-token probability distribution after the given id prefix."""
    cfg = params.config
    ids = np.asarray(list(prefix), dtype=np.int64)
    if not 1 <= ids.shape[0] <= cfg.context_len:
        raise ConfigError(
            f"prefix length must be in [1, {cfg.context_len}], got {ids.shape[0]}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ConfigError("prefix contains ids outside the vocabulary")
    _check_finite_params(params)
    logits = _logits(params, ids[None, :]).data[0, -1]
    z = np.exp(logits - logits.max())
    return z / z.sum()


# ---------------------------------------------------------------------------
# losses and accuracy


def encode_batch(vocab: Vocabulary, sequences, context_len: int):
    """Teacher-forcing arrays: inputs [BOS]+tokens, targets tokens+[EOS],
    right-padded with PAD; mask marks real target positions."""
    sequences = [tuple(s) for s in sequences]
    if not sequences:
        raise ConfigError("empty batch")
    for s in sequences:
        if len(s) + 2 > context_len:
            raise ConfigError(
                f"string of length {len(s)} needs context_len >= {len(s) + 2}"
            )
    B = len(sequences)
    T = max(len(s) for s in sequences) + 1
    ids_in = np.full((B, T), vocab.pad_id, dtype=np.int64)
    targets = np.full((B, T), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((B, T))
    for b, s in enumerate(sequences):
        enc = vocab.encode(s)
        L = len(s) + 1
        ids_in[b, 0] = vocab.bos_id
        ids_in[b, 1:L] = enc
        targets[b, : L - 1] = enc
        targets[b, L - 1] = vocab.eos_id
        mask[b, :L] = 1.0
    return ids_in, targets, mask


def _per_sequence_nll(logits_data: np.ndarray, targets, mask) -> np.ndarray:
    m = logits_data.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits_data - m).sum(axis=-1))
    picked = np.take_along_axis(logits_data, targets[..., None], axis=-1)[..., 0]
    nll = lse - picked
    return (nll * mask).sum(axis=-1) / mask.sum(axis=-1)


def batch_losses(params: ModelParameters, vocab: Vocabulary, sequences) -> np.ndarray:
    """Per-sequence mean NLL, evaluated in deterministic fixed-size chunks.
    Rows are independent end to end, so chunking cannot change values."""
    sequences = [tuple(s) for s in sequences]
    out = np.empty(len(sequences))
    for lo in range(0, len(sequences), EVAL_BATCH):
        chunk = sequences[lo : lo + EVAL_BATCH]
        ids_in, targets, mask = encode_batch(vocab, chunk, params.config.context_len)
        logits = _logits(params, ids_in)
        out[lo : lo + len(chunk)] = _per_sequence_nll(logits.data, targets, mask)
    return out


def batch_eval(params: ModelParameters, vocab: Vocabulary, sequences):
    """Per-sequence (mean NLL, argmax accuracy) in one chunked pass.
    Same chunking as batch_losses; accuracy counts EOS like sequence_accuracy."""
    sequences = [tuple(s) for s in sequences]
    losses = np.empty(len(sequences))
    accs = np.empty(len(sequences))
    for lo in range(0, len(sequences), EVAL_BATCH):
        chunk = sequences[lo : lo + EVAL_BATCH]
        ids_in, targets, mask = encode_batch(vocab, chunk, params.config.context_len)
        logits = _logits(params, ids_in).data
        losses[lo : lo + len(chunk)] = _per_sequence_nll(logits, targets, mask)
        pred = np.argmax(logits, axis=-1)
        hits = (pred == targets) * mask
        accs[lo : lo + len(chunk)] = hits.sum(axis=-1) / mask.sum(axis=-1)
    return losses, accs


def sequence_loss(params: ModelParameters, vocab: Vocabulary, tokens) -> float:
    """Mean NLL (nats/token) of tokens + EOS under teacher forcing."""
    ids_in, targets, mask = encode_batch(vocab, [tokens], params.config.context_len)
    logits = _logits(params, ids_in)
    return float(_per_sequence_nll(logits.data, targets, mask)[0])


def sequence_accuracy(params: ModelParameters, vocab: Vocabulary, tokens) -> float:
    """Fraction of positions (EOS included) where the argmax next token is
    the ground truth; np.argmax already breaks ties toward the lowest id."""
    ids_in, targets, mask = encode_batch(vocab, [tokens], params.config.context_len)
    logits = _logits(params, ids_in).data[0]
    pred = np.argmax(logits, axis=-1)
    live = mask[0] > 0
    return float((pred[live] == targets[0][live]).mean())


def loss_gradient(params: ModelParameters, vocab: Vocabulary, batch) -> dict[str, np.ndarray]:
    """Gradient of the mean per-sequence loss over batch, for every weight."""
    if not batch:
        raise ConfigError("loss_gradient needs a nonempty batch")
    _check_finite_params(params)
    params.zero_grad()
    ids_in, targets, mask = encode_batch(vocab, batch, params.config.context_len)
    loss = ad.mean_nll(_logits(params, ids_in), targets, mask)
    if not np.isfinite(loss.data):
        raise RunError("non-finite loss in forward pass")
    loss.backward()
    grads = {}
    for name, t in params.tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise RunError(f"non-finite gradient in {name}")
        grads[name] = g
    return grads


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_params(params: ModelParameters, path) -> None:
    meta = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": asdict(params.config)}
    )
    arrays = {name: t.data for name, t in params.tensors.items()}
    np.savez(path, __meta__=np.array(meta), **arrays)


def load_params(path) -> ModelParameters:
    with np.load(path) as blob:
        try:
            meta = json.loads(str(blob["__meta__"]))
            version = meta["version"]
            cfg = ModelConfig(**meta["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed checkpoint: {exc}") from None
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        tensors = {}
        for name, shape in _param_shapes(cfg):
            if name not in blob:
                raise ConfigError(f"checkpoint missing parameter {name}")
            arr = np.asarray(blob[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(
                    f"checkpoint parameter {name} has shape {arr.shape}, "
                    f"expected {shape}"
                )
            tensors[name] = Tensor(arr)
    return ModelParameters(config=cfg, tensors=tensors)

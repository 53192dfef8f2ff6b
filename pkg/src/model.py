"""Language-aware transformer encoder with a language-conditioned MLM head."""

import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError, ModelInputError
from .lexicon import LangId
from .tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    dropout,
    embedding_gather,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    select,
    softmax,
    transpose,
)
from .tokenizer import CLS, MASK, PAD, SEP, Vocab, encode

logger = logging.getLogger(__name__)

INIT_STD = 0.02
ATTENTION_MASK_VALUE = -1e9
CHECKPOINT_MAGIC = b"DMLM"
CHECKPOINT_VERSION = 1
EMBED_CHUNK = 32
NON_CONTENT_IDS = (PAD, CLS, SEP, MASK)


class ModelParams:
    """Named parameter tensors in a fixed order, plus the config they fit."""

    def __init__(self, cfg: ModelConfig, tensors: Dict[str, Tensor]) -> None:
        self.cfg = cfg
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self) -> List[Tensor]:
        return list(self.tensors.values())

    @property
    def names(self) -> List[str]:
        return list(self.tensors)

    @property
    def element_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.cfg,
            {
                name: Tensor(t.data.copy(), requires_grad=True, name=name)
                for name, t in self.tensors.items()
            },
        )


def param_shapes(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Every parameter name and shape, in manifest order."""
    V, H, F, E = cfg.vocab_size, cfg.hidden, cfg.ffn_dim, cfg.emb_dim
    shapes = [
        ("embeddings.token", (V, H)),
        ("embeddings.position", (cfg.max_positions, H)),
        ("embeddings.segment", (2, H)),
        ("embeddings.language", (cfg.lang_count, E)),
        ("embeddings.ln.gain", (H,)),
        ("embeddings.ln.bias", (H,)),
    ]
    for i in range(cfg.layers):
        p = f"layers.{i}"
        shapes += [
            (f"{p}.attention.query.weight", (H, H)),
            (f"{p}.attention.query.bias", (H,)),
            (f"{p}.attention.key.weight", (H, H)),
            (f"{p}.attention.key.bias", (H,)),
            (f"{p}.attention.value.weight", (H, H)),
            (f"{p}.attention.value.bias", (H,)),
            (f"{p}.attention.output.weight", (H, H)),
            (f"{p}.attention.output.bias", (H,)),
            (f"{p}.attention.ln.gain", (H,)),
            (f"{p}.attention.ln.bias", (H,)),
            (f"{p}.ffn.in.weight", (H, F)),
            (f"{p}.ffn.in.bias", (F,)),
            (f"{p}.ffn.out.weight", (F, H)),
            (f"{p}.ffn.out.bias", (H,)),
            (f"{p}.ffn.ln.gain", (H,)),
            (f"{p}.ffn.ln.bias", (H,)),
        ]
    head_in = H + E if cfg.conditioning_enabled else H
    shapes += [
        ("head.dense.weight", (head_in, H)),
        ("head.dense.bias", (H,)),
        ("head.ln.gain", (H,)),
        ("head.ln.bias", (H,)),
    ]
    if not cfg.tie_output_embeddings:
        shapes.append(("head.output.weight", (H, V)))
    shapes.append(("head.output.bias", (V,)))
    return shapes


def truncated_normal(
    rng: np.random.Generator, shape: Tuple[int, ...], std: float = INIT_STD
) -> np.ndarray:
    """Normal(0, std) with draws beyond 2·std resampled."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    if cfg.vocab_size < len(NON_CONTENT_IDS) + 1 or cfg.lang_count < 1:
        raise ModelInputError(
            f"model needs vocab_size and lang_count resolved, got "
            f"{cfg.vocab_size} and {cfg.lang_count}"
        )
    dtype = np.dtype(cfg.dtype)
    tensors = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        else:
            data = truncated_normal(rng, shape)
        tensors[name] = Tensor(data, requires_grad=True, dtype=dtype, name=name)
    params = ModelParams(cfg, tensors)
    logger.info(
        "Initialized model: %d layers, hidden %d, %d parameters",
        cfg.layers,
        cfg.hidden,
        params.element_count,
    )
    return params


@dataclass
class Batch:
    """Padded, validated model input."""

    token_ids: np.ndarray
    lang_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    masked_rows: np.ndarray
    label_ids: np.ndarray
    label_lang_ids: np.ndarray
    xling_words: int = 0
    masked_words: int = 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.token_ids.shape


def collate(examples: Sequence, cfg: ModelConfig) -> Batch:
    """Pad examples to one length and flatten masked positions to rows of B·S."""
    if not examples:
        raise ModelInputError("empty batch")
    seq_len = max(len(ex.token_ids) for ex in examples)
    if seq_len > cfg.max_positions:
        raise ModelInputError(
            f"sequence length {seq_len} exceeds model.max_positions {cfg.max_positions}"
        )
    B = len(examples)
    tokens = np.full((B, seq_len), PAD, dtype=np.int64)
    langs = np.zeros((B, seq_len), dtype=np.int64)
    segments = np.zeros((B, seq_len), dtype=np.int64)
    mask = np.zeros((B, seq_len), dtype=bool)
    rows, labels, label_langs = [], [], []
    xling = masked = 0
    for b, ex in enumerate(examples):
        n = len(ex.token_ids)
        tokens[b, :n] = ex.token_ids
        langs[b, :n] = ex.lang_ids
        segments[b, :n] = ex.segment_ids
        mask[b, :n] = True
        rows.extend(b * seq_len + p for p in ex.masked_positions)
        labels.extend(ex.label_ids)
        label_langs.extend(ex.label_lang_ids)
        xling += getattr(ex, "xling_word_count", 0)
        masked += getattr(ex, "masked_word_count", 0)
    batch = Batch(
        tokens,
        langs,
        segments,
        mask,
        np.asarray(rows, dtype=np.int64),
        np.asarray(labels, dtype=np.int64),
        np.asarray(label_langs, dtype=np.int64),
        xling,
        masked,
    )
    check_batch(batch, cfg)
    return batch


def _check_range(name: str, ids: np.ndarray, limit: int) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= limit):
        bad = ids[(ids < 0) | (ids >= limit)][0]
        raise ModelInputError(f"{name} {int(bad)} out of range 0..{limit - 1}")


def check_batch(batch: Batch, cfg: ModelConfig) -> None:
    _check_range("token id", batch.token_ids, cfg.vocab_size)
    _check_range("language id", batch.lang_ids, cfg.lang_count)
    _check_range("segment id", batch.segment_ids, 2)
    _check_range("label id", batch.label_ids, cfg.vocab_size)
    _check_range("label language id", batch.label_lang_ids, cfg.lang_count)
    if batch.token_ids.shape[1] > cfg.max_positions:
        raise ModelInputError(
            f"sequence length {batch.token_ids.shape[1]} exceeds model.max_positions "
            f"{cfg.max_positions}"
        )
    if not (
        len(batch.masked_rows) == len(batch.label_ids) == len(batch.label_lang_ids)
    ):
        raise ModelInputError("masked positions and labels differ in length")
    flat_tokens = batch.token_ids.reshape(-1)
    flat_mask = batch.attention_mask.reshape(-1)
    _check_range("masked position", batch.masked_rows, flat_tokens.size)
    for row in batch.masked_rows:
        if flat_tokens[row] == PAD or not flat_mask[row]:
            b, pos = divmod(int(row), batch.token_ids.shape[1])
            raise ModelInputError(f"[PAD] at masked position {pos} of example {b}")


@dataclass
class ModelOutput:
    hidden_states: List[Tensor]
    logits: Tensor | None
    attentions: List[np.ndarray] = field(default_factory=list)


def _dense(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return add(matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _heads(x: Tensor, B: int, S: int, A: int, d: int) -> Tensor:
    return transpose(reshape(x, (B, S, A, d)), (0, 2, 1, 3))


def _attention(
    x: Tensor,
    mask_add: Tensor,
    params: ModelParams,
    prefix: str,
    rng: np.random.Generator | None,
    attentions: List[np.ndarray],
) -> Tensor:
    cfg = params.cfg
    B, S, H = x.shape
    A = cfg.heads
    d = H // A
    q = _heads(_dense(x, params, f"{prefix}.query"), B, S, A, d)
    k = _heads(_dense(x, params, f"{prefix}.key"), B, S, A, d)
    v = _heads(_dense(x, params, f"{prefix}.value"), B, S, A, d)
    scores = add(mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d)), mask_add)
    probs = softmax(scores)
    attentions.append(probs.data)
    context = matmul(dropout(probs, cfg.dropout, rng), v)
    merged = reshape(transpose(context, (0, 2, 1, 3)), (B, S, H))
    out = dropout(_dense(merged, params, f"{prefix}.output"), cfg.dropout, rng)
    return layer_norm(
        add(x, out), params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"]
    )


def _feed_forward(
    x: Tensor, params: ModelParams, prefix: str, rng: np.random.Generator | None
) -> Tensor:
    cfg = params.cfg
    inner = gelu(_dense(x, params, f"{prefix}.in"))
    out = dropout(_dense(inner, params, f"{prefix}.out"), cfg.dropout, rng)
    return layer_norm(
        add(x, out), params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"]
    )


def _language_input(params: ModelParams, lang_ids: np.ndarray) -> Tensor:
    cfg = params.cfg
    lang = embedding_gather(params["embeddings.language"], lang_ids)
    if cfg.emb_dim == cfg.hidden:
        return lang
    # E < H: the language vector fills the leading E input dimensions
    pad = Tensor(
        np.zeros(lang_ids.shape + (cfg.hidden - cfg.emb_dim,)), dtype=lang.data.dtype
    )
    return concat([lang, pad])


def forward(
    batch: Batch,
    params: ModelParams,
    rng: np.random.Generator | None = None,
    with_head: bool = True,
) -> ModelOutput:
    """Encode a batch; logits cover the masked rows only.

    Dropout applies only when ``rng`` is given. ``hidden_states[0]`` is the
    normalized input embedding, ``hidden_states[i]`` the output of layer i.
    """
    cfg = params.cfg
    check_batch(batch, cfg)
    B, S = batch.shape
    positions = np.broadcast_to(np.arange(S), (B, S))
    x = embedding_gather(params["embeddings.token"], batch.token_ids)
    x = add(x, embedding_gather(params["embeddings.position"], positions))
    x = add(x, embedding_gather(params["embeddings.segment"], batch.segment_ids))
    x = add(x, _language_input(params, batch.lang_ids))
    x = layer_norm(x, params["embeddings.ln.gain"], params["embeddings.ln.bias"])
    x = dropout(x, cfg.dropout, rng)

    mask_add = Tensor(
        np.where(batch.attention_mask, 0.0, ATTENTION_MASK_VALUE)[:, None, None, :],
        dtype=x.data.dtype,
    )
    hidden = [x]
    attentions: List[np.ndarray] = []
    for i in range(cfg.layers):
        x = _attention(x, mask_add, params, f"layers.{i}.attention", rng, attentions)
        x = _feed_forward(x, params, f"layers.{i}.ffn", rng)
        hidden.append(x)

    logits = None
    if with_head and len(batch.masked_rows):
        logits = mlm_head(x, batch, params)
    return ModelOutput(hidden, logits, attentions)


def mlm_head(x: Tensor, batch: Batch, params: ModelParams) -> Tensor:
    cfg = params.cfg
    B, S, H = x.shape
    h = select(reshape(x, (B * S, H)), batch.masked_rows)
    if cfg.conditioning_enabled:
        lang = embedding_gather(params["embeddings.language"], batch.label_lang_ids)
        h = concat([h, lang])
    g = layer_norm(
        gelu(_dense(h, params, "head.dense")),
        params["head.ln.gain"],
        params["head.ln.bias"],
    )
    if cfg.tie_output_embeddings:
        out = matmul(g, transpose(params["embeddings.token"]))
    else:
        out = matmul(g, params["head.output.weight"])
    return add(out, params["head.output.bias"])


def mlm_loss(logits: Tensor, label_ids) -> Tensor:
    """Mean cross-entropy over masked positions."""
    return cross_entropy(logits, label_ids)


def _sentence_ids(text: str, lang: LangId, vocab: Vocab, max_positions: int):
    sent = encode(text, lang, vocab)
    ids = [CLS] + sent.piece_ids[: max_positions - 2] + [SEP]
    return ids


def embed_sentences(
    texts: Sequence[str],
    lang: LangId,
    params: ModelParams,
    vocab: Vocab,
    layers: Sequence[int] | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Mean-pooled content-token states, shape ``[len(layers), n, H]``.

    Sentences are embedded in fixed chunks, so results do not depend on
    ``workers``.
    """
    cfg = params.cfg
    layers = list(range(cfg.layers + 1)) if layers is None else list(layers)
    for layer in layers:
        if not 0 <= layer <= cfg.layers:
            raise ModelInputError(f"layer {layer} out of range 0..{cfg.layers}")
    encoded = [_sentence_ids(t, lang, vocab, cfg.max_positions) for t in texts]

    def embed_chunk(start: int) -> np.ndarray:
        chunk = encoded[start : start + EMBED_CHUNK]
        S = max(len(ids) for ids in chunk)
        tokens = np.full((len(chunk), S), PAD, dtype=np.int64)
        attention = np.zeros((len(chunk), S), dtype=bool)
        for b, ids in enumerate(chunk):
            tokens[b, : len(ids)] = ids
            attention[b, : len(ids)] = True
        batch = Batch(
            tokens,
            np.full(tokens.shape, lang.id, dtype=np.int64),
            np.zeros(tokens.shape, dtype=np.int64),
            attention,
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
        out = forward(batch, params, with_head=False)
        content = attention & ~np.isin(tokens, NON_CONTENT_IDS)
        counts = content.sum(axis=1, keepdims=True)
        if np.any(counts == 0):
            b = int(np.flatnonzero(counts[:, 0] == 0)[0])
            raise ModelInputError(f"sentence {start + b} has no content tokens to pool")
        weights = content[:, :, None].astype(out.hidden_states[0].data.dtype)
        return np.stack(
            [
                (out.hidden_states[layer].data * weights).sum(axis=1) / counts
                for layer in layers
            ]
        )

    starts = list(range(0, len(encoded), EMBED_CHUNK))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(embed_chunk, starts))
    if not chunks:
        return np.zeros((len(layers), 0, cfg.hidden))
    return np.concatenate(chunks, axis=1)


def embed_sentence(
    text: str, lang: LangId, layer: int, params: ModelParams, vocab: Vocab
) -> np.ndarray:
    """Mean of layer-``layer`` states over non-special, non-pad positions."""
    return embed_sentences([text], lang, params, vocab, layers=[layer])[0, 0]


def save_checkpoint(
    path: str,
    params: ModelParams,
    extra: dict | None = None,
    arrays: Dict[str, np.ndarray] | None = None,
) -> None:
    """Write magic, header length, JSON header, then little-endian f64 arrays.

    ``arrays`` carries extra named buffers (optimizer moments) after the
    parameters.
    """
    arrays = arrays or {}
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.cfg),
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for t in params.values():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)
    logger.debug("Saved checkpoint %s", path)


def _read_arrays(f, manifest: List[dict], path: str) -> Dict[str, np.ndarray]:
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = f.read(8 * count)
        if len(raw) != 8 * count:
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def load_checkpoint(path: str) -> Tuple[ModelParams, dict, Dict[str, np.ndarray]]:
    """Return ``(params, extra, arrays)`` from :func:`save_checkpoint` output."""
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a dict-mlm checkpoint")
        size = f.read(4)
        if len(size) != 4:
            raise CheckpointError(f"{path}: truncated header")
        (length,) = struct.unpack("<I", size)
        try:
            header = json.loads(f.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format_version {header.get('format_version')}"
            )
        cfg_data = dict(header["config"])
        cfg = ModelConfig(**cfg_data)
        expected = [(n, tuple(s)) for n, s in param_shapes(cfg)]
        found = [(p["name"], tuple(p["shape"])) for p in header["params"]]
        if expected != found:
            raise CheckpointError(f"{path}: parameter manifest does not match config")
        raw_params = _read_arrays(f, header["params"], path)
        arrays = _read_arrays(f, header.get("arrays", []), path)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after arrays")
    dtype = np.dtype(cfg.dtype)
    params = ModelParams(
        cfg,
        {
            name: Tensor(data, requires_grad=True, dtype=dtype, name=name)
            for name, data in raw_params.items()
        },
    )
    logger.debug("Loaded checkpoint %s (%d parameters)", path, params.element_count)
    return params, header.get("extra", {}), arrays

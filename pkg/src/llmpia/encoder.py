"""Per-utterance sequence embeddings from a precomputed store or a small trainable encoder."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from llmpia import autodiff as ad
from llmpia import checkpoint
from llmpia.corpus import Utterance
from llmpia.errors import BackendNotTrainable, DimensionMismatch, MissingEmbedding

PAD, MASK, UNK = "[PAD]", "[MASK]", "[UNK]"
RESERVED = (PAD, MASK, UNK)
ENCODER_MAGIC = b"TOYENC\x00\x01"


@dataclass(frozen=True)
class SequenceEmbedding:
    values: np.ndarray  # (l_seq, d_h)
    mask: np.ndarray  # (l_seq,) bool, True = real token

    def __post_init__(self):
        if self.values.ndim != 2 or self.mask.shape != (self.values.shape[0],):
            raise DimensionMismatch(
                f"values {self.values.shape} and mask {self.mask.shape} disagree")
        if not self.mask.any():
            raise ValueError("sequence embedding needs at least one real position")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sequence embedding contains non-finite values")


def pad_or_truncate(tokens: Sequence[str], l_seq: int) -> tuple[list[str], np.ndarray]:
    if l_seq < 1:
        raise ValueError("l_seq must be >= 1")
    kept = list(tokens[:l_seq])
    mask = np.zeros(l_seq, dtype=bool)
    mask[:len(kept)] = True
    return kept + [PAD] * (l_seq - len(kept)), mask


# -- precomputed store --------------------------------------------------------

class PrecomputedStore:
    """Embeddings keyed by utterance id, persisted as ``index.json`` + ``data.f32``."""

    trainable = False

    def __init__(self, d_h: int, matrices: dict[str, np.ndarray] | None = None):
        self.d_h = d_h
        self.matrices: dict[str, np.ndarray] = {}
        for key, mat in (matrices or {}).items():
            self.add(key, mat)

    def add(self, utterance_id: str, matrix) -> None:
        mat = np.asarray(matrix, dtype="<f4")
        if mat.ndim != 2 or mat.shape[1] != self.d_h:
            raise DimensionMismatch(
                f"embedding for {utterance_id!r} has shape {mat.shape}, expected (*, {self.d_h})")
        self.matrices[utterance_id] = mat

    def __contains__(self, utterance_id):
        return utterance_id in self.matrices

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        index, offset = {}, 0
        with open(os.path.join(directory, "data.f32"), "wb") as fh:
            for key, mat in self.matrices.items():
                raw = np.ascontiguousarray(mat, dtype="<f4").tobytes()
                fh.write(raw)
                index[key] = {"offset_bytes": offset, "l_seq": int(mat.shape[0]),
                              "d_h": int(mat.shape[1])}
                offset += len(raw)
        with open(os.path.join(directory, "index.json"), "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "PrecomputedStore":
        with open(os.path.join(directory, "index.json"), encoding="utf-8") as fh:
            index = json.load(fh)
        with open(os.path.join(directory, "data.f32"), "rb") as fh:
            blob = fh.read()
        if not index:
            raise ValueError(f"empty embedding index in {directory}")
        dims = {entry["d_h"] for entry in index.values()}
        if len(dims) != 1:
            raise DimensionMismatch(f"store mixes embedding widths {sorted(dims)}")
        store = cls(dims.pop())
        # data.f32 order follows byte offsets, which keeps re-serialization exact
        for key, entry in sorted(index.items(), key=lambda kv: kv[1]["offset_bytes"]):
            count = entry["l_seq"] * entry["d_h"]
            mat = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset_bytes"])
            store.matrices[key] = mat.reshape(entry["l_seq"], entry["d_h"]).copy()
        return store


# -- toy encoder --------------------------------------------------------------

class ToyEncoder:
    """Token + positional embeddings mixed by one masked self-attention layer.

    ``h = x + attn(x)`` followed by a position-wise affine map. An output
    projection (d_h x vocab) turns contextual vectors into MLM logits.
    """

    trainable = True

    def __init__(self, vocab: Sequence[str], params: dict[str, np.ndarray]):
        self.vocab = list(vocab)
        if tuple(self.vocab[:3]) != RESERVED:
            raise ValueError(f"vocabulary must start with reserved tokens {RESERVED}")
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.params = params
        d_h = params["tok"].shape[1]
        for name, arr in params.items():
            if name != "out.w" and arr.shape[-1] != d_h:
                raise DimensionMismatch(f"{name} has width {arr.shape[-1]}, expected {d_h}")
        if params["out.w"].shape != (d_h, len(self.vocab)):
            raise DimensionMismatch("output projection must be d_h x vocab")

    PARAM_NAMES = ("tok", "pos", "attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k",
                   "attn.w_v", "attn.b_v", "mix.w", "mix.b", "out.w")

    @property
    def d_h(self) -> int:
        return self.params["tok"].shape[1]

    @property
    def max_len(self) -> int:
        return self.params["pos"].shape[0]

    @classmethod
    def initialize(cls, vocab: Sequence[str], d_h: int = 64, max_len: int = 32,
                   rng: np.random.Generator | None = None) -> "ToyEncoder":
        rng = rng or np.random.default_rng(0)
        vocab = list(RESERVED) + [t for t in vocab if t not in RESERVED]
        v = len(vocab)
        lim = 1.0 / np.sqrt(d_h)
        params = {
            "tok": rng.normal(0.0, 1.0, size=(v, d_h)),
            "pos": rng.normal(0.0, 0.1, size=(max_len, d_h)),
            "attn.w_q": rng.uniform(-lim, lim, size=(d_h, d_h)),
            "attn.b_q": np.zeros(d_h),
            "attn.w_k": rng.uniform(-lim, lim, size=(d_h, d_h)),
            "attn.b_k": np.zeros(d_h),
            "attn.w_v": rng.uniform(-lim, lim, size=(d_h, d_h)) * 0.5,
            "attn.b_v": np.zeros(d_h),
            "mix.w": np.eye(d_h),
            "mix.b": np.zeros(d_h),
            "out.w": rng.normal(0.0, lim, size=(d_h, v)),
        }
        return cls(vocab, params)

    @classmethod
    def zeros(cls, vocab: Sequence[str], d_h: int, max_len: int) -> "ToyEncoder":
        enc = cls.initialize(vocab, d_h, max_len)
        for arr in enc.params.values():
            arr[...] = 0.0
        return enc

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(name, self.params[name]) for name in self.PARAM_NAMES]

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(self.vocab, {k: v.copy() for k, v in self.params.items()})

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.index[UNK]
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)

    def batch_ids(self, token_lists, l_seq: int) -> tuple[np.ndarray, np.ndarray]:
        if l_seq > self.max_len:
            raise DimensionMismatch(f"l_seq {l_seq} exceeds positional table {self.max_len}")
        ids = np.zeros((len(token_lists), l_seq), dtype=np.int64)
        masks = np.zeros((len(token_lists), l_seq), dtype=bool)
        for row, toks in enumerate(token_lists):
            padded, mask = pad_or_truncate(toks, l_seq)
            ids[row] = self.token_ids(padded)
            masks[row] = mask
        return ids, masks

    def save(self, path) -> None:
        header = checkpoint.Header(ENCODER_MAGIC, checkpoint.VERSION, self.d_h, 1, 0)
        checkpoint.save(path, header, self.named_params())
        with open(str(path) + ".vocab", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.vocab) + "\n")

    @classmethod
    def load(cls, path) -> "ToyEncoder":
        _, tensors = checkpoint.load(path, ENCODER_MAGIC)
        with open(str(path) + ".vocab", encoding="utf-8") as fh:
            vocab = fh.read().splitlines()
        return cls(vocab, dict(tensors))


def toy_forward(params: dict, ids: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """Contextual vectors (B, L, d_h) for id batches. ``params`` values may be Tensors."""
    p = {k: ad.as_tensor(v) for k, v in params.items()}
    length = ids.shape[1]
    pos = ad.take_rows(p["pos"], np.arange(length))
    x = ad.take_rows(p["tok"], ids) + pos
    q = x @ ad.transpose(p["attn.w_q"], (1, 0)) + p["attn.b_q"]
    k = x @ ad.transpose(p["attn.w_k"], (1, 0)) + p["attn.b_k"]
    v = x @ ad.transpose(p["attn.w_v"], (1, 0)) + p["attn.b_v"]
    d_h = p["tok"].shape[1]
    scores = q @ ad.transpose(k, (0, 2, 1)) * (1.0 / np.sqrt(d_h))
    attn = ad.masked_softmax(scores, mask[:, None, :], axis=-1)
    h = x + attn @ v
    return h @ ad.transpose(p["mix.w"], (1, 0)) + p["mix.b"]


def encode_batch(backend, utterances: Sequence[Utterance], l_seq: int,
                 d_h: int | None = None) -> list[SequenceEmbedding]:
    """One SequenceEmbedding per utterance, in order."""
    if isinstance(backend, PrecomputedStore):
        if d_h is not None and d_h != backend.d_h:
            raise DimensionMismatch(f"store width {backend.d_h} != requested {d_h}")
        out = []
        for u in utterances:
            if u.id not in backend.matrices:
                raise MissingEmbedding(u.id)
            mat = backend.matrices[u.id]
            n = min(mat.shape[0], l_seq)
            if n == mat.shape[0] == l_seq:
                values = mat
            else:
                values = np.zeros((l_seq, backend.d_h), dtype=mat.dtype)
                values[:n] = mat[:n]
            mask = np.zeros(l_seq, dtype=bool)
            mask[:n] = True
            out.append(SequenceEmbedding(values, mask))
        return out
    if isinstance(backend, ToyEncoder):
        if d_h is not None and d_h != backend.d_h:
            raise DimensionMismatch(f"encoder width {backend.d_h} != requested {d_h}")
        out = []
        for start in range(0, len(utterances), 256):
            chunk = utterances[start:start + 256]
            ids, masks = backend.batch_ids([u.tokens for u in chunk], l_seq)
            values = toy_forward(backend.params, ids, masks).value
            out.extend(SequenceEmbedding(values[i], masks[i]) for i in range(len(chunk)))
        return out
    raise TypeError(f"unsupported encoder backend {type(backend).__name__}")


def mlm_logits(backend, masked_tokens: Sequence[str], mask_positions: Sequence[int]) -> np.ndarray:
    """Logit rows (|positions| x vocab) for the masked positions of one token sequence."""
    if not getattr(backend, "trainable", False):
        raise BackendNotTrainable("precomputed embeddings cannot produce MLM logits")
    ids = backend.token_ids(masked_tokens)[None, :]
    mask = np.array([[t != PAD for t in masked_tokens]])
    hidden = toy_forward(backend.params, ids, mask).value[0]
    return hidden[np.asarray(mask_positions, dtype=np.int64)] @ backend.params["out.w"]

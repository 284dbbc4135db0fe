"""Contrastive re-training of the toy encoder: masked-token prediction plus a
self-supervised contrastive term over shuffled, stopword-free views."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from llmpia import autodiff as ad
from llmpia.corpus import Corpus, Utterance
from llmpia.encoder import MASK, PAD, RESERVED, ToyEncoder, toy_forward
from llmpia.errors import AllStopwords, BackendNotTrainable, EmptyTargets
from llmpia.losses import info_nce
from llmpia.optim import Adam
from llmpia.seeding import derive_rng


@dataclass(frozen=True)
class MaskingPolicy:
    select_rate: float = 0.25
    mask_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.select_rate < 1.0:
            raise ValueError("select_rate must lie in (0, 1)")
        fracs = (self.mask_frac, self.random_frac, self.keep_frac)
        if min(fracs) < 0 or not math.isclose(sum(fracs), 1.0, abs_tol=1e-12):
            raise ValueError("mask/random/keep fractions must be non-negative and sum to 1")


@dataclass(frozen=True)
class MlmBatch:
    corrupted_tokens: tuple[str, ...]
    target_positions: tuple[int, ...]
    target_tokens: tuple[str, ...]
    actions: tuple[str, ...]  # "mask" | "random" | "keep", aligned with target_positions


@dataclass(frozen=True)
class SclViews:
    anchor_tokens: tuple[str, ...]
    positive_tokens: tuple[str, ...]


@dataclass(frozen=True)
class LlmcrlLoss:
    mlm: float
    scl: float
    total: float
    step: int = 0


@dataclass(frozen=True)
class RetrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-5
    tau: float = 0.05
    l_seq: int = 32
    max_steps: int | None = None
    seed: int = 0


def selection_count(n_real: int, select_rate: float) -> int:
    return max(1, int(math.floor(select_rate * n_real + 0.5)))


def apply_masking(tokens: Sequence[str], policy: MaskingPolicy, rng: np.random.Generator,
                  vocab: Sequence[str] | None = None) -> MlmBatch:
    """Select ``max(1, round(rate * n_real))`` real positions and corrupt them 80/10/10.

    ``[PAD]`` positions are never selected. Random replacements are drawn from
    ``vocab`` minus the reserved tokens (falls back to the sentence's own tokens).
    """
    real = [i for i, t in enumerate(tokens) if t != PAD]
    if not real:
        raise EmptyTargets("no real tokens to mask")
    pool = [t for t in (vocab if vocab is not None else tokens) if t not in RESERVED]
    count = selection_count(len(real), policy.select_rate)
    chosen = np.sort(rng.choice(np.asarray(real), size=count, replace=False))
    corrupted = list(tokens)
    actions = []
    for pos in chosen:
        u = rng.random()
        if u < policy.mask_frac:
            corrupted[pos] = MASK
            actions.append("mask")
        elif u < policy.mask_frac + policy.random_frac:
            corrupted[pos] = pool[int(rng.integers(len(pool)))]
            actions.append("random")
        else:
            actions.append("keep")
    return MlmBatch(tuple(corrupted), tuple(int(p) for p in chosen),
                    tuple(tokens[p] for p in chosen), tuple(actions))


def mlm_loss(logits, target_ids) -> ad.Tensor:
    """Mean negative log soft-max probability of each target token."""
    target_ids = np.asarray(target_ids, dtype=np.int64)
    if target_ids.size == 0:
        raise EmptyTargets("mlm_loss needs at least one target")
    return ad.nll_of_targets(logits, target_ids)


def load_stopwords(path=None) -> frozenset[str]:
    """One token per line, UTF-8. Without a path the bundled Urdu list is used."""
    if path is None:
        text = resources.files("llmpia").joinpath("data/urdu_stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def make_scl_views(utterance: Utterance | Sequence[str], stopwords: Iterable[str],
                   rng: np.random.Generator) -> SclViews:
    tokens = tuple(utterance.tokens if isinstance(utterance, Utterance) else utterance)
    stop = set(stopwords)
    content = [t for t in tokens if t not in stop]
    if not content:
        raise AllStopwords(f"utterance {tokens!r} contains only stopwords")
    order = rng.permutation(len(content))
    return SclViews(tokens, tuple(content[i] for i in order))


def scl_loss(anchor_vecs, positive_vecs, tau: float = 0.05) -> ad.Tensor:
    return info_nce(anchor_vecs, positive_vecs, tau)


def _pooled(params, encoder: ToyEncoder, token_lists, l_seq):
    ids, masks = encoder.batch_ids(token_lists, l_seq)
    hidden = toy_forward(params, ids, masks)
    w = masks[:, :, None].astype(np.float64)
    return ad.sum(hidden * w, axis=1) / w.sum(axis=1)


def llmcrl_step_loss(encoder: ToyEncoder, params: dict, batch: Sequence[Utterance],
                     policy: MaskingPolicy, stopwords, rng, l_seq: int, tau: float):
    """Build the combined objective for one batch; returns (mlm, scl) Tensors."""
    content_vocab = encoder.vocab[len(RESERVED):]
    corrupted, flat_targets, target_ids = [], [], []
    for row, u in enumerate(batch):
        toks = list(u.tokens[:l_seq])
        mb = apply_masking(toks, policy, rng, content_vocab)
        corrupted.append(mb.corrupted_tokens)
        flat_targets.extend(row * l_seq + p for p in mb.target_positions)
        target_ids.extend(encoder.token_ids(mb.target_tokens))
    ids, masks = encoder.batch_ids(corrupted, l_seq)
    hidden = toy_forward(params, ids, masks)
    flat = ad.reshape(hidden, (len(batch) * l_seq, encoder.d_h))
    logits = ad.take_rows(flat, np.asarray(flat_targets)) @ params["out.w"]
    mlm = mlm_loss(logits, target_ids)

    anchors, positives = [], []
    for u in batch:
        try:
            views = make_scl_views(u, stopwords, rng)
        except AllStopwords:
            views = SclViews(tuple(u.tokens), tuple(u.tokens))
        anchors.append(views.anchor_tokens)
        positives.append(views.positive_tokens)
    scl = scl_loss(_pooled(params, encoder, anchors, l_seq),
                   _pooled(params, encoder, positives, l_seq), tau)
    return mlm, scl


def _batches(n: int, batch_size: int, seed: int):
    epoch = 0
    while True:
        order = derive_rng(seed, "retrain-epoch", epoch).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) >= 2:
                yield idx
        epoch += 1


def retrain(backend, corpus: Corpus, policy: MaskingPolicy = MaskingPolicy(),
            config: RetrainConfig = RetrainConfig(), stopwords=frozenset()):
    """Optimise mlm + scl jointly with Adam. Returns (new encoder, loss history).

    The input encoder is left untouched.
    """
    if not isinstance(backend, ToyEncoder):
        raise BackendNotTrainable("only the toy encoder can be re-trained")
    encoder = backend.copy()
    n = len(corpus.utterances)
    per_epoch = sum(1 for s in range(0, n, config.batch_size) if n - s >= 2)
    steps = config.max_steps if config.max_steps is not None else config.epochs * per_epoch
    history: list[LlmcrlLoss] = []
    if steps <= 0:
        return encoder, history
    named = encoder.named_params()
    opt = Adam(named, lr=config.learning_rate)
    batches = _batches(n, config.batch_size, config.seed)
    for step in range(steps):
        idx = next(batches)
        batch = [corpus.utterances[i] for i in idx]
        rng = derive_rng(config.seed, "retrain-step", policy.seed, step)
        params = {name: ad.Tensor(arr, requires_grad=True) for name, arr in named}
        mlm, scl = llmcrl_step_loss(encoder, params, batch, policy, stopwords, rng,
                                    config.l_seq, config.tau)
        total = mlm + scl
        ad.backward(total)
        history.append(LlmcrlLoss(float(mlm.value), float(scl.value),
                                  float(mlm.value) + float(scl.value), step))
        opt.step({name: t.grad for name, t in params.items()})
    return encoder, history


def write_loss_csv(history: Sequence[LlmcrlLoss], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "mlm", "scl", "total"])
        for row in history:
            writer.writerow([row.step, repr(row.mlm), repr(row.scl), repr(row.total)])

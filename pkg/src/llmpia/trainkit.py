"""Episodic training loop, evaluation measures, bias categories and run records."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from llmpia import pia
from llmpia.corpus import ClassSplit, Corpus
from llmpia.encoder import SequenceEmbedding, encode_batch
from llmpia.episodes import Episode, EpisodeSpec, sample_episode, test_protocol
from llmpia.errors import EmptyConfusion
from llmpia.optim import Adam
from llmpia.seeding import derive_rng, derive_seed
from llmpia.similarity import SimilarityKind, score_matrix

REPORT_KEYS = ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1",
               "bias_category", "bias_error_type", "model", "similarity", "n_way", "k_shot",
               "seen_fraction", "seed", "t", "tau")
HISTORY_HEADER = ("episode", "ce", "ucl1", "ucl2", "total", "val_accuracy", "val_wf1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    max_episodes: int = 2000
    eval_every: int = 100
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_episodes < 0 or self.eval_every < 1 \
                or self.patience < 1:
            raise ValueError("invalid training configuration")


# -- evaluation measures -----------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    labels: tuple[str, ...]

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels: Sequence[str]) -> "ConfusionMatrix":
        c = len(labels)
        counts = np.zeros((c, c), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts, tuple(labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def weighted_metrics(confusion) -> dict:
    """Accuracy and support-weighted precision / recall, with F1 as their harmonic mean.

    Per-class 0/0 ratios count as 0. Note the F1 here is 2PR/(P+R) of the
    *weighted* P and R, not the support-weighted mean of per-class F1 scores.
    """
    counts = np.asarray(getattr(confusion, "counts", confusion), dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyConfusion("confusion matrix has no entries")
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    weights = support / total
    wp = float((weights * precision).sum())
    wr = float((weights * recall).sum())
    wf1 = 2.0 * wp * wr / (wp + wr) if wp + wr > 0 else 0.0
    return {"accuracy": float(tp.sum() / total), "weighted_precision": wp,
            "weighted_recall": wr, "weighted_f1": wf1}


def bias_classification(precision: float, recall: float) -> tuple[str, str]:
    """Categorize the precision/recall gap measured in percentage points.

    Gap < 1 point is unbiased; otherwise Low (< 3), Medium (3 to < 5) or
    High (>= 5). Precision above recall means missed positives (TypeII).
    """
    gap = round(abs(precision - recall) * 100.0, 9)
    if gap < 1.0:
        return "unbiased", "none"
    if gap < 3.0:
        category = "low"
    elif gap < 5.0:
        category = "medium"
    else:
        category = "high"
    return category, ("TypeII" if precision > recall else "TypeI")


@dataclass
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    bias_category: str
    bias_error_type: str
    model: str = "toy"
    similarity: str = "cosine"
    n_way: int = 0
    k_shot: int = 0
    seen_fraction: float = 0.0
    seed: int = 0
    t: float = 0.1
    tau: float = 0.05
    confusion: ConfusionMatrix | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_confusion(cls, confusion: ConfusionMatrix, **meta) -> "MetricsReport":
        core = weighted_metrics(confusion)
        category, error = bias_classification(core["weighted_precision"], core["weighted_recall"])
        return cls(**core, bias_category=category, bias_error_type=error,
                   confusion=confusion, **meta)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in REPORT_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# -- embeddings cache ---------------------------------------------------------------

class EmbeddingTable:
    """Dense (n, L, D) float64 array of encoded utterances with an id -> row index."""

    def __init__(self, ids: Sequence[str], embeddings: Sequence[SequenceEmbedding]):
        self.ids = list(ids)
        self.row = {uid: i for i, uid in enumerate(self.ids)}
        self.values = np.stack([np.asarray(e.values, dtype=np.float64) for e in embeddings])
        self.masks = np.stack([e.mask for e in embeddings])

    @classmethod
    def encode(cls, backend, corpus: Corpus, l_seq: int) -> "EmbeddingTable":
        embs = encode_batch(backend, list(corpus.utterances), l_seq)
        return cls([u.id for u in corpus.utterances], embs)

    @property
    def d_h(self) -> int:
        return self.values.shape[2]

    def gather(self, items):
        idx = np.array([self.row[u.id] for u, _ in items])
        labels = np.array([c for _, c in items], dtype=np.int64)
        return self.values[idx], self.masks[idx], labels


@dataclass
class Pipeline:
    """Everything the head needs to run: encoded corpus plus head configuration."""

    corpus: Corpus
    table: EmbeddingTable
    config: pia.PiaConfig
    model: str = "toy"

    def episode_arrays(self, episode: Episode):
        n, n_items = episode.n_way, len(episode.support)
        xs, ms, _ = self.table.gather(episode.support)
        k = n_items // n
        xs = xs.reshape(n, k, *xs.shape[1:])
        ms = ms.reshape(n, k, ms.shape[1])
        xq, mq, yq = self.table.gather(episode.query)
        return xs, ms, xq, mq, yq


def represent_task(pipeline: Pipeline, params: pia.PiaParams, task: Episode,
                   chunk: int = 512):
    """Prototypes (N,D) and query representations (NQ,D) without dropout."""
    xs, ms, xq, mq, yq = pipeline.episode_arrays(task)
    p = pia.tensor_params(params)
    cfg = pipeline.config
    proto2 = pia.pi_layer(pia.fuse_proto1(pia.fiat_sentence_attention(xs, ms, p, cfg.heads),
                                          pia.fiat_class_attention(xs, ms, p, cfg.heads)), p)
    proto = pia.ad_map(proto2, p).value
    parts = []
    for start in range(0, len(xq), chunk):
        q_sent = pia.query_attention(xq[start:start + chunk], mq[start:start + chunk], p, cfg.heads)
        parts.append(pia.ad_map(q_sent, p).value)
    return proto, np.concatenate(parts), yq


def evaluate(pipeline: Pipeline, params: pia.PiaParams, test_task: Episode,
             similarity_kind="cosine", **meta) -> MetricsReport:
    """Score every query of a fixed task against its support prototypes."""
    kind = SimilarityKind.parse(str(getattr(similarity_kind, "value", similarity_kind)))
    proto, xq_p, y = represent_task(pipeline, params, test_task)
    scores = score_matrix(kind, xq_p, proto) / pipeline.config.t
    pred = np.argmax(scores, axis=1)
    confusion = ConfusionMatrix.from_predictions(y, pred, test_task.class_map)
    meta.setdefault("model", pipeline.model)
    meta.setdefault("t", pipeline.config.t)
    meta.setdefault("tau", pipeline.config.tau)
    return MetricsReport.from_confusion(confusion, similarity=kind.value, **meta)


# -- training --------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryRow:
    episode: int
    ce: float
    ucl1: float
    ucl2: float
    total: float
    val_accuracy: float
    val_wf1: float


def validation_task(corpus: Corpus, split: ClassSplit, k_shot: int, seed: int) -> Episode:
    return test_protocol(corpus, split.c_val, k_shot, derive_seed(seed, "val-task"))


def train(pipeline: Pipeline, split: ClassSplit, spec: EpisodeSpec, config: TrainConfig,
          init: pia.PiaParams | None = None,
          on_eval: Callable[[HistoryRow], None] | None = None):
    """Episodic Adam training with periodic validation and best-F1 checkpointing.

    Returns ``(best_params, history)``. Validation runs every ``eval_every``
    episodes and after the final episode; training stops after ``patience``
    evaluations without a strict F1 improvement. A tie with the best F1 so far
    adopts the newer parameters (without resetting patience), so a saturated
    validation task does not pin the checkpoint to the first evaluation.
    """
    params = init.copy() if init is not None else pia.init_params(
        pipeline.config, derive_rng(config.seed, "pia-init"))
    history: list[HistoryRow] = []
    if config.max_episodes == 0:
        return params, history
    val_task = validation_task(pipeline.corpus, split, spec.k_shot, config.seed)
    groups = pipeline.corpus.by_label()
    opt = Adam(params.named(), lr=config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.adam_eps)
    best, best_f1, stale = params.copy(), -1.0, 0
    window = []
    for episode_no in range(1, config.max_episodes + 1):
        rng = derive_rng(config.seed, "episode", episode_no)
        episode = sample_episode(pipeline.corpus, split.c_train, spec, rng, groups)
        xs, ms, xq, mq, yq = pipeline.episode_arrays(episode)
        out, grads = pia.episode_gradients(xs, ms, xq, mq, yq, params, pipeline.config, rng)
        opt.step(grads)
        window.append(out.losses)
        if episode_no % config.eval_every and episode_no != config.max_episodes:
            continue
        report = evaluate(pipeline, params, val_task)
        row = HistoryRow(episode_no,
                         float(np.mean([w.ce for w in window])),
                         float(np.mean([w.ucl1 for w in window])),
                         float(np.mean([w.ucl2 for w in window])),
                         float(np.mean([w.total for w in window])),
                         report.accuracy, report.weighted_f1)
        window = []
        history.append(row)
        if on_eval:
            on_eval(row)
        if report.weighted_f1 > best_f1:
            best, best_f1, stale = params.copy(), report.weighted_f1, 0
        else:
            if report.weighted_f1 == best_f1:
                best = params.copy()
            stale += 1
            if stale >= config.patience:
                break
    return best, history


def write_history_csv(history: Sequence[HistoryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([row.episode] + [repr(getattr(row, k)) for k in HISTORY_HEADER[1:]])


def read_history_csv(path) -> list[HistoryRow]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [HistoryRow(int(r["episode"]), *(float(r[k]) for k in HISTORY_HEADER[1:]))
            for r in rows]


# -- gradient verification ----------------------------------------------------------

def grad_check(params: dict, loss_fn: Callable[[], float], analytic: dict,
               step: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between ``analytic`` gradients and central differences.

    ``params`` maps names to arrays that ``loss_fn`` reads; each scalar is
    perturbed in place and restored. The per-scalar relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    worst = 0.0
    for name, arr in params.items():
        grad = np.asarray(analytic[name])
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst

"""Prototype-informed attention head.

Pipeline for one episode (shapes with N classes, K shots, NQ queries):

    XS (N,K,L,D) --sentence attention--> I_sent (N,K,D) --+
    XS (N,K,L,D) --class attention-----> I_cla  (N,K,D) --+-- harmonic mean --> proto1 (N,K,D)
    proto1 --PI layer (softmax over K)--> proto2 (N,D) --AD--> proto (N,D)
    XQ (NQ,L,D) --query attention--> XQ_sent (NQ,D) --AD--> XQ_p (NQ,D)
    simcos = cos(XQ_p, proto) / t

The support and query paths share one set of Q/K/V transforms, one
layer-norm (sentence site) and one AD map. Training adds two in-batch
contrastive terms computed against a second pass over dropout-perturbed
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from llmpia import autodiff as ad
from llmpia import checkpoint
from llmpia.errors import AllMasked, DimensionMismatch, IndexOutOfRange, ZeroNormVector
from llmpia.losses import info_nce

PIA_MAGIC = b"PIACKPT\x01"
FUSE_EPS = 1e-8
LN_EPS = 1e-5


@dataclass(frozen=True)
class PiaConfig:
    d_h: int = 64
    heads: int = 4
    dropout_rate: float = 0.1
    t: float = 0.1
    tau: float = 0.05
    hidden_size: int = 300

    def __post_init__(self):
        if self.d_h % self.heads:
            raise ValueError(f"heads={self.heads} must divide d_h={self.d_h}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.t <= 0 or self.tau <= 0:
            raise ValueError("temperatures must be positive")

    @property
    def d_head(self) -> int:
        return self.d_h // self.heads


@dataclass
class FiatParams:
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    ln_sent_gain: np.ndarray
    ln_sent_bias: np.ndarray
    ln_cla_gain: np.ndarray
    ln_cla_bias: np.ndarray


@dataclass
class PiLayerParams:
    w: np.ndarray
    b: np.ndarray


@dataclass
class AdLayerParams:
    w1: np.ndarray  # (hidden, d_h)
    b1: np.ndarray
    w2: np.ndarray  # (d_h, hidden)
    b2: np.ndarray


@dataclass
class PiaParams:
    fiat: FiatParams
    pi: PiLayerParams
    ad: AdLayerParams

    def named(self) -> list[tuple[str, np.ndarray]]:
        """Flat ``group.name`` view; the arrays are the live parameter objects."""
        out = []
        for group in ("fiat", "pi", "ad"):
            obj = getattr(self, group)
            out.extend((f"{group}.{f.name}", getattr(obj, f.name)) for f in fields(obj))
        return out

    @classmethod
    def from_named(cls, named) -> "PiaParams":
        d = dict(named)

        def build(kind, group):
            return kind(**{f.name: np.array(d[f"{group}.{f.name}"], dtype=np.float64)
                           for f in fields(kind)})

        return cls(build(FiatParams, "fiat"), build(PiLayerParams, "pi"),
                   build(AdLayerParams, "ad"))

    def copy(self) -> "PiaParams":
        return PiaParams.from_named(self.named())

    @property
    def d_h(self) -> int:
        return self.fiat.w_q.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.ad.w1.shape[0]


LN_BIAS_INIT = 3.0


def init_params(config: PiaConfig, rng: np.random.Generator,
                ln_bias: float = LN_BIAS_INIT) -> PiaParams:
    """Uniform +-1/sqrt(fan_in) weights, zero PI layer, unit LN gain.

    The FIAT layer-norm biases start at ``ln_bias``. A positive shift keeps
    both inputs of the harmonic-mean fusion on the same (positive) side, away
    from the pole where a + b crosses zero.
    """
    d, h = config.d_h, config.hidden_size

    def uniform(shape, fan_in):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    fiat = FiatParams(
        w_q=uniform((d, d), d), b_q=np.zeros(d),
        w_k=uniform((d, d), d), b_k=np.zeros(d),
        w_v=uniform((d, d), d), b_v=np.zeros(d),
        ln_sent_gain=np.ones(d), ln_sent_bias=np.full(d, float(ln_bias)),
        ln_cla_gain=np.ones(d), ln_cla_bias=np.full(d, float(ln_bias)),
    )
    pi = PiLayerParams(w=np.zeros((d, d)), b=np.zeros(d))
    adl = AdLayerParams(w1=uniform((h, d), d), b1=np.zeros(h),
                        w2=uniform((d, h), h), b2=np.zeros(d))
    return PiaParams(fiat, pi, adl)


def save_params(params: PiaParams, config: PiaConfig, path) -> None:
    header = checkpoint.Header(PIA_MAGIC, checkpoint.VERSION, params.d_h, config.heads,
                               params.hidden_size)
    checkpoint.save(path, header, params.named())


def load_params(path) -> tuple[PiaParams, checkpoint.Header]:
    header, tensors = checkpoint.load(path, PIA_MAGIC)
    params = PiaParams.from_named(tensors)
    if params.d_h != header.d_h or params.hidden_size != header.hidden_size:
        raise DimensionMismatch("checkpoint header disagrees with tensor shapes")
    return params, header


# -- tensor views of the parameters --------------------------------------------

@dataclass
class _P:
    """Tensor handles for one forward pass, keyed like :meth:`PiaParams.named`."""

    tensors: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.tensors[key]


def tensor_params(params: PiaParams, requires_grad: bool = False) -> _P:
    return _P({name: ad.Tensor(arr, requires_grad=requires_grad) for name, arr in params.named()})


def _as_p(params) -> _P:
    return params if isinstance(params, _P) else tensor_params(params)


# -- operations ------------------------------------------------------------------

def qkv_transform(x, params, heads: int):
    """Shared affine Q/K/V maps; each result has shape ``x.shape[:-1] + (heads, d_head)``."""
    p = _as_p(params)
    x = ad.as_tensor(x)
    d_h = p["fiat.w_q"].shape[0]
    if x.shape[-1] != d_h:
        raise DimensionMismatch(f"input width {x.shape[-1]} != d_h {d_h}")
    split = x.shape[:-1] + (heads, d_h // heads)
    out = []
    for name in ("q", "k", "v"):
        w, b = p[f"fiat.w_{name}"], p[f"fiat.b_{name}"]
        y = x @ ad.transpose(w, (1, 0)) + b
        out.append(ad.reshape(y, split))
    return tuple(out)


def scaled_attention(q, k, v, mask=None, scale=None):
    """softmax(q k^T / scale) v over the last two axes; masked keys get zero weight.

    ``mask`` has shape ``(..., L_k)`` with True marking valid keys. ``scale``
    defaults to sqrt(q.shape[-1]).
    """
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionMismatch(f"incompatible attention shapes {q.shape} {k.shape} {v.shape}")
    if scale is None:
        scale = np.sqrt(q.shape[-1])
    key_axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = (q @ ad.transpose(k, key_axes)) * (1.0 / scale)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=-1)):
            raise AllMasked("an attention row has no valid keys")
        mask = mask[..., None, :]
    weights = ad.masked_softmax(scores, mask, axis=-1)
    return weights @ v


def _heads_first(t):
    # (..., L, H, dh) -> (..., H, L, dh)
    nd = t.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return ad.transpose(t, axes)


def _sequence_context(x, mask, p: _P, heads: int):
    """Per-sequence multi-head self-attention; returns (..., L, D) context."""
    q, k, v = qkv_transform(x, p, heads)
    ctx = scaled_attention(_heads_first(q), _heads_first(k), _heads_first(v),
                           np.asarray(mask, dtype=bool)[..., None, :])
    ctx = _heads_first(ctx)  # back to (..., L, H, dh)
    return ad.reshape(ctx, x.shape)


def _check_support(xs, mask):
    if xs.ndim != 4 or mask.shape != xs.shape[:3]:
        raise DimensionMismatch(f"support must be (N,K,L,D) with (N,K,L) mask, got "
                                f"{xs.shape} / {mask.shape}")


def fiat_sentence_attention(xs, mask, params, heads: int):
    """Self-attention inside each support sentence, max-pool over L, layer norm -> (N,K,D)."""
    p = _as_p(params)
    xs, mask = ad.as_tensor(xs), np.asarray(mask, dtype=bool)
    _check_support(xs, mask)
    ctx = _sequence_context(xs, mask, p, heads)
    pooled = ad.masked_max(ctx, mask[..., None], axis=2)
    return ad.layer_norm(pooled, p["fiat.ln_sent_gain"], p["fiat.ln_sent_bias"], LN_EPS)


def fiat_class_attention(xs, mask, params, heads: int):
    """Feature-major attention across all K sentences of a class -> (N,K,D).

    Per class and head, queries and keys are the d_head feature rows of the
    (d_head x K*L) arrangement, so the softmax runs over features. Padded
    positions are zeroed before the contraction; the scale is sqrt(K*L).
    """
    p = _as_p(params)
    xs, mask = ad.as_tensor(xs), np.asarray(mask, dtype=bool)
    _check_support(xs, mask)
    n, k, length, d = xs.shape
    q, key, v = qkv_transform(xs, p, heads)  # (N,K,L,H,dh)
    keep = mask[..., None, None].astype(np.float64)
    dh = d // heads

    def feature_major(t):
        t = ad.transpose(t * keep, (0, 3, 4, 1, 2))  # (N,H,dh,K,L)
        return ad.reshape(t, (n, heads, dh, k * length))

    ctx = scaled_attention(feature_major(q), feature_major(key), feature_major(v),
                           scale=np.sqrt(k * length))
    ctx = ad.transpose(ad.reshape(ctx, (n, heads, dh, k, length)), (0, 3, 4, 1, 2))
    ctx = ad.reshape(ctx, (n, k, length, d))
    pooled = ad.masked_max(ctx, mask[..., None], axis=2)
    return ad.layer_norm(pooled, p["fiat.ln_cla_gain"], p["fiat.ln_cla_bias"], LN_EPS)


def fuse_proto1(i_sent, i_cla, eps: float = FUSE_EPS):
    """Elementwise harmonic mean with a signed-eps guard (zero where |a+b| < eps)."""
    i_sent, i_cla = ad.as_tensor(i_sent), ad.as_tensor(i_cla)
    if i_sent.shape != i_cla.shape:
        raise DimensionMismatch(f"{i_sent.shape} vs {i_cla.shape}")
    return ad.harmonic_mean(i_sent, i_cla, eps)


def query_attention(xq, mask, params, heads: int):
    """Self-attention per query, layer norm per position, then max-pool over L -> (NQ,D)."""
    p = _as_p(params)
    xq, mask = ad.as_tensor(xq), np.asarray(mask, dtype=bool)
    if xq.ndim != 3 or mask.shape != xq.shape[:2]:
        raise DimensionMismatch(f"queries must be (NQ,L,D) with (NQ,L) mask, got "
                                f"{xq.shape} / {mask.shape}")
    ctx = _sequence_context(xq, mask, p, heads)
    normed = ad.layer_norm(ctx, p["fiat.ln_sent_gain"], p["fiat.ln_sent_bias"], LN_EPS)
    return ad.masked_max(normed, mask[..., None], axis=1)


def pi_layer(proto1, params):
    """Weight the K sentences of each class by softmax_K(mean_D tanh(W x + b)) -> (N,D)."""
    p = _as_p(params)
    proto1 = ad.as_tensor(proto1)
    if proto1.ndim != 3 or proto1.shape[-1] != p["pi.w"].shape[0]:
        raise DimensionMismatch(f"proto1 must be (N,K,D), got {proto1.shape}")
    z = ad.tanh(proto1 @ ad.transpose(p["pi.w"], (1, 0)) + p["pi.b"])
    weights = ad.softmax(ad.mean(z, axis=-1), axis=-1)  # (N,K)
    n, k = weights.shape
    return ad.reshape(ad.reshape(weights, (n, 1, k)) @ proto1, (n, proto1.shape[-1]))


def ad_map(x, params):
    p = _as_p(params)
    x = ad.as_tensor(x)
    if x.shape[-1] != p["ad.w1"].shape[1]:
        raise DimensionMismatch(f"AD input width {x.shape[-1]} != {p['ad.w1'].shape[1]}")
    h = ad.relu(x @ ad.transpose(p["ad.w1"], (1, 0)) + p["ad.b1"])
    return h @ ad.transpose(p["ad.w2"], (1, 0)) + p["ad.b2"]


def ad_layer(proto2, xq_sent, params):
    """Map prototypes and query vectors through the same feedforward network."""
    p = _as_p(params)
    return ad_map(proto2, p), ad_map(xq_sent, p)


def ucl_loss(reps, reps_prime, tau: float):
    return info_nce(reps, reps_prime, tau)


def _check_rows_nonzero(x, what):
    if np.any(np.linalg.norm(x, axis=-1) == 0.0):
        raise ZeroNormVector(f"{what} contains a zero-norm row")


def metric_scores(xq_p, proto, t: float):
    """Cosine similarity of every query to every prototype divided by ``t`` -> (NQ,N)."""
    xq_p, proto = ad.as_tensor(xq_p), ad.as_tensor(proto)
    if t <= 0:
        raise ValueError("t must be positive")
    _check_rows_nonzero(xq_p.value, "query representations")
    _check_rows_nonzero(proto.value, "prototypes")
    return (ad.l2_normalize(xq_p) @ ad.transpose(ad.l2_normalize(proto), (1, 0))) * (1.0 / t)


def ce_loss(simcos, true_class_indices):
    """Mean -log softmax(simcos)[i, y_i] over queries."""
    simcos = ad.as_tensor(simcos)
    y = np.asarray(true_class_indices, dtype=np.int64)
    if y.shape != (simcos.shape[0],):
        raise DimensionMismatch("one true class index per query row is required")
    if np.any(y < 0) or np.any(y >= simcos.shape[1]):
        raise IndexOutOfRange(f"class index outside [0, {simcos.shape[1]})")
    return ad.nll_of_targets(simcos, y)


# -- whole episode ------------------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    ucl1: float
    ucl2: float
    total: float


@dataclass
class EpisodeOutput:
    simcos: np.ndarray
    losses: LossBreakdown
    predictions: np.ndarray
    total: ad.Tensor  # differentiable handle for backward


def represent(xs, mask_s, xq, mask_q, params, config: PiaConfig):
    """Final prototypes (N,D) and query representations (NQ,D) as Tensors."""
    p = _as_p(params)
    i_sent = fiat_sentence_attention(xs, mask_s, p, config.heads)
    i_cla = fiat_class_attention(xs, mask_s, p, config.heads)
    proto2 = pi_layer(fuse_proto1(i_sent, i_cla), p)
    xq_sent = query_attention(xq, mask_q, p, config.heads)
    return ad_layer(proto2, xq_sent, p)


def _dropout(x, rate, rng):
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate)


def forward_episode(xs, mask_s, xq, mask_q, query_labels, params, config: PiaConfig,
                    rng: np.random.Generator | None = None) -> EpisodeOutput:
    """Full training objective ce + ucl1 + ucl2 for one episode.

    The primed pass re-runs the head on inputs with dropout applied (drawn
    from ``rng``). With ``dropout_rate == 0`` or no ``rng`` it reuses the
    clean representations.
    """
    p = _as_p(params)
    xs = np.asarray(xs, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    proto, xq_p = represent(xs, mask_s, xq, mask_q, p, config)
    if config.dropout_rate > 0 and rng is not None:
        proto_b, xq_b = represent(_dropout(xs, config.dropout_rate, rng), mask_s,
                                  _dropout(xq, config.dropout_rate, rng), mask_q, p, config)
    else:
        proto_b, xq_b = proto, xq_p
    simcos = metric_scores(xq_p, proto, config.t)
    ce = ce_loss(simcos, query_labels)
    ucl1 = ucl_loss(proto, proto_b, config.tau)
    ucl2 = ucl_loss(xq_p, xq_b, config.tau)
    total = ce + ucl1 + ucl2
    losses = LossBreakdown(float(ce.value), float(ucl1.value), float(ucl2.value),
                           float(ce.value) + float(ucl1.value) + float(ucl2.value))
    return EpisodeOutput(simcos.value, losses, np.argmax(simcos.value, axis=1), total)


def episode_gradients(xs, mask_s, xq, mask_q, query_labels, params: PiaParams,
                      config: PiaConfig, rng=None):
    """(EpisodeOutput, {name: gradient}) for every parameter."""
    p = tensor_params(params, requires_grad=True)
    out = forward_episode(xs, mask_s, xq, mask_q, query_labels, p, config, rng)
    ad.backward(out.total)
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.value))
             for name, t in p.tensors.items()}
    return out, grads

"""BERT-style extractive QA network with a history answer embedding channel.

Everything is plain numpy with a hand-written backward pass. Parameters live
in a flat ``dict[str, np.ndarray]`` so the optimizer and checkpoint code can
treat them generically.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .featurizer import SENTINEL_DROPPED, Batch

ModelParams = dict[str, np.ndarray]

LN_EPS = 1e-12
MASK_VALUE = -1e9
INIT_STD = 0.02
_GELU_C = float(np.sqrt(2.0 / np.pi))


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn_size: int = 0  # 0 means 4 * hidden
    max_positions: int = 512
    dropout_rate: float = 0.1
    seed: int = 0
    use_hae: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.ffn_size == 0:
            object.__setattr__(self, "ffn_size", 4 * self.hidden)
        for name in ("vocab_size", "hidden", "heads", "ffn_size", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f = config.hidden, config.ffn_size
    shapes: dict[str, tuple[int, ...]] = {
        "token_table": (config.vocab_size, h),
        "segment_table": (2, h),
        "position_table": (config.max_positions, h),
        "hae_table": (2, h),
        "emb_ln.gamma": (h,),
        "emb_ln.beta": (h,),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.{name}.weight"] = (h, h)
            shapes[p + f"attn.{name}.bias"] = (h,)
        shapes[p + "attn_ln.gamma"] = (h,)
        shapes[p + "attn_ln.beta"] = (h,)
        shapes[p + "ffn.in.weight"] = (h, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, h)
        shapes[p + "ffn.out.bias"] = (h,)
        shapes[p + "ffn_ln.gamma"] = (h,)
        shapes[p + "ffn_ln.beta"] = (h,)
    shapes["span.start"] = (h,)
    shapes["span.end"] = (h,)
    return shapes


def is_no_decay(name: str) -> bool:
    """Biases and layer-norm parameters are excluded from weight decay."""
    return name.endswith(".bias") or "_ln." in name


def init_params(config: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    params: ModelParams = {}
    for name, shape in param_shapes(config).items():
        if name == "hae_table":
            # rows: 0 = not in a history answer, 1 = in a history answer
            value = np.zeros(shape)
        elif name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith((".beta", ".bias")):
            value = np.zeros(shape)
        else:
            value = _truncated_normal(rng, shape, INIT_STD)
        params[name] = value.astype(config.dtype)
    return params


# ---------------------------------------------------------------------------
# building blocks


def _layer_norm(x, gamma, beta):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def _layer_norm_backward(dy, cache):
    xhat, rstd, gamma = cache
    h = dy.shape[-1]
    dgamma = (dy * xhat).reshape(-1, h).sum(0)
    dbeta = dy.reshape(-1, h).sum(0)
    dxhat = dy * gamma
    dx = rstd * (
        dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape, dtype=x.dtype) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _softmax(x, axis=-1):
    z = x - x.max(axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis, keepdims=True)


def _log_softmax(x, axis=-1):
    z = x - x.max(axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis, keepdims=True))


def _scatter_rows(ids, values, n_rows):
    """Row-wise sum of ``values`` into an (n_rows, h) table, i.e. ``np.add.at`` but faster."""
    out = np.zeros((n_rows, values.shape[1]), dtype=values.dtype)
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    out[sorted_ids[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def _linear_grads(x, dy):
    """Weight and bias gradients of ``y = x @ W + b`` over all leading axes."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return x2.T @ dy2, dy2.sum(0)


# ---------------------------------------------------------------------------
# forward


def embed(
    token_ids, segment_ids, hae_ids, params: ModelParams, config: ModelConfig, rng=None
):
    """Sum of token, segment, position and HAE embeddings, layer-normalized.

    Returns ``(output, cache)``; dropout is applied only when ``rng`` is given.
    """
    token_ids = np.asarray(token_ids)
    seq_len = token_ids.shape[-1]
    if token_ids.min() < 0 or token_ids.max() >= config.vocab_size:
        raise IndexError(f"token id outside vocabulary of size {config.vocab_size}")
    if seq_len > config.max_positions:
        raise IndexError(f"sequence length {seq_len} exceeds max_positions {config.max_positions}")
    x = params["token_table"][token_ids] + params["segment_table"][segment_ids]
    x = x + params["position_table"][:seq_len]
    if config.use_hae:
        x = x + params["hae_table"][hae_ids]
    y, ln_cache = _layer_norm(x, params["emb_ln.gamma"], params["emb_ln.beta"])
    y, keep = _dropout(y, config.dropout_rate, rng)
    return y, (x, ln_cache, keep)


def _attention(x, mask_add, params, prefix, config, rng):
    B, T, h = x.shape
    A = config.heads
    dh = h // A
    scale = 1.0 / float(np.sqrt(dh))

    def split(y):
        return y.reshape(B, T, A, dh).transpose(0, 2, 1, 3)

    q = split(x @ params[prefix + "q.weight"] + params[prefix + "q.bias"])
    k = split(x @ params[prefix + "k.weight"] + params[prefix + "k.bias"])
    v = split(x @ params[prefix + "v.weight"] + params[prefix + "v.bias"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale + mask_add
    probs = _softmax(scores)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, h)
    out = ctx @ params[prefix + "o.weight"] + params[prefix + "o.bias"]
    out, keep = _dropout(out, config.dropout_rate, rng)
    return out, (x, q, k, v, probs, ctx, keep, scale)


def _attention_backward(dout, cache, params, prefix, grads):
    x, q, k, v, probs, ctx, keep, scale = cache
    B, T, h = x.shape
    A = q.shape[1]
    dh = h // A
    if keep is not None:
        dout = dout * keep
    grads[prefix + "o.weight"], grads[prefix + "o.bias"] = _linear_grads(ctx, dout)
    dctx = (dout @ params[prefix + "o.weight"].T).reshape(B, T, A, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dx = np.zeros_like(x)
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        d = d.transpose(0, 2, 1, 3).reshape(B, T, h)
        grads[prefix + f"{name}.weight"], grads[prefix + f"{name}.bias"] = _linear_grads(x, d)
        dx += d @ params[prefix + f"{name}.weight"].T
    return dx


def _layer_forward(x, mask_add, params, i, config, rng):
    p = f"layer{i}."
    attn, attn_cache = _attention(x, mask_add, params, p + "attn.", config, rng)
    h1, ln1 = _layer_norm(x + attn, params[p + "attn_ln.gamma"], params[p + "attn_ln.beta"])
    u = h1 @ params[p + "ffn.in.weight"] + params[p + "ffn.in.bias"]
    g, t = _gelu(u)
    f = g @ params[p + "ffn.out.weight"] + params[p + "ffn.out.bias"]
    f, keep = _dropout(f, config.dropout_rate, rng)
    out, ln2 = _layer_norm(h1 + f, params[p + "ffn_ln.gamma"], params[p + "ffn_ln.beta"])
    return out, (attn_cache, ln1, h1, u, g, t, keep, ln2)


def _layer_backward(dout, cache, params, i, grads):
    p = f"layer{i}."
    attn_cache, ln1, h1, u, g, t, keep, ln2 = cache
    dsum2, grads[p + "ffn_ln.gamma"], grads[p + "ffn_ln.beta"] = _layer_norm_backward(dout, ln2)
    df = dsum2 if keep is None else dsum2 * keep
    grads[p + "ffn.out.weight"], grads[p + "ffn.out.bias"] = _linear_grads(g, df)
    dg = df @ params[p + "ffn.out.weight"].T
    du = _gelu_backward(dg, u, t)
    grads[p + "ffn.in.weight"], grads[p + "ffn.in.bias"] = _linear_grads(h1, du)
    dh1 = dsum2 + du @ params[p + "ffn.in.weight"].T
    dsum1, grads[p + "attn_ln.gamma"], grads[p + "attn_ln.beta"] = _layer_norm_backward(dh1, ln1)
    dx = dsum1 + _attention_backward(dsum1, attn_cache, params, p + "attn.", grads)
    return dx


def attention_mask_bias(attention_mask, dtype) -> np.ndarray:
    mask = np.asarray(attention_mask)
    return ((1 - mask) * MASK_VALUE).astype(dtype)[:, None, None, :]


def encoder_forward(embeddings, attention_mask, params: ModelParams, config: ModelConfig, rng=None):
    """Post-norm transformer stack. ``rng=None`` means eval mode (no dropout).

    Returns ``(T, caches)`` where ``T`` has shape (batch, seq, hidden).
    """
    x = embeddings
    mask_add = attention_mask_bias(attention_mask, x.dtype)
    caches = []
    for i in range(config.layers):
        x, cache = _layer_forward(x, mask_add, params, i, config, rng)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite activations after encoder layer {i}")
        caches.append(cache)
    return x, caches


def span_logits(T, params: ModelParams):
    return T @ params["span.start"], T @ params["span.end"]


def span_probs(logits):
    return _softmax(logits)


def span_loss(start_logits, end_logits, start_labels, end_labels) -> float:
    """Mean over windows of the averaged start/end cross entropy."""
    return float(_span_loss_and_grads(start_logits, end_logits, start_labels, end_labels)[0])


def _span_loss_and_grads(start_logits, end_logits, start_labels, end_labels):
    start_logits = np.atleast_2d(start_logits)
    end_logits = np.atleast_2d(end_logits)
    start_labels = np.atleast_1d(np.asarray(start_labels))
    end_labels = np.atleast_1d(np.asarray(end_labels))
    if (start_labels == SENTINEL_DROPPED).any() or (end_labels == SENTINEL_DROPPED).any():
        raise ValueError("a window without a contained gold span reached the loss")
    B, T = start_logits.shape
    if start_labels.min() < 0 or end_labels.max() >= T or end_labels.min() < 0 or start_labels.max() >= T:
        raise ValueError("span label outside the sequence")
    rows = np.arange(B)
    ls = _log_softmax(start_logits)
    le = _log_softmax(end_logits)
    loss = -0.5 * (ls[rows, start_labels] + le[rows, end_labels]).mean()
    ds = np.exp(ls)
    ds[rows, start_labels] -= 1.0
    de = np.exp(le)
    de[rows, end_labels] -= 1.0
    return loss, ds / (2 * B), de / (2 * B)


# ---------------------------------------------------------------------------
# full model


def _cast(batch: Batch):
    return batch.token_ids, batch.segment_ids, batch.hae_ids, batch.attention_mask


def forward(batch: Batch, params: ModelParams, config: ModelConfig, rng=None):
    """Start/end logits for every window in ``batch``."""
    tok, seg, hae, mask = _cast(batch)
    e, _ = embed(tok, seg, hae, params, config, rng)
    T, _ = encoder_forward(e, mask, params, config, rng)
    return span_logits(T, params)


def forward_backward(batch: Batch, params: ModelParams, config: ModelConfig, rng=None):
    """Mean batch loss and its exact gradient for every parameter tensor."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    tok, seg, hae, mask = _cast(batch)
    e, (x0, emb_ln, emb_keep) = embed(tok, seg, hae, params, config, rng)
    T, caches = encoder_forward(e, mask, params, config, rng)
    start_logits, end_logits = span_logits(T, params)
    loss, ds, de = _span_loss_and_grads(start_logits, end_logits, batch.start_labels, batch.end_labels)

    grads: ModelParams = {}
    h = T.shape[-1]
    grads["span.start"] = (ds[..., None] * T).reshape(-1, h).sum(0)
    grads["span.end"] = (de[..., None] * T).reshape(-1, h).sum(0)
    dx = ds[..., None] * params["span.start"] + de[..., None] * params["span.end"]
    for i in reversed(range(config.layers)):
        dx = _layer_backward(dx, caches[i], params, i, grads)
    if emb_keep is not None:
        dx = dx * emb_keep
    dx0, grads["emb_ln.gamma"], grads["emb_ln.beta"] = _layer_norm_backward(dx, emb_ln)
    flat = dx0.reshape(-1, h)
    for name, ids in (("token_table", tok), ("segment_table", seg), ("hae_table", hae)):
        if name != "hae_table" or config.use_hae:
            grads[name] = _scatter_rows(np.asarray(ids).ravel(), flat, params[name].shape[0])
        else:
            grads[name] = np.zeros_like(params[name])
    gpos = np.zeros_like(params["position_table"])
    gpos[: T.shape[1]] = dx0.sum(0)
    grads["position_table"] = gpos

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    return float(loss), {name: grads[name] for name in params}

"""Toy decoder-only transformer with exact hand-written backpropagation.

Architecture: token embedding, L pre-norm blocks (causal multi-head attention
with optional rotary positions, then a SwiGLU feedforward), a final RMSNorm,
and an untied unembedding. No biases, no dropout.

Each block computes
    x1 = x + attn(rmsnorm(x) * g_mha)
    y  = x1 + ffn(rmsnorm(x1) * g_ffn)
with ffn(h) = (silu(h Wg^T) * (h Wu^T)) Wd^T.

Two cache modes exist for the backward pass: CACHE_FULL keeps every
intermediate; CACHE_FFN_INPUT_ONLY keeps exactly the block input x and the
mid-block residual stream x1 (enough to recompute the feedforward side).
The forward computation is identical in both modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .linalg import seeded_gaussian

RMS_EPS = 1e-6
INIT_STD = 0.02

CACHE_FULL = "full"
CACHE_FFN_INPUT_ONLY = "ffn_input_only"

MHA_WEIGHT_KINDS = ("q", "k", "v", "o")
FFN_WEIGHT_KINDS = ("gate", "up", "down")
MATRIX_KINDS = MHA_WEIGHT_KINDS + FFN_WEIGHT_KINDS
# Canonical per-layer parameter order; norm scales ride with their sub-block.
LAYER_PARAM_KINDS = ("q", "k", "v", "o", "norm_mha", "gate", "up", "down", "norm_ffn")


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 64
    hidden: int = 32
    heads: int = 4
    ffn_intermediate: int = 64
    layers: int = 4
    seq_len: int = 32
    rope: bool = True

    def __post_init__(self):
        for name in ("vocab", "hidden", "heads", "ffn_intermediate", "layers", "seq_len"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if self.hidden % self.heads != 0:
            raise ContractViolation("hidden must be divisible by heads")
        if self.rope and (self.hidden // self.heads) % 2 != 0:
            raise ContractViolation("rotary positions need an even head dim")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class LayerWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    norm_mha: np.ndarray
    norm_ffn: np.ndarray

    def kind(self, name: str) -> np.ndarray:
        return getattr(self, _FIELD_OF_KIND[name])


_FIELD_OF_KIND = {
    "q": "w_q",
    "k": "w_k",
    "v": "w_v",
    "o": "w_o",
    "gate": "w_gate",
    "up": "w_up",
    "down": "w_down",
    "norm_mha": "norm_mha",
    "norm_ffn": "norm_ffn",
}


@dataclass
class ModelWeights:
    cfg: ModelConfig
    embedding: np.ndarray
    layers: list[LayerWeights]
    final_norm: np.ndarray
    unembedding: np.ndarray

    def named(self):
        """(name, array) pairs in the canonical parameter order."""
        yield "embedding", self.embedding
        for i, lw in enumerate(self.layers):
            for kind in LAYER_PARAM_KINDS:
                yield f"layers.{i}.{kind}", lw.kind(kind)
        yield "final_norm", self.final_norm
        yield "unembedding", self.unembedding

    def get(self, name: str) -> np.ndarray:
        if name == "embedding":
            return self.embedding
        if name == "final_norm":
            return self.final_norm
        if name == "unembedding":
            return self.unembedding
        _, idx, kind = name.split(".")
        return self.layers[int(idx)].kind(kind)

    def set(self, name: str, value: np.ndarray) -> None:
        if name == "embedding":
            self.embedding = value
        elif name == "final_norm":
            self.final_norm = value
        elif name == "unembedding":
            self.unembedding = value
        else:
            _, idx, kind = name.split(".")
            setattr(self.layers[int(idx)], _FIELD_OF_KIND[kind], value)

    def copy(self) -> "ModelWeights":
        out = init_weights(self.cfg, seed=0)
        for name, arr in self.named():
            out.set(name, arr.copy())
        return out


def init_weights(cfg: ModelConfig, seed: int, std: float = INIT_STD) -> ModelWeights:
    """N(0, std^2) matrices, unit norm scales; seeded and reproducible."""
    m, f, v = cfg.hidden, cfg.ffn_intermediate, cfg.vocab
    counter = [seed * 1000]

    def draw(rows, cols):
        counter[0] += 1
        return seeded_gaussian(rows, cols, 0.0, std, counter[0])

    layers = [
        LayerWeights(
            w_q=draw(m, m),
            w_k=draw(m, m),
            w_v=draw(m, m),
            w_o=draw(m, m),
            w_gate=draw(f, m),
            w_up=draw(f, m),
            w_down=draw(m, f),
            norm_mha=np.ones(m),
            norm_ffn=np.ones(m),
        )
        for _ in range(cfg.layers)
    ]
    return ModelWeights(
        cfg=cfg,
        embedding=draw(v, m),
        layers=layers,
        final_norm=np.ones(m),
        unembedding=draw(v, m),
    )


def zero_weights(cfg: ModelConfig) -> ModelWeights:
    w = init_weights(cfg, seed=0)
    for name, arr in w.named():
        if not name.endswith("norm_mha") and not name.endswith("norm_ffn") and name != "final_norm":
            w.set(name, np.zeros_like(arr))
    return w


# ---------------------------------------------------------------------------
# Kernels shared by the exact and the neighbor-mode backward paths
# ---------------------------------------------------------------------------


def rmsnorm_forward(x: np.ndarray, scale: np.ndarray):
    """Returns (scaled output, inverse rms per row)."""
    inv_rms = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    return (x * inv_rms) * scale, inv_rms


def rmsnorm_backward(x: np.ndarray, scale: np.ndarray, inv_rms: np.ndarray, d_out: np.ndarray):
    """Returns (dx, dscale) for y = (x * inv_rms) * scale."""
    m = x.shape[-1]
    d_scale = np.sum(d_out * x * inv_rms, axis=tuple(range(x.ndim - 1)))
    a = d_out * scale
    dx = a * inv_rms - x * (inv_rms ** 3) * (np.sum(a * x, axis=-1, keepdims=True) / m)
    return dx, d_scale


def _silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


def _silu_grad(z: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def ffn_forward(lw: LayerWeights, x1: np.ndarray) -> dict:
    """Feedforward intermediates from the mid-block stream x1.

    The same kernel serves the full-cache forward and neighbor-mode
    recomputation, so recomputed values are bit-identical to cached ones.
    """
    h2, inv_rms2 = rmsnorm_forward(x1, lw.norm_ffn)
    gate = h2 @ lw.w_gate.T
    up = h2 @ lw.w_up.T
    act = _silu(gate) * up
    down = act @ lw.w_down.T
    return {
        "inv_rms2": inv_rms2,
        "h2": h2,
        "gate": gate,
        "up": up,
        "act": act,
        "down": down,
    }


def _exact_wgrad(d_out2d: np.ndarray, inp2d: np.ndarray) -> np.ndarray:
    return d_out2d.T @ inp2d


def ffn_backward(lw: LayerWeights, x1: np.ndarray, inter: dict, d_out: np.ndarray, wgrad=None):
    """Backward through norm + SwiGLU given d(ffn output).

    `wgrad(kind, d_out2d, inp2d)` computes the weight gradient for one of
    gate/up/down; defaults to the exact product. Activation gradients and the
    norm-scale gradient are always exact. Returns (dx1_from_ffn, grads).
    """
    if wgrad is None:
        wgrad = lambda kind, d, inp: _exact_wgrad(d, inp)
    lead = d_out.shape[:-1]
    n_tok = int(np.prod(lead))
    d2 = d_out.reshape(n_tok, -1)
    h2_2d = inter["h2"].reshape(n_tok, -1)
    act2d = inter["act"].reshape(n_tok, -1)

    g_down = wgrad("down", d2, act2d)
    d_act = d_out @ lw.w_down

    silu_gate = _silu(inter["gate"])
    d_silu = d_act * inter["up"]
    d_up = d_act * silu_gate
    d_gate = d_silu * _silu_grad(inter["gate"])

    g_gate = wgrad("gate", d_gate.reshape(n_tok, -1), h2_2d)
    g_up = wgrad("up", d_up.reshape(n_tok, -1), h2_2d)

    d_h2 = d_gate @ lw.w_gate + d_up @ lw.w_up
    dx1, g_norm = rmsnorm_backward(x1, lw.norm_ffn, inter["inv_rms2"], d_h2)
    grads = {"gate": g_gate, "up": g_up, "down": g_down, "norm_ffn": g_norm}
    return dx1, grads


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

_ROPE_TABLES: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _rope_tables(seq: int, head_dim: int):
    key = (seq, head_dim)
    if key not in _ROPE_TABLES:
        j = np.arange(head_dim // 2)
        theta = 10000.0 ** (-2.0 * j / head_dim)
        angles = np.arange(seq)[:, None] * theta[None, :]
        _ROPE_TABLES[key] = (np.cos(angles), np.sin(angles))
    return _ROPE_TABLES[key]


def _rope_apply(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (B, H, T, d); tables: (T, d/2)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _rope_apply_transpose(d: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # The rotation is orthogonal, so the backward map is the inverse rotation.
    even = d[..., 0::2]
    odd = d[..., 1::2]
    out = np.empty_like(d)
    out[..., 0::2] = even * cos + odd * sin
    out[..., 1::2] = -even * sin + odd * cos
    return out


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, m = x.shape
    return x.reshape(b, t, heads, m // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    z = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def attention_forward(cfg: ModelConfig, lw: LayerWeights, h1: np.ndarray) -> dict:
    """Causal multi-head attention over the normed stream h1 (B, T, m)."""
    b, t, m = h1.shape
    q = _split_heads(h1 @ lw.w_q.T, cfg.heads)
    k = _split_heads(h1 @ lw.w_k.T, cfg.heads)
    v = _split_heads(h1 @ lw.w_v.T, cfg.heads)
    if cfg.rope:
        cos, sin = _rope_tables(t, cfg.head_dim)
        q = _rope_apply(q, cos, sin)
        k = _rope_apply(k, cos, sin)
    scores = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(cfg.head_dim)
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores = np.where(mask, -np.inf, scores)
    probs = _softmax_rows(scores)
    ctx = _merge_heads(probs @ v)
    attn_out = ctx @ lw.w_o.T
    return {"q": q, "k": k, "v": v, "probs": probs, "ctx": ctx, "attn_out": attn_out}


def attention_backward(cfg: ModelConfig, lw: LayerWeights, h1: np.ndarray, inter: dict, d_attn: np.ndarray):
    """Returns (d_h1, grads for q/k/v/o) given d(attention output)."""
    b, t, m = h1.shape
    n_tok = b * t
    h1_2d = h1.reshape(n_tok, m)

    g_o = d_attn.reshape(n_tok, m).T @ inter["ctx"].reshape(n_tok, m)
    d_ctx = _split_heads(d_attn @ lw.w_o, cfg.heads)

    probs = inter["probs"]
    d_probs = d_ctx @ inter["v"].transpose(0, 1, 3, 2)
    d_v = probs.transpose(0, 1, 3, 2) @ d_ctx
    d_scores = probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True))
    inv_sqrt = 1.0 / np.sqrt(cfg.head_dim)
    d_q = (d_scores @ inter["k"]) * inv_sqrt
    d_k = (d_scores.transpose(0, 1, 3, 2) @ inter["q"]) * inv_sqrt
    if cfg.rope:
        cos, sin = _rope_tables(t, cfg.head_dim)
        d_q = _rope_apply_transpose(d_q, cos, sin)
        d_k = _rope_apply_transpose(d_k, cos, sin)

    d_qm = _merge_heads(d_q).reshape(n_tok, m)
    d_km = _merge_heads(d_k).reshape(n_tok, m)
    d_vm = _merge_heads(d_v).reshape(n_tok, m)

    grads = {
        "q": d_qm.T @ h1_2d,
        "k": d_km.T @ h1_2d,
        "v": d_vm.T @ h1_2d,
        "o": g_o,
    }
    d_h1 = (d_qm @ lw.w_q + d_km @ lw.w_k + d_vm @ lw.w_v).reshape(b, t, m)
    return d_h1, grads


# ---------------------------------------------------------------------------
# Block-level forward/backward
# ---------------------------------------------------------------------------


@dataclass
class BlockCache:
    mode: str
    x: np.ndarray
    x1: np.ndarray
    full: dict | None = field(default=None, repr=False)


def _to_btm(cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        n_tok, m = x.shape
        if m != cfg.hidden or n_tok % cfg.seq_len != 0:
            raise ContractViolation(
                f"activations of shape {x.shape} do not match hidden={cfg.hidden}, "
                f"seq_len={cfg.seq_len}"
            )
        return x.reshape(n_tok // cfg.seq_len, cfg.seq_len, m)
    if x.ndim == 3:
        return x
    raise ContractViolation(f"activations must be 2-D or 3-D, got {x.ndim}-D")


def forward_block(cfg: ModelConfig, lw: LayerWeights, x, mode: str = CACHE_FULL):
    """One block. Output is identical across cache modes; only the cache differs."""
    if mode not in (CACHE_FULL, CACHE_FFN_INPUT_ONLY):
        raise ContractViolation(f"unknown cache mode {mode!r}")
    x3 = _to_btm(cfg, x)

    h1, inv_rms1 = rmsnorm_forward(x3, lw.norm_mha)
    attn = attention_forward(cfg, lw, h1)
    x1 = x3 + attn["attn_out"]
    ffn = ffn_forward(lw, x1)
    y = x1 + ffn["down"]

    if mode == CACHE_FULL:
        # The sub-block outputs are never read by the backward pass.
        attn = {k: v for k, v in attn.items() if k != "attn_out"}
        ffn = {k: v for k, v in ffn.items() if k != "down"}
        full = {"inv_rms1": inv_rms1, "h1": h1, "attn": attn, "ffn": ffn}
        cache = BlockCache(mode=mode, x=x3, x1=x1, full=full)
    else:
        cache = BlockCache(mode=mode, x=x3, x1=x1)
    return (y.reshape(x.shape) if x.ndim == 2 else y), cache


def backward_block_exact(cfg: ModelConfig, lw: LayerWeights, cache: BlockCache, dy):
    """Exact block backward. Requires a full cache; returns (dx, grads)."""
    if cache.mode != CACHE_FULL:
        raise ContractViolation("exact backward requires a full activation cache")
    dy3 = _to_btm(cfg, dy)
    full = cache.full

    dx1_ffn, grads = ffn_backward(lw, cache.x1, full["ffn"], dy3)
    dx1 = dy3 + dx1_ffn

    d_h1, mha_grads = attention_backward(cfg, lw, full["h1"], full["attn"], dx1)
    dx_norm, g_norm_mha = rmsnorm_backward(cache.x, lw.norm_mha, full["inv_rms1"], d_h1)
    dx = dx1 + dx_norm

    grads.update(mha_grads)
    grads["norm_mha"] = g_norm_mha
    return (dx.reshape(dy.shape) if dy.ndim == 2 else dx), grads


# ---------------------------------------------------------------------------
# Whole-model forward, loss
# ---------------------------------------------------------------------------


def forward_model(weights: ModelWeights, tokens: np.ndarray, modes=None):
    """Run the full model.

    tokens: (B, T) int array; modes: per-layer cache mode list (or None for
    full caches everywhere). Returns (logits (B*T, vocab), block caches,
    final-norm cache dict).
    """
    cfg = weights.cfg
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != cfg.seq_len:
        raise ContractViolation(f"tokens must be (batch, {cfg.seq_len})")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab:
        raise ContractViolation("token id out of vocabulary")
    if modes is None:
        modes = [CACHE_FULL] * cfg.layers
    if len(modes) != cfg.layers:
        raise ContractViolation("one cache mode per layer required")

    x = weights.embedding[tokens]
    caches = []
    for lw, mode in zip(weights.layers, modes):
        x, cache = forward_block(cfg, lw, x, mode)
        caches.append(cache)

    xf, inv_rms_f = rmsnorm_forward(x, weights.final_norm)
    xf2 = xf.reshape(-1, cfg.hidden)
    logits = xf2 @ weights.unembedding.T
    final_cache = {"x_last": x, "inv_rms_f": inv_rms_f, "xf2": xf2}
    return logits, caches, final_cache


def head_backward(weights: ModelWeights, final_cache: dict, dlogits: np.ndarray):
    """Backward through unembedding + final norm. Returns (dx_last, grads)."""
    cfg = weights.cfg
    x_last = final_cache["x_last"]
    g_unembed = dlogits.T @ final_cache["xf2"]
    d_xf = (dlogits @ weights.unembedding).reshape(x_last.shape)
    dx, g_final = rmsnorm_backward(x_last, weights.final_norm, final_cache["inv_rms_f"], d_xf)
    return dx, {"final_norm": g_final, "unembedding": g_unembed}


def embedding_backward(weights: ModelWeights, tokens: np.ndarray, dx0: np.ndarray) -> np.ndarray:
    g = np.zeros_like(weights.embedding)
    np.add.at(g, tokens.reshape(-1), dx0.reshape(-1, weights.cfg.hidden))
    return g


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean token-level cross entropy with log-sum-exp stabilization.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / n_tokens.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ContractViolation("logits/targets shapes are inconsistent")
    n = logits.shape[0]
    z = logits - np.max(logits, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = -float(np.mean(log_probs[np.arange(n), targets]))
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    return loss, dlogits

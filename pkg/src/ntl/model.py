"""Small decoder-only transformer in numpy with a hand-written backward pass.

Pre-layernorm residual blocks, GELU MLP, learned positions, untied output
head and no dropout. Parameters live in a plain dict whose insertion order
is the declaration order used by checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

Params = dict  # name -> ndarray


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context_length: int = 64
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    seed: int = 0
    precision: int = 32

    def __post_init__(self):
        for name in ("vocab_size", "context_length", "d_model", "n_heads", "n_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.precision not in (32, 64):
            raise ModelError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, F = cfg.d_model, cfg.d_ff
    shapes = {"tok_emb": (cfg.vocab_size, D), "pos_emb": (cfg.context_length, D)}
    for l in range(cfg.n_layers):
        shapes.update({
            f"l{l}.ln1.g": (D,), f"l{l}.ln1.b": (D,),
            f"l{l}.wq": (D, D), f"l{l}.wk": (D, D), f"l{l}.wv": (D, D), f"l{l}.wo": (D, D),
            f"l{l}.ln2.g": (D,), f"l{l}.ln2.b": (D,),
            f"l{l}.w1": (D, F), f"l{l}.b1": (F,), f"l{l}.w2": (F, D), f"l{l}.b2": (D,),
        })
    shapes.update({"lnf.g": (D,), "lnf.b": (D,), "head": (D, cfg.vocab_size)})
    return shapes


def init_params(cfg: ModelConfig) -> Params:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf.startswith("b") and len(shape) == 1:
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = arr.astype(cfg.dtype)
    return params


# ------------------------------------------------------------------ pieces


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * (u * u * u)))
    return 0.5 * u * (1.0 + t), t


def _gelu_grad(u, t):
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def _split(x, H):
    B, T, D = x.shape
    return x.reshape(B, T, H, D // H).transpose(0, 2, 1, 3)


def _merge(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# ----------------------------------------------------------------- forward


@dataclass
class ForwardCache:
    ids: np.ndarray
    pos: np.ndarray
    allowed: np.ndarray
    layers: list = field(default_factory=list)
    lnf: tuple | None = None
    hf: np.ndarray | None = None


def _positions(pad_mask):
    return np.maximum(np.cumsum(~pad_mask, axis=1) - 1, 0)


def forward(params: Params, cfg: ModelConfig, tokens, pad_mask=None):
    """Logits of shape ``(B, T, vocab)`` and the cache needed by :func:`backward`.

    Padded positions still get logits; non-padded positions never attend to
    padding, and positions are counted from the first non-padded token.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, T = ids.shape
    if T > cfg.context_length:
        raise ModelError(f"sequence length {T} exceeds context length {cfg.context_length}")
    pad = np.zeros((B, T), dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool).reshape(B, T)
    pos = _positions(pad)
    causal = np.tril(np.ones((T, T), dtype=bool))
    allowed = causal[None] & (~pad[:, None, :] | np.eye(T, dtype=bool)[None])
    neg = np.where(allowed, 0.0, -np.inf).astype(cfg.dtype)[:, None]  # (B,1,T,T)

    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.d_model // H)
    x = params["tok_emb"][ids] + params["pos_emb"][pos]
    cache = ForwardCache(ids=ids, pos=pos, allowed=allowed)
    for l in range(cfg.n_layers):
        p = lambda k: params[f"l{l}.{k}"]  # noqa: E731
        h, ln1 = _ln_fwd(x, p("ln1.g"), p("ln1.b"))
        q, k, v = _split(h @ p("wq"), H), _split(h @ p("wk"), H), _split(h @ p("wv"), H)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale + neg
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        o = _merge(a @ v)
        x = x + o @ p("wo")
        h2, ln2 = _ln_fwd(x, p("ln2.g"), p("ln2.b"))
        u = h2 @ p("w1") + p("b1")
        gu, t = _gelu(u)
        x = x + gu @ p("w2") + p("b2")
        cache.layers.append((h, ln1, q, k, v, a, o, h2, ln2, u, gu, t))
    hf, lnf = _ln_fwd(x, params["lnf.g"], params["lnf.b"])
    cache.lnf, cache.hf = lnf, hf
    return hf @ params["head"], cache


def backward(params: Params, cfg: ModelConfig, cache: ForwardCache, dlogits) -> Params:
    """Gradients of ``sum(dlogits * logits)`` with respect to every parameter."""
    dlogits = np.asarray(dlogits, dtype=cfg.dtype)
    B, T = cache.ids.shape
    if dlogits.shape != (B, T, cfg.vocab_size):
        raise ModelError(f"dlogits shape {dlogits.shape} does not match forward output {(B, T, cfg.vocab_size)}")
    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.d_model // H)
    grads: Params = {}
    grads["head"] = _flat(cache.hf).T @ _flat(dlogits)
    dhf = dlogits @ params["head"].T
    dx, grads["lnf.g"], grads["lnf.b"] = _ln_bwd(dhf, params["lnf.g"], cache.lnf)
    for l in reversed(range(cfg.n_layers)):
        p = lambda k: params[f"l{l}.{k}"]  # noqa: E731
        h, ln1, q, k, v, a, o, h2, ln2, u, gu, t = cache.layers[l]
        # MLP
        grads[f"l{l}.b2"] = _flat(dx).sum(axis=0)
        grads[f"l{l}.w2"] = _flat(gu).T @ _flat(dx)
        du = (dx @ p("w2").T) * _gelu_grad(u, t)
        grads[f"l{l}.b1"] = _flat(du).sum(axis=0)
        grads[f"l{l}.w1"] = _flat(h2).T @ _flat(du)
        dh2 = du @ p("w1").T
        d, grads[f"l{l}.ln2.g"], grads[f"l{l}.ln2.b"] = _ln_bwd(dh2, p("ln2.g"), ln2)
        dx = dx + d
        # attention
        grads[f"l{l}.wo"] = _flat(o).T @ _flat(dx)
        do = _split(dx @ p("wo").T, H)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dq, dk, dv = _merge(dq), _merge(dk), _merge(dv)
        hf = _flat(h).T
        grads[f"l{l}.wq"] = hf @ _flat(dq)
        grads[f"l{l}.wk"] = hf @ _flat(dk)
        grads[f"l{l}.wv"] = hf @ _flat(dv)
        dh = dq @ p("wq").T + dk @ p("wk").T + dv @ p("wv").T
        d, grads[f"l{l}.ln1.g"], grads[f"l{l}.ln1.b"] = _ln_bwd(dh, p("ln1.g"), ln1)
        dx = dx + d
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, cache.ids.reshape(-1), _flat(dx))
    dpos = np.zeros_like(params["pos_emb"])
    np.add.at(dpos, cache.pos.reshape(-1), _flat(dx))
    grads["tok_emb"], grads["pos_emb"] = dtok, dpos
    return {name: grads[name].astype(cfg.dtype, copy=False) for name in params}


# --------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int
    m: Params
    v: Params

    @classmethod
    def zeros(cls, params: Params) -> "AdamState":
        return cls(0, {k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.01):
    """AdamW update in place: decoupled decay, then the bias-corrected step."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return params, state


# --------------------------------------------------------------- decoding


def generate_greedy(params: Params, cfg: ModelConfig, prompt, max_new: int, stop_token: int | None = None) -> list[int]:
    """Argmax decoding of one prompt; ties go to the lowest token id."""
    return generate_batch(params, cfg, [prompt], max_new, stop_token)[0]


def generate_batch(params: Params, cfg: ModelConfig, prompts, max_new: int,
                   stop_token: int | None = None, pad_id: int = 0) -> list[list[int]]:
    """Greedy decoding of several prompts at once via left padding.

    Returns each prompt followed by its generated tokens (stop token included).
    """
    seqs = [list(p) for p in prompts]
    done = [False] * len(seqs)
    for _ in range(max_new):
        live = [i for i, d in enumerate(done) if not d and len(seqs[i]) < cfg.context_length]
        if not live:
            break
        width = max(len(seqs[i]) for i in live)
        ids = np.full((len(live), width), pad_id, dtype=np.int64)
        pad = np.ones((len(live), width), dtype=bool)
        for r, i in enumerate(live):
            ids[r, width - len(seqs[i]):] = seqs[i]
            pad[r, width - len(seqs[i]):] = False
        logits, _ = forward(params, cfg, ids, pad)
        nxt = np.argmax(logits[:, -1, :], axis=-1)
        for r, i in enumerate(live):
            tok = int(nxt[r])
            seqs[i].append(tok)
            if stop_token is not None and tok == stop_token:
                done[i] = True
    return seqs

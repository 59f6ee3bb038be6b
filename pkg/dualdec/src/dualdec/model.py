"""Dual-decoder transformer in plain numpy with hand-written gradients.

One weight-shared decoder stack serves two passes: the guided-context pass
produces hidden states H_g, and the prompt pass runs the same blocks with an
extra cross-attention step (queries from the prompt states, keys/values from
H_g). Only prompt positions produce logits; the guided context influences
generation through cross-attention alone.

Everything is float64 so the finite-difference gradient check is meaningful.
"""
from __future__ import annotations

import numpy as np

from .config import PAD_ID, DualDecoderConfig

LN_EPS = 1e-5


class ModelError(Exception):
    pass


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_params(config: DualDecoderConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    d, f = config.d_model, 4 * config.d_model
    scale = 1.0 / np.sqrt(d)

    def mat(*shape):
        return rng.normal(0.0, scale, size=shape)

    params: dict[str, np.ndarray] = {
        "tok_emb": mat(config.vocab_size, d),
        "pos_emb": mat(config.max_len, d),
        "ln_f.g": np.ones(d), "ln_f.b": np.zeros(d),
        "w_out": mat(d, config.vocab_size),
    }
    for l in range(config.n_layers):
        params[f"l{l}.ln1.g"] = np.ones(d)
        params[f"l{l}.ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"l{l}.attn.{name}"] = mat(d, d)
        params[f"l{l}.ln2.g"] = np.ones(d)
        params[f"l{l}.ln2.b"] = np.zeros(d)
        params[f"l{l}.ffn.w1"] = mat(d, f)
        params[f"l{l}.ffn.b1"] = np.zeros(f)
        params[f"l{l}.ffn.w2"] = mat(f, d)
        params[f"l{l}.ffn.b2"] = np.zeros(d)
    for l in config.cross_attn_layers:
        params[f"l{l}.xln.g"] = np.ones(d)
        params[f"l{l}.xln.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"l{l}.xattn.{name}"] = mat(d, d)
    return params


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return sum(int(p.size) for p in params.values())


# ---------------------------------------------------------------------------
# primitive ops (forward + backward)
# ---------------------------------------------------------------------------

def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (dxhat
                - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _attn_forward(x_q, x_kv, wq, wk, wv, wo, n_heads, allowed):
    """Multi-head attention; ``allowed`` is a boolean (B, Tq, Tk) mask.
    Rows with no allowed key produce exactly zero output."""
    dh = x_q.shape[-1] // n_heads
    q = _split_heads(x_q @ wq, n_heads)
    k = _split_heads(x_kv @ wk, n_heads)
    v = _split_heads(x_kv @ wv, n_heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(dh)
    mask = allowed[:, None, :, :]
    scores = np.where(mask, scores, -1e30)
    scores_max = scores.max(-1, keepdims=True)
    exp = np.exp(scores - scores_max)
    exp = np.where(mask, exp, 0.0)
    denom = exp.sum(-1, keepdims=True)
    weights = exp / np.maximum(denom, 1e-30)
    ctx = weights @ v
    merged = _merge_heads(ctx)
    out = merged @ wo
    cache = (x_q, x_kv, q, k, v, weights, merged, wq, wk, wv, wo, n_heads, dh)
    return out, weights, cache


def _attn_backward(dout, cache):
    x_q, x_kv, q, k, v, weights, merged, wq, wk, wv, wo, n_heads, dh = cache
    dwo = merged.reshape(-1, merged.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    dmerged = dout @ wo.T
    dctx = _split_heads(dmerged, n_heads)
    dweights = dctx @ v.transpose(0, 1, 3, 2)
    dv = weights.transpose(0, 1, 3, 2) @ dctx
    dscores = weights * (dweights - (dweights * weights).sum(-1, keepdims=True))
    dscores /= np.sqrt(dh)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    flat = lambda a: a.reshape(-1, a.shape[-1])
    dwq = flat(x_q).T @ flat(dq_m)
    dwk = flat(x_kv).T @ flat(dk_m)
    dwv = flat(x_kv).T @ flat(dv_m)
    dx_q = dq_m @ wq.T
    dx_kv = dk_m @ wk.T + dv_m @ wv.T
    return dx_q, dx_kv, {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}


def _ffn_forward(x, w1, b1, w2, b2):
    a = x @ w1 + b1
    h = np.maximum(a, 0.0)
    out = h @ w2 + b2
    return out, (x, a, h, w1, w2)


def _ffn_backward(dout, cache):
    x, a, h, w1, w2 = cache
    flat = lambda t: t.reshape(-1, t.shape[-1])
    dw2 = flat(h).T @ flat(dout)
    db2 = dout.sum(axis=(0, 1))
    dh = dout @ w2.T
    da = dh * (a > 0.0)
    dw1 = flat(x).T @ flat(da)
    db1 = da.sum(axis=(0, 1))
    dx = da @ w1.T
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


# ---------------------------------------------------------------------------
# decoder stack (shared between the guided pass and the prompt pass)
# ---------------------------------------------------------------------------

def _check_tokens(tokens, config):
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ModelError(f"token batch must be 2-D, got shape {tokens.shape}")
    if tokens.shape[1] > config.max_len:
        raise ModelError(f"sequence length {tokens.shape[1]} exceeds max_len {config.max_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise ModelError(f"token id out of range for vocab_size {config.vocab_size}")
    return tokens.astype(np.int64)


def _self_mask(tokens, causal: bool):
    b, t = tokens.shape
    keymask = tokens != PAD_ID
    allowed = np.broadcast_to(keymask[:, None, :], (b, t, t)).copy()
    if causal:
        allowed &= np.tril(np.ones((t, t), dtype=bool))[None, :, :]
    return allowed


def _stack_forward(params, config, tokens, hg=None, hg_keymask=None, causal=True,
                   collect_attn=False):
    tokens = _check_tokens(tokens, config)
    b, t = tokens.shape
    x = params["tok_emb"][tokens] + params["pos_emb"][:t][None, :, :]
    self_allowed = _self_mask(tokens, causal)
    caches = {"tokens": tokens, "layers": []}
    attn_maps = []
    for l in range(config.n_layers):
        layer_cache = {}
        ln1_out, layer_cache["ln1"] = _ln_forward(x, params[f"l{l}.ln1.g"], params[f"l{l}.ln1.b"])
        attn_out, self_w, layer_cache["attn"] = _attn_forward(
            ln1_out, ln1_out,
            params[f"l{l}.attn.wq"], params[f"l{l}.attn.wk"],
            params[f"l{l}.attn.wv"], params[f"l{l}.attn.wo"],
            config.n_heads, self_allowed)
        x = x + attn_out
        layer_cache["cross"] = None
        if hg is not None and l in config.cross_attn_layers:
            xln_out, layer_cache["xln"] = _ln_forward(
                x, params[f"l{l}.xln.g"], params[f"l{l}.xln.b"])
            allowed = np.broadcast_to(hg_keymask[:, None, :], (b, t, hg.shape[1]))
            cross_out, cross_w, cross_cache = _attn_forward(
                xln_out, hg,
                params[f"l{l}.xattn.wq"], params[f"l{l}.xattn.wk"],
                params[f"l{l}.xattn.wv"], params[f"l{l}.xattn.wo"],
                config.n_heads, allowed)
            x = x + cross_out
            layer_cache["cross"] = cross_cache
            if collect_attn:
                attn_maps.append({"layer": l, "self": self_w, "cross": cross_w})
        elif collect_attn:
            attn_maps.append({"layer": l, "self": self_w, "cross": None})
        ln2_out, layer_cache["ln2"] = _ln_forward(x, params[f"l{l}.ln2.g"], params[f"l{l}.ln2.b"])
        ffn_out, layer_cache["ffn"] = _ffn_forward(
            ln2_out, params[f"l{l}.ffn.w1"], params[f"l{l}.ffn.b1"],
            params[f"l{l}.ffn.w2"], params[f"l{l}.ffn.b2"])
        x = x + ffn_out
        caches["layers"].append(layer_cache)
    return x, caches, attn_maps


def _stack_backward(dx, params, config, caches, grads, has_cross):
    """Backprop through the shared stack; returns (d_embedding_input, dH_g)."""
    dhg = None
    for l in reversed(range(config.n_layers)):
        layer_cache = caches["layers"][l]
        dffn_in, ffn_grads = _ffn_backward(dx, layer_cache["ffn"])
        for name, grad in ffn_grads.items():
            grads[f"l{l}.ffn.{name}"] += grad
        dln2_in, dg, db = _ln_backward(dffn_in, layer_cache["ln2"])
        grads[f"l{l}.ln2.g"] += dg
        grads[f"l{l}.ln2.b"] += db
        dx = dx + dln2_in

        if has_cross and layer_cache["cross"] is not None:
            dxq, dkv, attn_grads = _attn_backward(dx, layer_cache["cross"])
            for name, grad in attn_grads.items():
                grads[f"l{l}.xattn.{name}"] += grad
            if dhg is None:
                dhg = dkv
            else:
                dhg = dhg + dkv
            dxln_in, dg, db = _ln_backward(dxq, layer_cache["xln"])
            grads[f"l{l}.xln.g"] += dg
            grads[f"l{l}.xln.b"] += db
            dx = dx + dxln_in

        dq_in, dkv_in, attn_grads = _attn_backward(dx, layer_cache["attn"])
        for name, grad in attn_grads.items():
            grads[f"l{l}.attn.{name}"] += grad
        dln1_in, dg, db = _ln_backward(dq_in + dkv_in, layer_cache["ln1"])
        grads[f"l{l}.ln1.g"] += dg
        grads[f"l{l}.ln1.b"] += db
        dx = dx + dln1_in

    tokens = caches["tokens"]
    np.add.at(grads["tok_emb"], tokens, dx)
    grads["pos_emb"][: tokens.shape[1]] += dx.sum(axis=0)
    return dhg


# ---------------------------------------------------------------------------
# public model surface
# ---------------------------------------------------------------------------

def encode_guided(guided_tokens, params, config: DualDecoderConfig):
    """Run the shared stack over the guided context; no logits, no loss."""
    hg, _, _ = _stack_forward(params, config, guided_tokens,
                              causal=not config.bidirectional_guided)
    return hg


def cross_attention(h_p, h_g, params, config: DualDecoderConfig, layer: int = None,
                    hg_keymask=None):
    """One cross-attention application (query: prompt states, key/value: guided
    states) with residual add; exposed for inspection and tests."""
    if layer is None:
        layer = config.cross_attn_layers[0]
    if h_p.shape[-1] != h_g.shape[-1] or h_p.shape[0] != h_g.shape[0]:
        raise ModelError(f"shape mismatch: H_p {h_p.shape} vs H_g {h_g.shape}")
    b, tq, _ = h_p.shape
    if hg_keymask is None:
        hg_keymask = np.ones((b, h_g.shape[1]), dtype=bool)
    xln_out, _ = _ln_forward(h_p, params[f"l{layer}.xln.g"], params[f"l{layer}.xln.b"])
    allowed = np.broadcast_to(hg_keymask[:, None, :], (b, tq, h_g.shape[1]))
    out, weights, _ = _attn_forward(
        xln_out, h_g,
        params[f"l{layer}.xattn.wq"], params[f"l{layer}.xattn.wk"],
        params[f"l{layer}.xattn.wv"], params[f"l{layer}.xattn.wo"],
        config.n_heads, allowed)
    return h_p + out, weights


class ForwardResult:
    def __init__(self, logits, loss, caches, attn_maps):
        self.logits = logits
        self.loss = loss
        self.caches = caches
        self.attn_maps = attn_maps


def forward(batch_prompt, batch_guided, params, config: DualDecoderConfig,
            targets=None, collect_attn=False) -> ForwardResult:
    """Full dual-decoder pass; logits cover prompt positions only."""
    guided_tokens = _check_tokens(batch_guided, config)
    hg, guided_caches, _ = _stack_forward(params, config, guided_tokens,
                                          causal=not config.bidirectional_guided)
    hg_keymask = guided_tokens != PAD_ID
    hp, prompt_caches, attn_maps = _stack_forward(
        params, config, batch_prompt, hg=hg, hg_keymask=hg_keymask,
        causal=True, collect_attn=collect_attn)
    final, ln_f_cache = _ln_forward(hp, params["ln_f.g"], params["ln_f.b"])
    logits = final @ params["w_out"]
    if not np.isfinite(logits).all():
        raise ModelError("non-finite values in logits")

    loss = None
    loss_cache = None
    if targets is not None:
        targets = np.asarray(targets, dtype=np.int64)
        mask = targets >= 0
        count = int(mask.sum())
        if count == 0:
            raise ModelError("no target positions in batch")
        shifted = logits - logits.max(-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(-1, keepdims=True))
        logprobs = shifted - logz
        picked = np.where(mask, np.take_along_axis(
            logprobs, np.maximum(targets, 0)[..., None], axis=-1)[..., 0], 0.0)
        loss = -picked.sum() / count
        loss_cache = (logprobs, targets, mask, count)

    caches = {
        "guided": guided_caches, "prompt": prompt_caches, "hg": hg,
        "hg_keymask": hg_keymask, "ln_f": ln_f_cache, "final": final,
        "loss": loss_cache,
    }
    return ForwardResult(logits, loss, caches, attn_maps)


def zero_grads(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def loss_and_grads(batch_prompt, batch_guided, targets, params,
                   config: DualDecoderConfig):
    result = forward(batch_prompt, batch_guided, params, config, targets=targets)
    logprobs, tgt, mask, count = result.caches["loss"]
    dlogits = np.exp(logprobs)
    onehot_rows = np.zeros_like(dlogits)
    np.put_along_axis(onehot_rows, np.maximum(tgt, 0)[..., None], 1.0, axis=-1)
    dlogits = (dlogits - onehot_rows) * mask[..., None] / count

    grads = zero_grads(params)
    grads["w_out"] += result.caches["final"].reshape(-1, result.caches["final"].shape[-1]).T \
        @ dlogits.reshape(-1, dlogits.shape[-1])
    dfinal = dlogits @ params["w_out"].T
    dhp, dg, db = _ln_backward(dfinal, result.caches["ln_f"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    dhg = _stack_backward(dhp, params, config, result.caches["prompt"], grads,
                          has_cross=True)
    if dhg is not None:
        leftover = _stack_backward(dhg, params, config, result.caches["guided"], grads,
                                   has_cross=False)
        assert leftover is None
    return result.loss, grads


def generate(prompt_tokens, guided_tokens, params, config: DualDecoderConfig,
             max_new: int):
    """Greedy decoding: guided states computed once, prompt stream grows."""
    if max_new <= 0:
        raise ModelError(f"max_new must be positive, got {max_new}")
    guided_tokens = _check_tokens(guided_tokens, config)
    hg = encode_guided(guided_tokens, params, config)
    hg_keymask = guided_tokens != PAD_ID
    stream = _check_tokens(prompt_tokens, config)
    for _ in range(max_new):
        if stream.shape[1] >= config.max_len:
            break
        hp, _, _ = _stack_forward(params, config, stream, hg=hg,
                                  hg_keymask=hg_keymask, causal=True)
        final, _ = _ln_forward(hp, params["ln_f.g"], params["ln_f.b"])
        logits = final @ params["w_out"]
        nxt = logits[:, -1, :].argmax(-1)
        stream = np.concatenate([stream, nxt[:, None]], axis=1)
    return stream

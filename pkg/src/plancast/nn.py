"""Numpy neural-network primitives with hand-written backward passes.

Two sequence models share one interface: a causal self-attention stack and
a single-layer gated recurrent network. Both map an (n, d) row sequence to
(n, d) outputs where output j is the predicted representation of row j+1.

All heavy paths are batched: training runs right-padded (B, n, d) batches
with per-sequence lengths (padded rows receive no loss and are masked out
of attention), and decoding keeps per-sequence key/value caches that can
be stacked to score many beams or candidate continuations in one call.
Single-sequence entry points are thin wrappers over the batch ones.

Arrays are float64 and every initializer draws Gaussian(0, 0.02) from an
explicit generator, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "softmax",
    "TransformerSeq",
    "RecurrentSeq",
    "Adam",
    "clip_global_norm",
    "flatten_params",
    "unflatten_params",
]

_LN_EPS = 1e-5
_NEG = -1e30  # additive mask value; large but finite keeps softmax NaN-free


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, cache, g):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _gauss(rng, *shape):
    return rng.normal(0.0, 0.02, size=shape)


def _flat_mm(x, y):
    """Contraction (B, n, d) x (B, n, e) -> (d, e) through one BLAS call."""
    return x.reshape(-1, x.shape[-1]).T @ y.reshape(-1, y.shape[-1])


class TransformerSeq:
    """Pre-norm causal self-attention stack with learned positions."""

    def __init__(self, d: int, n_layers: int, n_heads: int, max_len: int, rng):
        if d % n_heads != 0:
            raise ValueError("head count must divide the model dimension")
        self.d, self.n_layers, self.n_heads, self.max_len = d, n_layers, n_heads, max_len
        self.head_dim = d // n_heads
        p = {"pos": _gauss(rng, max_len, d)}
        for i in range(n_layers):
            p[f"l{i}.ln1_g"] = np.ones(d)
            p[f"l{i}.ln1_b"] = np.zeros(d)
            for name in ("wq", "wk", "wv", "wo"):
                p[f"l{i}.{name}"] = _gauss(rng, d, d)
            for name in ("bq", "bk", "bv", "bo"):
                p[f"l{i}.{name}"] = np.zeros(d)
            p[f"l{i}.ln2_g"] = np.ones(d)
            p[f"l{i}.ln2_b"] = np.zeros(d)
            p[f"l{i}.w1"] = _gauss(rng, d, 4 * d)
            p[f"l{i}.b1"] = np.zeros(4 * d)
            p[f"l{i}.w2"] = _gauss(rng, 4 * d, d)
            p[f"l{i}.b2"] = np.zeros(d)
        p["lnf_g"] = np.ones(d)
        p["lnf_b"] = np.zeros(d)
        self.params = p

    def _heads(self, x):
        return x.reshape(*x.shape[:-1], self.n_heads, self.head_dim)

    # -- training path ---------------------------------------------------

    def forward_batch(self, X: np.ndarray, lengths):
        """Forward over a right-padded (B, n, d) batch.

        Padded rows are excluded from attention as keys; their own outputs
        are garbage by construction and must not receive loss.
        """
        B, n, _ = X.shape
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        lengths = np.asarray(lengths, dtype=int)
        p = self.params
        scale = 1.0 / np.sqrt(self.head_dim)
        x = X + p["pos"][:n]
        causal = np.tril(np.ones((n, n), dtype=bool))
        key_ok = np.arange(n)[None, :] < lengths[:, None]  # (B, n)
        bias = np.where(causal[None, :, :] & key_ok[:, None, :], 0.0, _NEG)[:, None]
        layer_caches = []
        for i in range(self.n_layers):
            y1, ln1c = _ln_forward(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
            qh = self._heads(y1 @ p[f"l{i}.wq"] + p[f"l{i}.bq"]).transpose(0, 2, 1, 3)
            kh = self._heads(y1 @ p[f"l{i}.wk"] + p[f"l{i}.bk"]).transpose(0, 2, 1, 3)
            vh = self._heads(y1 @ p[f"l{i}.wv"] + p[f"l{i}.bv"]).transpose(0, 2, 1, 3)
            scores = qh @ kh.swapaxes(-1, -2) * scale + bias
            att = softmax(scores, axis=-1)
            ctx = (att @ vh).transpose(0, 2, 1, 3).reshape(B, n, self.d)
            attn_out = ctx @ p[f"l{i}.wo"] + p[f"l{i}.bo"]
            x2 = x + attn_out
            y2, ln2c = _ln_forward(x2, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
            m1 = y2 @ p[f"l{i}.w1"] + p[f"l{i}.b1"]
            a = np.tanh(m1)
            m2 = a @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
            layer_caches.append((ln1c, y1, qh, kh, vh, att, ctx, x2, ln2c, y2, a))
            x = x2 + m2
        y, lnfc = _ln_forward(x, p["lnf_g"], p["lnf_b"])
        return y, (B, n, layer_caches, lnfc)

    def backward_batch(self, dY: np.ndarray, cache):
        B, n, layer_caches, lnfc = cache
        p = self.params
        scale = 1.0 / np.sqrt(self.head_dim)
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dx, dg, db = _ln_backward(dY, lnfc, p["lnf_g"])
        grads["lnf_g"] += dg
        grads["lnf_b"] += db
        for i in reversed(range(self.n_layers)):
            ln1c, y1, qh, kh, vh, att, ctx, x2, ln2c, y2, a = layer_caches[i]
            dm2 = dx
            grads[f"l{i}.w2"] += _flat_mm(a, dm2)
            grads[f"l{i}.b2"] += dm2.sum(axis=(0, 1))
            dm1 = (dm2 @ p[f"l{i}.w2"].T) * (1.0 - a * a)
            grads[f"l{i}.w1"] += _flat_mm(y2, dm1)
            grads[f"l{i}.b1"] += dm1.sum(axis=(0, 1))
            dy2 = dm1 @ p[f"l{i}.w1"].T
            dx2_ln, dg, db = _ln_backward(dy2, ln2c, p[f"l{i}.ln2_g"])
            grads[f"l{i}.ln2_g"] += dg
            grads[f"l{i}.ln2_b"] += db
            dx2 = dx + dx2_ln
            d_attn = dx2
            grads[f"l{i}.wo"] += _flat_mm(ctx, d_attn)
            grads[f"l{i}.bo"] += d_attn.sum(axis=(0, 1))
            dctx = self._heads(d_attn @ p[f"l{i}.wo"].T).transpose(0, 2, 1, 3)
            datt = dctx @ vh.swapaxes(-1, -2)
            dvh = att.swapaxes(-1, -2) @ dctx
            ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dqh = (ds @ kh) * scale
            dkh = (ds.swapaxes(-1, -2) @ qh) * scale
            dq = dqh.transpose(0, 2, 1, 3).reshape(B, n, self.d)
            dk = dkh.transpose(0, 2, 1, 3).reshape(B, n, self.d)
            dv = dvh.transpose(0, 2, 1, 3).reshape(B, n, self.d)
            grads[f"l{i}.wq"] += _flat_mm(y1, dq)
            grads[f"l{i}.bq"] += dq.sum(axis=(0, 1))
            grads[f"l{i}.wk"] += _flat_mm(y1, dk)
            grads[f"l{i}.bk"] += dk.sum(axis=(0, 1))
            grads[f"l{i}.wv"] += _flat_mm(y1, dv)
            grads[f"l{i}.bv"] += dv.sum(axis=(0, 1))
            dy1 = dq @ p[f"l{i}.wq"].T + dk @ p[f"l{i}.wk"].T + dv @ p[f"l{i}.wv"].T
            dx1_ln, dg, db = _ln_backward(dy1, ln1c, p[f"l{i}.ln1_g"])
            grads[f"l{i}.ln1_g"] += dg
            grads[f"l{i}.ln1_b"] += db
            dx = dx2 + dx1_ln
        grads["pos"][:n] += dx.sum(axis=0)
        return dx.copy(), grads

    def forward(self, X: np.ndarray):
        n = X.shape[0]
        y, cache = self.forward_batch(X[None], [n])
        return y[0], cache

    def backward(self, dY: np.ndarray, cache):
        dX, grads = self.backward_batch(dY[None], cache)
        return dX[0], grads

    # -- decoding path -----------------------------------------------------

    def empty_cache(self):
        shape = (0, self.n_heads, self.head_dim)
        return [(np.zeros(shape), np.zeros(shape)) for _ in range(self.n_layers)]

    def stack_caches(self, caches: list):
        """Right-pad per-sequence caches into per-layer (B, cap, h, e) arrays."""
        lens = np.array([c[0][0].shape[0] for c in caches], dtype=int)
        cap = int(lens.max()) if len(lens) else 0
        stacked = []
        for i in range(self.n_layers):
            k = np.zeros((len(caches), cap, self.n_heads, self.head_dim))
            v = np.zeros_like(k)
            for b, c in enumerate(caches):
                k[b, : lens[b]] = c[i][0]
                v[b, : lens[b]] = c[i][1]
            stacked.append((k, v))
        return stacked, lens

    def unstack_caches(self, stacked, lens):
        out = []
        for b in range(len(lens)):
            out.append([(k[b, : lens[b]].copy(), v[b, : lens[b]].copy()) for k, v in stacked])
        return out

    def _decode_block(self, i, x, k_past, v_past, bias_past, within_bias):
        """One layer applied to new rows ``x`` (..., t, d) given padded past."""
        p = self.params
        scale = 1.0 / np.sqrt(self.head_dim)
        y1, _ = _ln_forward(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
        qh = self._heads(y1 @ p[f"l{i}.wq"] + p[f"l{i}.bq"])
        kh = self._heads(y1 @ p[f"l{i}.wk"] + p[f"l{i}.bk"])
        vh = self._heads(y1 @ p[f"l{i}.wv"] + p[f"l{i}.bv"])
        kp = k_past.transpose(0, 2, 1, 3)  # (B, h, n_past, e)
        vp = v_past.transpose(0, 2, 1, 3)
        n_past = k_past.shape[1]
        if x.ndim == 3:  # (B, t, d)
            q = qh.transpose(0, 2, 1, 3)  # (B, h, t, e)
            kn = kh.transpose(0, 2, 1, 3)
            vn = vh.transpose(0, 2, 1, 3)
            s_past = q @ kp.swapaxes(-1, -2) * scale + bias_past[:, None]
            s_new = q @ kn.swapaxes(-1, -2) * scale + within_bias
            att = softmax(np.concatenate([s_past, s_new], axis=-1), axis=-1)
            ctx = att[..., :n_past] @ vp + att[..., n_past:] @ vn
            ctx = ctx.transpose(0, 2, 1, 3)
        else:  # (B, C, t, d) candidates sharing each sequence's past
            Bq, C, t = x.shape[0], x.shape[1], x.shape[2]
            q = qh.transpose(0, 3, 1, 2, 4).reshape(Bq, self.n_heads, C * t, self.head_dim)
            s_past = (q @ kp.swapaxes(-1, -2) * scale).reshape(
                Bq, self.n_heads, C, t, n_past
            ).transpose(0, 2, 1, 3, 4) + bias_past[:, None, None]
            kn = kh.transpose(0, 1, 3, 2, 4)  # (B, C, h, t, e)
            vn = vh.transpose(0, 1, 3, 2, 4)
            qc = qh.transpose(0, 1, 3, 2, 4)
            s_new = qc @ kn.swapaxes(-1, -2) * scale + within_bias
            att = softmax(np.concatenate([s_past, s_new], axis=-1), axis=-1)
            ap = att[..., :n_past].transpose(0, 2, 1, 3, 4).reshape(
                Bq, self.n_heads, C * t, n_past
            )
            ctx = (ap @ vp).reshape(Bq, self.n_heads, C, t, self.head_dim).transpose(0, 2, 3, 1, 4)
            ctx = ctx + (att[..., n_past:] @ vn).transpose(0, 1, 3, 2, 4)
        ctx = ctx.reshape(*x.shape)
        x2 = x + ctx @ p[f"l{i}.wo"] + p[f"l{i}.bo"]
        y2, _ = _ln_forward(x2, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
        a = np.tanh(y2 @ p[f"l{i}.w1"] + p[f"l{i}.b1"])
        return x2 + a @ p[f"l{i}.w2"] + p[f"l{i}.b2"], kh, vh

    def _positions(self, offsets, t):
        offsets = np.asarray(offsets, dtype=int)
        if int(offsets.max(initial=0)) + t > self.max_len:
            raise ValueError("decoded sequence exceeds max_len")
        return self.params["pos"][offsets[:, None] + np.arange(t)]

    def forward_incremental_batch(self, stacked, lens, X_new: np.ndarray, offsets):
        """Append ``t`` rows to each of B cached sequences.

        ``offsets`` are the current per-sequence lengths used for position
        lookup (normally equal to ``lens``). Returns new-row outputs, the
        extended stacked caches, and the new lengths.
        """
        B, t, _ = X_new.shape
        lens = np.asarray(lens, dtype=int)
        x = X_new + self._positions(offsets, t)
        cap = stacked[0][0].shape[1] if self.n_layers else 0
        bias_past = np.where(np.arange(cap)[None, None, :] < lens[:, None, None], 0.0, _NEG)
        within = np.arange(t)[None, :] <= np.arange(t)[:, None]
        within_bias = np.where(within, 0.0, _NEG)
        new_stacked = []
        for i in range(self.n_layers):
            k_past, v_past = stacked[i]
            x, kh, vh = self._decode_block(i, x, k_past, v_past, bias_past, within_bias)
            k_ext = np.concatenate([k_past, np.zeros((B, t, self.n_heads, self.head_dim))], axis=1)
            v_ext = np.concatenate([v_past, np.zeros_like(k_ext[:, :t])], axis=1)
            idx = (lens[:, None] + np.arange(t))[:, :, None, None]
            np.put_along_axis(k_ext, np.broadcast_to(idx, (B, t, self.n_heads, self.head_dim)), kh, axis=1)
            np.put_along_axis(v_ext, np.broadcast_to(idx, (B, t, self.n_heads, self.head_dim)), vh, axis=1)
            new_stacked.append((k_ext, v_ext))
        y, _ = _ln_forward(x, self.params["lnf_g"], self.params["lnf_b"])
        return y, new_stacked, lens + t

    def forward_candidates_batch(self, stacked, lens, X_new: np.ndarray, offsets):
        """Score-only extension outputs for (B, C, t, d) candidate rows."""
        B, C, t, _ = X_new.shape
        lens = np.asarray(lens, dtype=int)
        x = X_new + self._positions(offsets, t)[:, None]
        cap = stacked[0][0].shape[1] if self.n_layers else 0
        bias_past = np.where(np.arange(cap)[None, None, :] < lens[:, None, None], 0.0, _NEG)
        within = np.arange(t)[None, :] <= np.arange(t)[:, None]
        within_bias = np.where(within, 0.0, _NEG)
        for i in range(self.n_layers):
            k_past, v_past = stacked[i]
            x, _, _ = self._decode_block(i, x, k_past, v_past, bias_past, within_bias)
        y, _ = _ln_forward(x, self.params["lnf_g"], self.params["lnf_b"])
        return y

    def forward_incremental(self, kv_cache, X_new: np.ndarray, pos_offset: int):
        stacked, lens = self.stack_caches([kv_cache])
        y, new_stacked, new_lens = self.forward_incremental_batch(
            stacked, lens, X_new[None], [pos_offset]
        )
        return y[0], self.unstack_caches(new_stacked, new_lens)[0]

    def forward_candidates(self, kv_cache, X_new: np.ndarray, pos_offset: int):
        stacked, lens = self.stack_caches([kv_cache])
        return self.forward_candidates_batch(stacked, lens, X_new[None], [pos_offset])[0]


class RecurrentSeq:
    """Single-layer gated recurrent network with an affine output head."""

    def __init__(self, d: int, rng, max_len: int = 0):
        self.d = d
        self.max_len = max_len  # recurrence imposes no length limit
        p = {}
        for gate in ("z", "r", "h"):
            p[f"w{gate}"] = _gauss(rng, d, d)
            p[f"u{gate}"] = _gauss(rng, d, d)
            p[f"b{gate}"] = np.zeros(d)
        p["wo"] = _gauss(rng, d, d)
        p["bo"] = np.zeros(d)
        self.params = p

    @staticmethod
    def _sigmoid(x):
        return 1.0 / (1.0 + np.exp(-x))

    def _cell_batch(self, x, h):
        p = self.params
        z = self._sigmoid(x @ p["wz"] + h @ p["uz"] + p["bz"])
        r = self._sigmoid(x @ p["wr"] + h @ p["ur"] + p["br"])
        c = np.tanh(x @ p["wh"] + (r * h) @ p["uh"] + p["bh"])
        return (1.0 - z) * h + z * c, (x, h, z, r, c)

    def forward_batch(self, X: np.ndarray, lengths):
        B, n, _ = X.shape
        p = self.params
        h = np.zeros((B, self.d))
        outs = np.zeros((B, n, self.d))
        caches = []
        for t in range(n):
            h, cell = self._cell_batch(X[:, t, :], h)
            caches.append((cell, h))
            outs[:, t, :] = h @ p["wo"] + p["bo"]
        return outs, (B, n, caches)

    def backward_batch(self, dY: np.ndarray, cache):
        B, n, caches = cache
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dX = np.zeros((B, n, self.d))
        dh_carry = np.zeros((B, self.d))
        for t in reversed(range(n)):
            (x, h_prev, z, r, c), h_new = caches[t]
            dy = dY[:, t, :]
            grads["wo"] += h_new.T @ dy
            grads["bo"] += dy.sum(axis=0)
            dh = dy @ p["wo"].T + dh_carry
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)
            dc_pre = dc * (1.0 - c * c)
            grads["wh"] += x.T @ dc_pre
            grads["bh"] += dc_pre.sum(axis=0)
            grads["uh"] += (r * h_prev).T @ dc_pre
            d_rh = dc_pre @ p["uh"].T
            dr = d_rh * h_prev
            dh_prev = dh_prev + d_rh * r
            dx = dc_pre @ p["wh"].T
            dz_pre = dz * z * (1.0 - z)
            grads["wz"] += x.T @ dz_pre
            grads["uz"] += h_prev.T @ dz_pre
            grads["bz"] += dz_pre.sum(axis=0)
            dx += dz_pre @ p["wz"].T
            dh_prev = dh_prev + dz_pre @ p["uz"].T
            dr_pre = dr * r * (1.0 - r)
            grads["wr"] += x.T @ dr_pre
            grads["ur"] += h_prev.T @ dr_pre
            grads["br"] += dr_pre.sum(axis=0)
            dx += dr_pre @ p["wr"].T
            dh_prev = dh_prev + dr_pre @ p["ur"].T
            dX[:, t, :] = dx
            dh_carry = dh_prev
        return dX, grads

    def forward(self, X: np.ndarray):
        outs, cache = self.forward_batch(X[None], [X.shape[0]])
        return outs[0], cache

    def backward(self, dY: np.ndarray, cache):
        dX, grads = self.backward_batch(dY[None], cache)
        return dX[0], grads

    # -- decoding path -----------------------------------------------------

    def empty_cache(self):
        return np.zeros(self.d)

    def stack_caches(self, caches: list):
        return np.stack(caches), np.zeros(len(caches), dtype=int)

    def unstack_caches(self, stacked, lens):
        return [stacked[b].copy() for b in range(stacked.shape[0])]

    def forward_incremental_batch(self, stacked, lens, X_new: np.ndarray, offsets):
        p = self.params
        h = stacked
        B, t, _ = X_new.shape
        outs = np.zeros_like(X_new)
        for u in range(t):
            h, _ = self._cell_batch(X_new[:, u, :], h)
            outs[:, u, :] = h @ p["wo"] + p["bo"]
        return outs, h, np.asarray(lens, dtype=int) + t

    def forward_candidates_batch(self, stacked, lens, X_new: np.ndarray, offsets):
        B, C, t, _ = X_new.shape
        flat = X_new.reshape(B * C, t, self.d)
        h = np.repeat(stacked, C, axis=0)
        outs, _, _ = self.forward_incremental_batch(h, np.zeros(B * C, dtype=int), flat, None)
        return outs.reshape(B, C, t, self.d)

    def forward_incremental(self, h_state, X_new: np.ndarray, pos_offset: int = 0):
        outs, h, _ = self.forward_incremental_batch(
            h_state[None], np.zeros(1, dtype=int), X_new[None], None
        )
        return outs[0], h[0]

    def forward_candidates(self, h_state, X_new: np.ndarray, pos_offset: int = 0):
        return self.forward_candidates_batch(h_state[None], np.zeros(1, dtype=int), X_new[None], None)[0]


class Adam:
    """Adaptive-moment gradient descent updating parameters in place."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[key] / b1c
            vhat = self.v[key] / b2c
            self.params[key] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for key in self.m:
            self.m[key] = np.array(state["m"][key], dtype=float).reshape(self.m[key].shape)
            self.v[key] = np.array(state["v"][key], dtype=float).reshape(self.v[key].shape)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten_params(flat: np.ndarray, params: dict) -> None:
    """Write a flat vector back into the parameter arrays (in place)."""
    offset = 0
    for key in sorted(params):
        size = params[key].size
        params[key][...] = flat[offset : offset + size].reshape(params[key].shape)
        offset += size
    if offset != flat.size:
        raise ValueError("flat vector length does not match parameters")

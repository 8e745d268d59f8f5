"""Sequence regressors mapping a query vector to a horizon of 3-D positions,
implemented directly in numpy with hand-derived backward passes.

All three variants consume the same (B, 15) input, feed it at every step of
a horizon-length unroll (recurrent nets) or decode against it (attention),
and emit (B, H, 3). Parameters live in name->array dicts with a fixed
layout so they can be flattened for checkpoints and gradient checks.
"""

from __future__ import annotations

import numpy as np

GATE_ORDER_GRU = ("update", "reset", "candidate")


def _sigmoid(x):
    out = np.empty_like(x)
    np.negative(x, out)
    np.exp(out, out)
    out += 1.0
    np.reciprocal(out, out)
    return out


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class GRUNet:
    """Stacked GRU unrolled for `horizon` steps over a constant input."""

    arch = "gru"

    def __init__(self, input_dim=15, hidden=50, layers=2, out_dim=3, horizon=100):
        self.input_dim = input_dim
        self.hidden = hidden
        self.layers = layers
        self.out_dim = out_dim
        self.horizon = horizon

    def layout(self):
        h = self.hidden
        spec = []
        for l in range(self.layers):
            in_dim = self.input_dim if l == 0 else h
            spec += [
                (f"l{l}.Wx", (in_dim, 3 * h)),
                (f"l{l}.Wh", (h, 3 * h)),
                (f"l{l}.bx", (3 * h,)),
                (f"l{l}.bh", (3 * h,)),
            ]
        spec += [("out.W", (h, self.out_dim)), ("out.b", (self.out_dim,))]
        return spec

    def init(self, rng):
        params = {}
        for name, shape in self.layout():
            if name.endswith(("bx", "bh", ".b")):
                params[name] = np.zeros(shape)
            else:
                params[name] = _uniform_init(rng, shape, shape[0])
        return params

    def forward(self, params, X):
        B = X.shape[0]
        T, h, L = self.horizon, self.hidden, self.layers
        hs = [np.zeros((T + 1, B, h)) for _ in range(L)]
        zs = [np.empty((T, B, h)) for _ in range(L)]
        rs = [np.empty((T, B, h)) for _ in range(L)]
        ns = [np.empty((T, B, h)) for _ in range(L)]
        ghn = [np.empty((T, B, h)) for _ in range(L)]
        x_below = None
        for l in range(L):
            Wx, Wh = params[f"l{l}.Wx"], params[f"l{l}.Wh"]
            bx, bh = params[f"l{l}.bx"], params[f"l{l}.bh"]
            if l == 0:
                gx_const = X @ Wx + bx  # same at every step
            else:
                gx_all = x_below.reshape(T * B, h) @ Wx
                gx_all += bx
                gx_all = gx_all.reshape(T, B, 3 * h)
            H = hs[l]
            for t in range(T):
                gx = gx_const if l == 0 else gx_all[t]
                gh = H[t] @ Wh + bh
                z = _sigmoid(gx[:, :h] + gh[:, :h])
                r = _sigmoid(gx[:, h : 2 * h] + gh[:, h : 2 * h])
                n = np.tanh(gx[:, 2 * h :] + r * gh[:, 2 * h :])
                H[t + 1] = (1.0 - z) * n + z * H[t]
                zs[l][t] = z
                rs[l][t] = r
                ns[l][t] = n
                ghn[l][t] = gh[:, 2 * h :]
            x_below = H[1:]
        top = hs[-1][1:]  # (T, B, h)
        Y = top.reshape(T * B, h) @ params["out.W"] + params["out.b"]
        Y = Y.reshape(T, B, self.out_dim).transpose(1, 0, 2)
        cache = (X, hs, zs, rs, ns, ghn)
        return Y, cache

    def backward(self, params, cache, dY):
        X, hs, zs, rs, ns, ghn = cache
        B = X.shape[0]
        T, h, L = self.horizon, self.hidden, self.layers
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        dtop = dY.transpose(1, 0, 2)  # (T, B, out)
        top = hs[-1][1:]
        grads["out.W"] += top.reshape(T * B, h).T @ dtop.reshape(T * B, self.out_dim)
        grads["out.b"] += dtop.sum(axis=(0, 1))
        dx_above = dtop.reshape(T * B, self.out_dim) @ params["out.W"].T
        dx_above = dx_above.reshape(T, B, h)
        for l in range(L - 1, -1, -1):
            Wx, Wh = params[f"l{l}.Wx"], params[f"l{l}.Wh"]
            H, z, r, n, gn = hs[l], zs[l], rs[l], ns[l], ghn[l]
            dgx_steps = np.empty((T, B, 3 * h))
            dgh_steps = np.empty((T, B, 3 * h))
            dh = np.zeros((B, h))
            for t in range(T - 1, -1, -1):
                dh = dh + dx_above[t]
                zt, rt, nt = z[t], r[t], n[t]
                dz = dh * (H[t] - nt)
                dn = dh * (1.0 - zt)
                dh_prev = dh * zt
                dn_pre = dn * (1.0 - nt * nt)
                dr = dn_pre * gn[t]
                dr_pre = dr * rt * (1.0 - rt)
                dz_pre = dz * zt * (1.0 - zt)
                dgx = dgx_steps[t]
                dgh = dgh_steps[t]
                dgx[:, :h] = dz_pre
                dgx[:, h : 2 * h] = dr_pre
                dgx[:, 2 * h :] = dn_pre
                dgh[:, :h] = dz_pre
                dgh[:, h : 2 * h] = dr_pre
                dgh[:, 2 * h :] = dn_pre * rt
                dh = dh_prev + dgh @ Wh.T
            flat_dgh = dgh_steps.reshape(T * B, 3 * h)
            grads[f"l{l}.Wh"] += H[:-1].reshape(T * B, h).T @ flat_dgh
            grads[f"l{l}.bh"] += flat_dgh.sum(axis=0)
            flat_dgx = dgx_steps.reshape(T * B, 3 * h)
            grads[f"l{l}.bx"] += flat_dgx.sum(axis=0)
            if l == 0:
                grads["l0.Wx"] += X.T @ flat_dgx.reshape(T, B, 3 * h).sum(axis=0)
            else:
                below = hs[l - 1][1:]
                grads[f"l{l}.Wx"] += below.reshape(T * B, h).T @ flat_dgx
                dx_above = (flat_dgx @ Wx.T).reshape(T, B, h)
        return grads


class LSTMNet:
    """Stacked LSTM unrolled for `horizon` steps over a constant input."""

    arch = "lstm"

    def __init__(self, input_dim=15, hidden=50, layers=2, out_dim=3, horizon=100):
        self.input_dim = input_dim
        self.hidden = hidden
        self.layers = layers
        self.out_dim = out_dim
        self.horizon = horizon

    def layout(self):
        h = self.hidden
        spec = []
        for l in range(self.layers):
            in_dim = self.input_dim if l == 0 else h
            spec += [
                (f"l{l}.Wx", (in_dim, 4 * h)),
                (f"l{l}.Wh", (h, 4 * h)),
                (f"l{l}.b", (4 * h,)),
            ]
        spec += [("out.W", (h, self.out_dim)), ("out.b", (self.out_dim,))]
        return spec

    def init(self, rng):
        params = {}
        for name, shape in self.layout():
            if ".b" in name:
                params[name] = np.zeros(shape)
            else:
                params[name] = _uniform_init(rng, shape, shape[0])
        return params

    def forward(self, params, X):
        B = X.shape[0]
        T, h, L = self.horizon, self.hidden, self.layers
        hs = [np.zeros((T + 1, B, h)) for _ in range(L)]
        cs = [np.zeros((T + 1, B, h)) for _ in range(L)]
        gates = [np.empty((T, B, 4 * h)) for _ in range(L)]
        tcs = [np.empty((T, B, h)) for _ in range(L)]
        x_below = None
        for l in range(L):
            Wx, Wh, b = params[f"l{l}.Wx"], params[f"l{l}.Wh"], params[f"l{l}.b"]
            if l == 0:
                gx_const = X @ Wx + b
            else:
                gx_all = x_below.reshape(T * B, h) @ Wx
                gx_all += b
                gx_all = gx_all.reshape(T, B, 4 * h)
            H, C = hs[l], cs[l]
            for t in range(T):
                g = (gx_const if l == 0 else gx_all[t]) + H[t] @ Wh
                i = _sigmoid(g[:, :h])
                f = _sigmoid(g[:, h : 2 * h])
                gg = np.tanh(g[:, 2 * h : 3 * h])
                o = _sigmoid(g[:, 3 * h :])
                C[t + 1] = f * C[t] + i * gg
                tc = np.tanh(C[t + 1])
                H[t + 1] = o * tc
                G = gates[l][t]
                G[:, :h] = i
                G[:, h : 2 * h] = f
                G[:, 2 * h : 3 * h] = gg
                G[:, 3 * h :] = o
                tcs[l][t] = tc
            x_below = H[1:]
        top = hs[-1][1:]
        Y = top.reshape(T * B, h) @ params["out.W"] + params["out.b"]
        Y = Y.reshape(T, B, self.out_dim).transpose(1, 0, 2)
        cache = (X, hs, cs, gates, tcs)
        return Y, cache

    def backward(self, params, cache, dY):
        X, hs, cs, gates, tcs = cache
        B = X.shape[0]
        T, h, L = self.horizon, self.hidden, self.layers
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        dtop = dY.transpose(1, 0, 2)
        top = hs[-1][1:]
        grads["out.W"] += top.reshape(T * B, h).T @ dtop.reshape(T * B, self.out_dim)
        grads["out.b"] += dtop.sum(axis=(0, 1))
        dx_above = (dtop.reshape(T * B, self.out_dim) @ params["out.W"].T).reshape(T, B, h)
        for l in range(L - 1, -1, -1):
            Wx, Wh = params[f"l{l}.Wx"], params[f"l{l}.Wh"]
            H, C, G, TC = hs[l], cs[l], gates[l], tcs[l]
            dg_steps = np.empty((T, B, 4 * h))
            dh = np.zeros((B, h))
            dc = np.zeros((B, h))
            for t in range(T - 1, -1, -1):
                dh = dh + dx_above[t]
                i = G[t][:, :h]
                f = G[t][:, h : 2 * h]
                gg = G[t][:, 2 * h : 3 * h]
                o = G[t][:, 3 * h :]
                tc = TC[t]
                do = dh * tc
                dc = dc + dh * o * (1.0 - tc * tc)
                di = dc * gg
                df = dc * C[t]
                dgg = dc * i
                dc = dc * f
                dg = dg_steps[t]
                dg[:, :h] = di * i * (1.0 - i)
                dg[:, h : 2 * h] = df * f * (1.0 - f)
                dg[:, 2 * h : 3 * h] = dgg * (1.0 - gg * gg)
                dg[:, 3 * h :] = do * o * (1.0 - o)
                dh = dg @ Wh.T
            flat_dg = dg_steps.reshape(T * B, 4 * h)
            grads[f"l{l}.Wh"] += hs[l][:-1].reshape(T * B, h).T @ flat_dg
            grads[f"l{l}.b"] += flat_dg.sum(axis=0)
            if l == 0:
                grads["l0.Wx"] += X.T @ dg_steps.sum(axis=0)
            else:
                below = hs[l - 1][1:]
                grads[f"l{l}.Wx"] += below.reshape(T * B, h).T @ flat_dg
                dx_above = (flat_dg @ Wx.T).reshape(T, B, h)
        return grads


# ---------------------------------------------------------------------------
# attention encoder-decoder
# ---------------------------------------------------------------------------

_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(x):
    u = _GELU_C * (x + 0.044715 * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_grad(x):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _layernorm_fwd(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv
    return dx, dg, db


def _split_heads(x, heads):
    B, T, d = x.shape
    return x.reshape(B, T, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, nh, T, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, nh * dk)


def _mha_fwd(params, prefix, q_in, kv_in, heads):
    Q = q_in @ params[f"{prefix}.Wq"] + params[f"{prefix}.bq"]
    K = kv_in @ params[f"{prefix}.Wk"] + params[f"{prefix}.bk"]
    V = kv_in @ params[f"{prefix}.Wv"] + params[f"{prefix}.bv"]
    Qh, Kh, Vh = _split_heads(Q, heads), _split_heads(K, heads), _split_heads(V, heads)
    dk = Qh.shape[-1]
    S = Qh @ Kh.transpose(0, 1, 3, 2) / np.sqrt(dk)
    S = S - S.max(axis=-1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=-1, keepdims=True)
    Oh = A @ Vh
    O = _merge_heads(Oh)
    out = O @ params[f"{prefix}.Wo"] + params[f"{prefix}.bo"]
    return out, (q_in, kv_in, Qh, Kh, Vh, A, O)


def _mha_bwd(params, grads, prefix, dout, cache, heads):
    q_in, kv_in, Qh, Kh, Vh, A, O = cache
    dk = Qh.shape[-1]
    flatten = lambda x: x.reshape(-1, x.shape[-1])
    grads[f"{prefix}.Wo"] += flatten(O).T @ flatten(dout)
    grads[f"{prefix}.bo"] += flatten(dout).sum(axis=0)
    dO = dout @ params[f"{prefix}.Wo"].T
    dOh = _split_heads(dO, heads)
    dA = dOh @ Vh.transpose(0, 1, 3, 2)
    dVh = A.transpose(0, 1, 3, 2) @ dOh
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
    dS /= np.sqrt(dk)
    dQh = dS @ Kh
    dKh = dS.transpose(0, 1, 3, 2) @ Qh
    dQ, dKm, dVm = _merge_heads(dQh), _merge_heads(dKh), _merge_heads(dVh)
    grads[f"{prefix}.Wq"] += flatten(q_in).T @ flatten(dQ)
    grads[f"{prefix}.bq"] += flatten(dQ).sum(axis=0)
    grads[f"{prefix}.Wk"] += flatten(kv_in).T @ flatten(dKm)
    grads[f"{prefix}.bk"] += flatten(dKm).sum(axis=0)
    grads[f"{prefix}.Wv"] += flatten(kv_in).T @ flatten(dVm)
    grads[f"{prefix}.bv"] += flatten(dVm).sum(axis=0)
    dq_in = dQ @ params[f"{prefix}.Wq"].T
    dkv_in = dKm @ params[f"{prefix}.Wk"].T + dVm @ params[f"{prefix}.Wv"].T
    return dq_in, dkv_in


def _ffn_fwd(params, prefix, x):
    h1 = x @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"]
    h2 = _gelu(h1)
    out = h2 @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    return out, (x, h1, h2)


def _ffn_bwd(params, grads, prefix, dout, cache):
    x, h1, h2 = cache
    flatten = lambda a: a.reshape(-1, a.shape[-1])
    grads[f"{prefix}.W2"] += flatten(h2).T @ flatten(dout)
    grads[f"{prefix}.b2"] += flatten(dout).sum(axis=0)
    dh2 = dout @ params[f"{prefix}.W2"].T
    dh1 = dh2 * _gelu_grad(h1)
    grads[f"{prefix}.W1"] += flatten(x).T @ flatten(dh1)
    grads[f"{prefix}.b1"] += flatten(dh1).sum(axis=0)
    return dh1 @ params[f"{prefix}.W1"].T


class AttentionNet:
    """Pre-LN encoder-decoder: the query is the single encoder token and
    sinusoidal position codes drive a non-autoregressive decoder."""

    arch = "attention"

    def __init__(self, input_dim=15, d_model=128, heads=4, enc_layers=2, dec_layers=2,
                 d_ff=None, out_dim=3, horizon=100):
        self.input_dim = input_dim
        self.d_model = d_model
        self.heads = heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.d_ff = d_ff or 4 * d_model
        self.out_dim = out_dim
        self.horizon = horizon
        self.pos = self._positional_encoding(horizon, d_model)

    @staticmethod
    def _positional_encoding(T, d):
        pos = np.arange(T)[:, None]
        i = np.arange(d // 2)[None, :]
        angles = pos / np.power(10000.0, 2 * i / d)
        pe = np.zeros((T, d))
        pe[:, 0::2] = np.sin(angles)
        pe[:, 1::2] = np.cos(angles)
        return pe

    def _mha_layout(self, prefix):
        d = self.d_model
        return [
            (f"{prefix}.Wq", (d, d)), (f"{prefix}.bq", (d,)),
            (f"{prefix}.Wk", (d, d)), (f"{prefix}.bk", (d,)),
            (f"{prefix}.Wv", (d, d)), (f"{prefix}.bv", (d,)),
            (f"{prefix}.Wo", (d, d)), (f"{prefix}.bo", (d,)),
        ]

    def _ln_layout(self, prefix):
        d = self.d_model
        return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]

    def _ffn_layout(self, prefix):
        d, f = self.d_model, self.d_ff
        return [(f"{prefix}.W1", (d, f)), (f"{prefix}.b1", (f,)),
                (f"{prefix}.W2", (f, d)), (f"{prefix}.b2", (d,))]

    def layout(self):
        d = self.d_model
        spec = [("in.W", (self.input_dim, d)), ("in.b", (d,))]
        for l in range(self.enc_layers):
            spec += self._ln_layout(f"enc{l}.ln1") + self._mha_layout(f"enc{l}.attn")
            spec += self._ln_layout(f"enc{l}.ln2") + self._ffn_layout(f"enc{l}.ffn")
        spec += self._ln_layout("enc.ln_final")
        for l in range(self.dec_layers):
            spec += self._ln_layout(f"dec{l}.ln1") + self._mha_layout(f"dec{l}.self")
            spec += self._ln_layout(f"dec{l}.ln2") + self._mha_layout(f"dec{l}.cross")
            spec += self._ln_layout(f"dec{l}.ln3") + self._ffn_layout(f"dec{l}.ffn")
        spec += self._ln_layout("dec.ln_final")
        spec += [("out.W", (d, self.out_dim)), ("out.b", (self.out_dim,))]
        return spec

    def init(self, rng):
        params = {}
        for name, shape in self.layout():
            if name.endswith(".g"):
                params[name] = np.ones(shape)
            elif name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
                params[name] = np.zeros(shape)
            else:
                params[name] = _uniform_init(rng, shape, shape[0])
        return params

    def forward(self, params, X):
        B = X.shape[0]
        caches = {}
        x = (X @ params["in.W"] + params["in.b"])[:, None, :]  # (B, 1, d)
        for l in range(self.enc_layers):
            a, c1 = _layernorm_fwd(x, params[f"enc{l}.ln1.g"], params[f"enc{l}.ln1.b"])
            attn, ca = _mha_fwd(params, f"enc{l}.attn", a, a, self.heads)
            x = x + attn
            b, c2 = _layernorm_fwd(x, params[f"enc{l}.ln2.g"], params[f"enc{l}.ln2.b"])
            ff, cf = _ffn_fwd(params, f"enc{l}.ffn", b)
            x = x + ff
            caches[f"enc{l}"] = (c1, ca, c2, cf)
        enc, ce = _layernorm_fwd(x, params["enc.ln_final.g"], params["enc.ln_final.b"])
        caches["enc_final"] = ce

        y = np.broadcast_to(self.pos, (B, self.horizon, self.d_model)).copy()
        for l in range(self.dec_layers):
            a, c1 = _layernorm_fwd(y, params[f"dec{l}.ln1.g"], params[f"dec{l}.ln1.b"])
            sa, cs = _mha_fwd(params, f"dec{l}.self", a, a, self.heads)
            y = y + sa
            b, c2 = _layernorm_fwd(y, params[f"dec{l}.ln2.g"], params[f"dec{l}.ln2.b"])
            cr, cc = _mha_fwd(params, f"dec{l}.cross", b, enc, self.heads)
            y = y + cr
            c, c3 = _layernorm_fwd(y, params[f"dec{l}.ln3.g"], params[f"dec{l}.ln3.b"])
            ff, cf = _ffn_fwd(params, f"dec{l}.ffn", c)
            y = y + ff
            caches[f"dec{l}"] = (c1, cs, c2, cc, c3, cf)
        yf, cyf = _layernorm_fwd(y, params["dec.ln_final.g"], params["dec.ln_final.b"])
        caches["dec_final"] = cyf
        out = yf @ params["out.W"] + params["out.b"]
        caches["out_in"] = yf
        caches["X"] = X
        return out, caches

    def backward(self, params, caches, dY):
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        flatten = lambda a: a.reshape(-1, a.shape[-1])
        yf = caches["out_in"]
        grads["out.W"] += flatten(yf).T @ flatten(dY)
        grads["out.b"] += flatten(dY).sum(axis=0)
        dyf = dY @ params["out.W"].T
        dy, dg, db = _layernorm_bwd(dyf, caches["dec_final"])
        grads["dec.ln_final.g"] += dg
        grads["dec.ln_final.b"] += db
        denc_total = None
        for l in range(self.dec_layers - 1, -1, -1):
            c1, cs, c2, cc, c3, cf = caches[f"dec{l}"]
            dc = _ffn_bwd(params, grads, f"dec{l}.ffn", dy, cf)
            dy2, dg, db = _layernorm_bwd(dc, c3)
            grads[f"dec{l}.ln3.g"] += dg
            grads[f"dec{l}.ln3.b"] += db
            dy = dy + dy2
            dq, denc = _mha_bwd(params, grads, f"dec{l}.cross", dy, cc, self.heads)
            denc_total = denc if denc_total is None else denc_total + denc
            db_, dg, dbb = _layernorm_bwd(dq, c2)
            grads[f"dec{l}.ln2.g"] += dg
            grads[f"dec{l}.ln2.b"] += dbb
            dy = dy + db_
            dqs, dkvs = _mha_bwd(params, grads, f"dec{l}.self", dy, cs, self.heads)
            da, dg, dbb = _layernorm_bwd(dqs + dkvs, c1)
            grads[f"dec{l}.ln1.g"] += dg
            grads[f"dec{l}.ln1.b"] += dbb
            dy = dy + da
        # positional encodings are constants: dy stops here
        dx, dg, db = _layernorm_bwd(denc_total, caches["enc_final"])
        grads["enc.ln_final.g"] += dg
        grads["enc.ln_final.b"] += db
        for l in range(self.enc_layers - 1, -1, -1):
            c1, ca, c2, cf = caches[f"enc{l}"]
            dcf = _ffn_bwd(params, grads, f"enc{l}.ffn", dx, cf)
            dbx, dg, dbb = _layernorm_bwd(dcf, c2)
            grads[f"enc{l}.ln2.g"] += dg
            grads[f"enc{l}.ln2.b"] += dbb
            dx = dx + dbx
            dqa, dkva = _mha_bwd(params, grads, f"enc{l}.attn", dx, ca, self.heads)
            dax, dg, dbb = _layernorm_bwd(dqa + dkva, c1)
            grads[f"enc{l}.ln1.g"] += dg
            grads[f"enc{l}.ln1.b"] += dbb
            dx = dx + dax
        dtok = dx[:, 0, :]
        grads["in.W"] += caches["X"].T @ dtok
        grads["in.b"] += dtok.sum(axis=0)
        return grads


def build_network(architecture: str, horizon: int, hidden=50, layers=2,
                  d_model=128, heads=4, enc_layers=2, dec_layers=2, input_dim=15):
    if architecture == "gru":
        return GRUNet(input_dim=input_dim, hidden=hidden, layers=layers, horizon=horizon)
    if architecture == "lstm":
        return LSTMNet(input_dim=input_dim, hidden=hidden, layers=layers, horizon=horizon)
    if architecture == "attention":
        return AttentionNet(input_dim=input_dim, d_model=d_model, heads=heads,
                            enc_layers=enc_layers, dec_layers=dec_layers, horizon=horizon)
    raise ValueError(f"unknown architecture {architecture!r}")


def flatten_params(params: dict, layout) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name, _shape in layout])


def unflatten_params(vec: np.ndarray, layout) -> dict:
    params = {}
    i = 0
    for name, shape in layout:
        size = int(np.prod(shape))
        params[name] = vec[i : i + size].reshape(shape).copy()
        i += size
    if i != vec.size:
        raise ValueError(f"parameter vector length {vec.size} does not match layout ({i})")
    return params

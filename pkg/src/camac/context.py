"""Attention over context tokens, the contextual adaptation factor, and the context autoencoder."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import AffineLayer, relu, sigmoid, softmax, softmax_backward


def attention(Q, K, V):
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d_k)) V`` with row-wise softmax."""
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"Q width {Q.shape[-1]} != K width {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"K rows {K.shape[-2]} != V rows {V.shape[-2]}")
    d_k = Q.shape[-1]
    P = softmax(Q @ np.swapaxes(K, -1, -2) / np.sqrt(d_k), axis=-1)
    return P @ V


class MultiHeadAttention:
    """Self-attention over context tokens, heads concatenated, projected, then mean-pooled.

    Projections act on the right as in ``Q_i = X W_i^Q``:
    ``Wq``/``Wk``: (h, d_token, d_k), ``Wv``: (h, d_token, d_v), ``Wo``: (h*d_v, d_model).
    Input ``X`` is (..., T, d_token); output (..., d_model).
    """

    def __init__(self, Wq, Wk, Wv, Wo, bo=None):
        self.Wq = np.asarray(Wq, dtype=np.float64)
        self.Wk = np.asarray(Wk, dtype=np.float64)
        self.Wv = np.asarray(Wv, dtype=np.float64)
        self.Wo = np.asarray(Wo, dtype=np.float64)
        self.bo = np.zeros(self.Wo.shape[1]) if bo is None else np.asarray(bo, dtype=np.float64)
        h, _, d_v = self.Wv.shape
        if self.Wo.shape[0] != h * d_v:
            raise ShapeError(f"Wo input width {self.Wo.shape[0]} != heads*d_v {h * d_v}")
        if self.Wq.shape != self.Wk.shape or self.Wq.shape[:2] != self.Wv.shape[:2]:
            raise ShapeError("per-head projections disagree in shape")

    @classmethod
    def init(cls, d_token, n_heads, d_k, d_v, d_model, rng):
        s_in = np.sqrt(3.0 / d_token)
        s_out = np.sqrt(3.0 / (n_heads * d_v))
        return cls(rng.uniform(-s_in, s_in, (n_heads, d_token, d_k)),
                   rng.uniform(-s_in, s_in, (n_heads, d_token, d_k)),
                   rng.uniform(-s_in, s_in, (n_heads, d_token, d_v)),
                   rng.uniform(-s_out, s_out, (n_heads * d_v, d_model)),
                   np.zeros(d_model))

    @property
    def n_heads(self):
        return self.Wq.shape[0]

    @property
    def d_model(self):
        return self.Wo.shape[1]

    def params(self):
        return {"Wq": self.Wq, "Wk": self.Wk, "Wv": self.Wv, "Wo": self.Wo, "bo": self.bo}

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.Wq.shape[1]:
            raise ShapeError(f"token width {X.shape[-1]} != projection input {self.Wq.shape[1]}")
        d_k = self.Wq.shape[2]
        Xh = X[..., None, :, :]
        Q = Xh @ self.Wq                                    # (..., h, T, d_k)
        K = Xh @ self.Wk
        V = Xh @ self.Wv
        P = softmax(Q @ np.swapaxes(K, -1, -2) / np.sqrt(d_k), axis=-1)
        O = P @ V                                           # (..., h, T, d_v)
        C = np.moveaxis(O, -3, -2)                          # (..., T, h, d_v)
        C = C.reshape(C.shape[:-2] + (-1,))                 # (..., T, h*d_v)
        Y = C @ self.Wo + self.bo
        self._cache = (X, Q, K, V, P, C)
        return Y.mean(axis=-2)

    def backward(self, grad):
        X, Q, K, V, P, C = self._cache
        T = X.shape[-2]
        h, _, d_v = self.Wv.shape
        d_k = self.Wq.shape[2]
        dY = np.repeat(grad[..., None, :] / T, T, axis=-2)
        self.grad_Wo = C.reshape(-1, C.shape[-1]).T @ dY.reshape(-1, dY.shape[-1])
        self.grad_bo = dY.reshape(-1, dY.shape[-1]).sum(axis=0)
        dC = dY @ self.Wo.T
        dO = np.moveaxis(dC.reshape(dC.shape[:-1] + (h, d_v)), -2, -3)
        dP = dO @ np.swapaxes(V, -1, -2)
        dV = np.swapaxes(P, -1, -2) @ dO
        dS = softmax_backward(P, dP) / np.sqrt(d_k)
        dQ = dS @ K
        dK = np.swapaxes(dS, -1, -2) @ Q
        Xf = X.reshape(-1, X.shape[-1])                     # (B*T, d)

        def proj_grad(D):
            Df = np.moveaxis(D, -3, 0).reshape(D.shape[-3], -1, D.shape[-1])   # (h, B*T, k)
            return Xf.T @ Df                                                    # (h, d, k)

        self.grad_Wq = proj_grad(dQ)
        self.grad_Wk = proj_grad(dK)
        self.grad_Wv = proj_grad(dV)
        dX = (dQ @ np.swapaxes(self.Wq, -1, -2) + dK @ np.swapaxes(self.Wk, -1, -2)
              + dV @ np.swapaxes(self.Wv, -1, -2))
        return dX.sum(axis=-3)

    def grads(self):
        return {"Wq": self.grad_Wq, "Wk": self.grad_Wk, "Wv": self.grad_Wv,
                "Wo": self.grad_Wo, "bo": self.grad_bo}


def multi_head(tokens, params):
    """Pooled multi-head self-attention of one token matrix (T, d_token) -> (d_model,)."""
    return params.forward(tokens)


@dataclass
class AdaptationParams:
    W: np.ndarray          # (n_ctx,)
    b: float = 0.0
    amplitude: float = 0.0
    period: float = 96.0

    @classmethod
    def zeros(cls, n_ctx, **kw):
        return cls(np.zeros(n_ctx), **kw)


def temporal_encoding(t, params):
    return params.amplitude * np.sin(2.0 * np.pi * t / params.period)


def adaptation_factor(s_ctx, t, params):
    """``sigmoid(W . s + b + tau(t))``; the context encoding is the identity."""
    x = s_ctx.vector() if hasattr(s_ctx, "vector") else np.asarray(s_ctx, dtype=np.float64)
    W = np.asarray(params.W, dtype=np.float64).reshape(-1)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"context width {x.shape[-1]} != W_alpha width {W.shape[0]}")
    return float(sigmoid(float(x @ W) + params.b + temporal_encoding(t, params)))


class ContextEncoder:
    """Autoencoder ``E(.; phi)``: rectified affine encoder to ``d_z``, affine decoder back."""

    def __init__(self, enc_layers, dec_layers):
        self.enc = list(enc_layers)
        self.dec = list(dec_layers)
        if self.dec[-1].n_out != self.enc[0].n_in:
            raise ShapeError("decoder output width must equal encoder input width")

    @classmethod
    def init(cls, n_ctx, d_z, rng, hidden=32):
        enc = [AffineLayer.init(n_ctx, hidden, rng), AffineLayer.init(hidden, d_z, rng)]
        dec = [AffineLayer.init(d_z, hidden, rng), AffineLayer.init(hidden, n_ctx, rng, scale=np.sqrt(3.0 / hidden))]
        return cls(enc, dec)

    @property
    def d_z(self):
        return self.enc[-1].n_out

    @property
    def layers(self):
        return self.enc + self.dec

    def params(self):
        out = {}
        for name, group in (("enc", self.enc), ("dec", self.dec)):
            for k, layer in enumerate(group):
                out[f"{name}{k}.W"] = layer.weight
                out[f"{name}{k}.b"] = layer.bias
        return out

    def encode(self, x):
        h = np.asarray(x, dtype=np.float64)
        for layer in self.enc:
            h = relu(layer.forward(h))
        return h

    def decode(self, z):
        h = z
        for k, layer in enumerate(self.dec):
            h = layer.forward(h)
            if k < len(self.dec) - 1:
                h = relu(h)
        return h

    def loss_and_grads(self, batch):
        """Mean over the batch of squared reconstruction error; fills layer grads."""
        X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        pres = []
        h = X
        for layer in self.enc:
            p = layer.forward(h)
            pres.append(p)
            h = relu(p)
        dec_pres = []
        for k, layer in enumerate(self.dec):
            p = layer.forward(h)
            dec_pres.append(p)
            h = relu(p) if k < len(self.dec) - 1 else p
        diff = h - X
        loss = float(np.mean(np.sum(diff ** 2, axis=-1)))
        g = 2.0 * diff / X.shape[0]
        for k in reversed(range(len(self.dec))):
            if k < len(self.dec) - 1:
                g = g * (dec_pres[k] > 0)
            g = self.dec[k].backward(g)[0]
        for k in reversed(range(len(self.enc))):
            g = g * (pres[k] > 0)
            g = self.enc[k].backward(g)[0]
        return loss

    def grads(self):
        out = {}
        for name, group in (("enc", self.enc), ("dec", self.dec)):
            for k, layer in enumerate(group):
                out[f"{name}{k}.W"] = layer.grad_weight
                out[f"{name}{k}.b"] = layer.grad_bias
        return out


def encode(s_ctx, params):
    x = s_ctx.vector() if hasattr(s_ctx, "vector") else s_ctx
    return params.encode(x)


def encoder_update(batch, params, lr):
    """One SGD step on the reconstruction loss. Returns the pre-step loss."""
    X = np.stack([s.vector() if hasattr(s, "vector") else np.asarray(s, dtype=np.float64)
                  for s in batch])
    loss = params.loss_and_grads(X)
    if lr:
        grads = params.grads()
        for name, p in params.params().items():
            p -= lr * grads[name]
    return params, loss

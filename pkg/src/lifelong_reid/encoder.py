"""Pre-norm transformer feature encoder with adapter sites.

A sample vector of length ``tokens * token_dim`` is cut into ``tokens``
contiguous pseudo-patches, projected to ``d_model``, prefixed with a learned
class token and given learned positions. The class-token embedding after the
final layer norm is the feature.
"""
import copy
import math
from dataclasses import dataclass

import numpy as np

from . import adapters as ad
from .errors import DimensionError, ParameterError
from .numerics import autodiff as T

SITE_KINDS = ("q", "k", "v", "proj", "ffn")
LAYER_NAMES = ("q", "k", "v", "proj", "ffn1", "ffn2")


@dataclass(frozen=True)
class EncoderConfig:
    blocks: int = 4
    d_model: int = 64
    heads: int = 4
    ffn_dim: int = 128
    tokens: int = 8
    token_dim: int = 16
    sites: tuple = ("q", "k", "v", "proj")

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if self.d_model % self.heads:
            raise ParameterError("d_model must be divisible by heads")
        if self.tokens < 1 or self.blocks < 1:
            raise ParameterError("tokens and blocks must be >= 1")
        if not self.sites:
            raise ParameterError("at least one adapter site is required")
        bad = set(self.sites) - set(SITE_KINDS)
        if bad:
            raise ParameterError(f"unknown adapter sites {sorted(bad)}")

    @property
    def input_dim(self):
        return self.tokens * self.token_dim

    def adapted_layers(self):
        names = []
        for site in self.sites:
            names.extend(["ffn1", "ffn2"] if site == "ffn" else [site])
        return tuple(n for n in LAYER_NAMES if n in names)


def _site_index(name):
    return LAYER_NAMES.index(name)


class Encoder:
    """Holds the frozen base tensors plus per-layer adapter banks (float32)."""

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.frozen = False
        rng = np.random.default_rng([seed, 7919])
        d, f = cfg.d_model, cfg.ffn_dim

        def lin(d_in, d_out, site=()):
            w = (rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)).astype(dtype)
            return ad.AdaptedLinear(weight=w, bias=np.zeros(d_out, dtype=dtype), site=site)

        self.embed = lin(cfg.token_dim, d)
        self.cls = (rng.standard_normal((1, d)) * 0.02).astype(dtype)
        self.pos = (rng.standard_normal((cfg.tokens + 1, d)) * 0.02).astype(dtype)
        self.norms = {}
        self.layers = {}
        for b in range(cfg.blocks):
            for ln in ("ln1", "ln2"):
                self.norms[(b, ln)] = (np.ones(d, dtype=dtype), np.zeros(d, dtype=dtype))
            for name in ("q", "k", "v", "proj"):
                self.layers[(b, name)] = lin(d, d, (b, name))
            self.layers[(b, "ffn1")] = lin(d, f, (b, "ffn1"))
            self.layers[(b, "ffn2")] = lin(f, d, (b, "ffn2"))
        self.final = (np.ones(d, dtype=dtype), np.zeros(d, dtype=dtype))

    @property
    def num_adapters(self):
        name = self.cfg.adapted_layers()[0]
        return len(self.layers[(0, name)].adapters)

    def copy(self):
        return copy.deepcopy(self)

    # -- parameter naming -------------------------------------------------
    def base_parameters(self):
        """Ordered ``name -> array`` for every base tensor (shared storage)."""
        p = {"embed.base.w": self.embed.weight, "embed.base.b": self.embed.bias,
             "cls": self.cls, "pos": self.pos}
        for b in range(self.cfg.blocks):
            g, bt = self.norms[(b, "ln1")]
            p[f"{b}.ln1.g"], p[f"{b}.ln1.b"] = g, bt
            for name in LAYER_NAMES:
                layer = self.layers[(b, name)]
                p[f"{b}.{name}.base.w"] = layer.weight
                p[f"{b}.{name}.base.b"] = layer.bias
                if name == "proj":
                    g, bt = self.norms[(b, "ln2")]
                    p[f"{b}.ln2.g"], p[f"{b}.ln2.b"] = g, bt
        p["final.g"], p["final.b"] = self.final
        return p

    def adapter_parameters(self, step=None):
        p = {}
        for b in range(self.cfg.blocks):
            for name in self.cfg.adapted_layers():
                for t, a in enumerate(self.layers[(b, name)].adapters):
                    if step is None or t == step:
                        p[f"{b}.{name}.{t}.down"] = a.down
                        p[f"{b}.{name}.{t}.up"] = a.up
        return p

    def parameters(self):
        return {**self.base_parameters(), **self.adapter_parameters()}

    def freeze(self):
        self.frozen = True
        for arr in self.base_parameters().values():
            arr.flags.writeable = False

    # -- adapters ----------------------------------------------------------
    def add_adapters(self, rank, alpha, seed):
        step = self.num_adapters
        for b in range(self.cfg.blocks):
            for name in self.cfg.adapted_layers():
                rng = ad.adapter_rng(seed, b, _site_index(name), step)
                ad.add_adapter(self.layers[(b, name)], rank, alpha, seed, rng=rng)
        return step

    def merged_weights(self, mix):
        """Per adapted layer ``(W, b)`` with adapters folded in by ``mix[block]``."""
        mix = self._check_mix(mix)
        out = {}
        for b in range(self.cfg.blocks):
            for name in self.cfg.adapted_layers():
                out[(b, name)] = ad.merge(self.layers[(b, name)], mix[b])
        return out

    def _check_mix(self, mix):
        n = self.num_adapters
        if n == 0:
            return None
        mix = np.asarray(mix, dtype=np.float64)
        if mix.shape != (self.cfg.blocks, n):
            raise DimensionError(
                f"mixing must have shape {(self.cfg.blocks, n)}, got {mix.shape}")
        return mix

    # -- forward -----------------------------------------------------------
    def forward(self, x, mix=None, trainable=frozenset(), path="merged", weights=None,
                return_leaves=False):
        """Encode ``x`` (N x input_dim) on the tape.

        ``path="merged"`` folds frozen adapters into the base weight,
        ``path="mixed"`` evaluates every low-rank path separately. Names in
        ``trainable`` become gradient-carrying leaves.
        """
        cfg = self.cfg
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise DimensionError(f"expected N x {cfg.input_dim} input, got {x.shape}")
        mix = self._check_mix(mix)
        dtype = self.embed.weight.dtype
        leaves = {}

        def P(name, arr):
            if name in trainable:
                if name not in leaves:
                    leaves[name] = T.Tensor(arr, requires_grad=True)
                return leaves[name]
            return T.Tensor(arr)

        def linear(b, name, h, layer=None, pname=None):
            layer = layer or self.layers[(b, name)]
            pname = pname or f"{b}.{name}"
            wname, bname = f"{pname}.base.w", f"{pname}.base.b"
            s = mix[b] if (mix is not None and layer.adapters) else None
            train_ids = [t for t in range(len(layer.adapters))
                         if f"{pname}.{t}.down" in trainable or f"{pname}.{t}.up" in trainable]
            if path == "mixed" or s is None:
                y = h @ P(wname, layer.weight).T + P(bname, layer.bias)
                if s is not None:
                    for t, a in enumerate(layer.adapters):
                        lo = h @ P(f"{pname}.{t}.down", a.down).T
                        y = y + T.scale(lo @ P(f"{pname}.{t}.up", a.up).T, s[t] * a.scale)
                return y
            base_trainable = wname in trainable or bname in trainable
            if weights is not None and not train_ids and not base_trainable:
                w, bias = weights[(b, name)]
                return h @ T.Tensor(w).T + T.Tensor(bias)
            s_frozen = np.where(np.isin(np.arange(len(s)), train_ids), 0.0, s)
            if base_trainable:
                y = h @ P(wname, layer.weight).T + P(bname, layer.bias)
                delta, _ = ad.merge(ad.AdaptedLinear(np.zeros_like(layer.weight), layer.bias,
                                                     layer.adapters), s_frozen)
                if np.any(delta):
                    y = y + h @ T.Tensor(delta).T
            else:
                w, bias = ad.merge(layer, s_frozen)
                y = h @ T.Tensor(w).T + T.Tensor(bias)
            for t in train_ids:
                a = layer.adapters[t]
                lo = h @ P(f"{pname}.{t}.down", a.down).T
                y = y + T.scale(lo @ P(f"{pname}.{t}.up", a.up).T, s[t] * a.scale)
            return y

        n = x.shape[0]
        tok = T.Tensor(x.reshape(n, cfg.tokens, cfg.token_dim))
        h = linear(None, "embed", tok, layer=self.embed, pname="embed")
        cls = T.reshape(T.take(P("cls", self.cls), np.zeros(n, dtype=np.intp)), (n, 1, cfg.d_model))
        h = T.concat([cls, h], axis=1) + P("pos", self.pos)
        nt = cfg.tokens + 1
        dh = cfg.d_model // cfg.heads

        def heads(t):
            return T.transpose(T.reshape(t, (n, nt, cfg.heads, dh)), (0, 2, 1, 3))

        for b in range(cfg.blocks):
            g, bt = self.norms[(b, "ln1")]
            a = T.layer_norm(h, P(f"{b}.ln1.g", g), P(f"{b}.ln1.b", bt))
            q, k, v = (heads(linear(b, s, a)) for s in ("q", "k", "v"))
            att = T.softmax(T.scale(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh)))
            o = T.reshape(T.transpose(att @ v, (0, 2, 1, 3)), (n, nt, cfg.d_model))
            h = h + linear(b, "proj", o)
            g, bt = self.norms[(b, "ln2")]
            a = T.layer_norm(h, P(f"{b}.ln2.g", g), P(f"{b}.ln2.b", bt))
            h = h + linear(b, "ffn2", T.gelu(linear(b, "ffn1", a)))

        g, bt = self.final
        out = T.layer_norm(T.index(h, (slice(None), 0)), P("final.g", g), P("final.b", bt))
        if return_leaves:
            return out, leaves
        return out

    def encode(self, x, mix=None, path="merged", batch_size=512):
        """Numpy features for ``x``; merged weights are materialized once."""
        weights = None
        if path == "merged" and self.num_adapters:
            weights = self.merged_weights(mix)
        x = np.asarray(x, dtype=self.embed.weight.dtype)
        parts = [self.forward(x[i:i + batch_size], mix, path=path, weights=weights).data
                 for i in range(0, len(x), batch_size)]
        if not parts:
            return np.zeros((0, self.cfg.d_model), dtype=self.embed.weight.dtype)
        return np.concatenate(parts)

    def encode_base(self, x, batch_size=512):
        """Features of the frozen base network with every adapter switched off."""
        n = self.num_adapters
        mix = np.zeros((self.cfg.blocks, n)) if n else None
        return self.encode(x, mix, batch_size=batch_size)

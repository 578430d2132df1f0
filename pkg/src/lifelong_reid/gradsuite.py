"""Finite-difference gradient checks for every tape op and a small encoder.

Everything runs in float64. Each case reports the worst relative error over
its parameters; :func:`run_suite` returns one ``(name, error)`` per case.
"""
import numpy as np

from . import training as tr
from .encoder import Encoder, EncoderConfig
from .numerics import autodiff as T
from .numerics.gradcheck import check_gradients, relative_error

TOLERANCE = 1e-4


def _op_cases(rng):
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    w = r(3, 4)  # fixed projection turning any output into a scalar
    proj = lambda y: T.sum(y * T.Tensor(rng_w(y.shape)))  # noqa: E731
    cache = {}

    def rng_w(shape):
        if shape not in cache:
            cache[shape] = np.sin(np.arange(int(np.prod(shape)), dtype=np.float64) + 1).reshape(shape)
        return cache[shape]

    return [
        ("matmul", lambda t: proj(t["a"] @ t["b"]), {"a": r(3, 4), "b": r(4, 2)}),
        ("matmul_batched", lambda t: proj(t["a"] @ t["b"]), {"a": r(2, 3, 4), "b": r(2, 4, 2)}),
        ("add", lambda t: proj(t["a"] + t["b"]), {"a": r(3, 4), "b": r(4)}),
        ("sub", lambda t: proj(t["a"] - t["b"]), {"a": r(3, 4), "b": r(3, 1)}),
        ("mul", lambda t: proj(t["a"] * t["b"]), {"a": r(3, 4), "b": r(3, 4)}),
        ("div", lambda t: proj(t["a"] / t["b"]), {"a": r(3, 4), "b": pos(3, 4)}),
        ("neg", lambda t: proj(-t["a"]), {"a": r(3, 4)}),
        ("scale", lambda t: proj(T.scale(t["a"], 1.7)), {"a": r(3, 4)}),
        ("gelu", lambda t: proj(T.gelu(t["a"])), {"a": r(3, 4)}),
        ("relu", lambda t: proj(T.relu(t["a"])), {"a": pos(3, 4) * np.sign(r(3, 4))}),
        ("sqrt", lambda t: proj(T.sqrt(t["a"])), {"a": pos(3, 4)}),
        ("layer_norm", lambda t: proj(T.layer_norm(t["x"], t["g"], t["b"])),
         {"x": r(3, 5), "g": r(5), "b": r(5)}),
        ("softmax", lambda t: proj(T.softmax(t["a"])), {"a": r(3, 4)}),
        ("log_softmax", lambda t: proj(T.log_softmax(t["a"])), {"a": r(3, 4)}),
        ("concat", lambda t: proj(T.concat([t["a"], t["b"]], axis=1)), {"a": r(3, 2), "b": r(3, 4)}),
        ("sum", lambda t: proj(T.sum(t["a"], axis=1, keepdims=True)), {"a": r(3, 4)}),
        ("mean", lambda t: proj(T.mean(t["a"], axis=0)), {"a": r(3, 4)}),
        ("take", lambda t: proj(T.take(t["a"], np.array([2, 0, 2]))), {"a": r(3, 4)}),
        ("index", lambda t: proj(T.index(t["a"], (np.array([0, 2]), np.array([1, 3])))),
         {"a": r(3, 4)}),
        ("reshape", lambda t: proj(T.reshape(t["a"], (4, 3))), {"a": r(3, 4)}),
        ("transpose", lambda t: proj(T.transpose(t["a"], (1, 0))), {"a": r(3, 4)}),
        ("cross_entropy", lambda t: tr.cross_entropy(t["a"], np.array([1, 0, 3])), {"a": w}),
    ]


def _loss_cases(rng):
    feats = rng.standard_normal((8, 6))
    labels = np.repeat(np.arange(4), 2)
    protos = rng.standard_normal((4, 6))
    return [
        ("i2t", lambda t: tr.i2t_loss(t["f"], t["p"], t["tau"], labels),
         {"f": feats, "p": protos, "tau": np.array([0.5])}),
        ("t2i", lambda t: tr.t2i_loss(t["f"], t["p"], t["tau"], labels),
         {"f": feats, "p": protos, "tau": np.array([0.5])}),
        ("triplet", lambda t: tr.batch_hard_triplet(t["f"], labels, 5.0), {"f": feats}),
    ]


SMALL_ENCODER = EncoderConfig(blocks=2, d_model=8, heads=2, ffn_dim=12, tokens=3, token_dim=4,
                              sites=("q", "k", "v", "proj", "ffn"))


def small_encoder(seed=0, adapters=2, rank=2):
    """Float64 2-block encoder with ``adapters`` non-zero adapters per site."""
    enc = Encoder(SMALL_ENCODER, seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 99])
    for t in range(adapters):
        enc.add_adapters(rank, 4.0, seed=seed + t)
    for a in enc.adapter_parameters().values():
        a[...] = rng.standard_normal(a.shape) * 0.3
    for arr in enc.base_parameters().values():
        arr += rng.standard_normal(arr.shape) * 0.05
    return enc


def encoder_gradients(enc, x, mix, loss_fn, names, step=1e-5):
    """Tape vs central differences for the encoder tensors in ``names``."""
    params = enc.parameters()
    trainable = frozenset(names)
    out, leaves = enc.forward(x, mix, trainable=trainable, return_leaves=True)
    T.backward(loss_fn(out))
    errs = {}
    for name in names:
        arr = params[name]
        analytic = leaves[name].grad
        numeric = np.zeros_like(arr)
        flat, g = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn(enc.forward(x, mix)).data)
            flat[i] = orig - step
            lo = float(loss_fn(enc.forward(x, mix)).data)
            flat[i] = orig
            g[i] = (hi - lo) / (2 * step)
        errs[name] = relative_error(analytic, numeric)
    return errs


def _encoder_cases(seed):
    enc = small_encoder(seed)
    rng = np.random.default_rng([seed, 5])
    labels = np.repeat(np.arange(4), 2)
    x = rng.standard_normal((len(labels), SMALL_ENCODER.input_dim))
    mix = np.array([[0.3, 0.7], [0.6, 0.4]])
    protos = T.Tensor(rng.standard_normal((4, SMALL_ENCODER.d_model)))
    temp = T.Tensor(np.array([0.5]))
    head = {"w": T.Tensor(rng.standard_normal((4, SMALL_ENCODER.d_model)) * 0.3),
            "b": T.Tensor(np.zeros(4))}
    cfg = tr.TrainConfig(margin=5.0)
    losses = {
        "i2tce": lambda f: tr.i2t_loss(f, protos, temp, labels),
        "triplet": lambda f: tr.batch_hard_triplet(f, labels, cfg.margin),
        "id": lambda f: tr.cross_entropy(f @ head["w"].T + head["b"], labels),
        "stage2_total": lambda f: tr.stage2_losses(f, labels, protos, temp, head, cfg)[0],
    }
    newest = list(enc.adapter_parameters(step=1))
    base = list(enc.base_parameters())
    cases = []
    for lname, fn in losses.items():
        cases.append((f"encoder/adapters/{lname}", enc, x, mix, fn, newest))
    cases.append(("encoder/base/stage2_total", enc, x, mix, losses["stage2_total"], base))
    return cases


def run_suite(seed=0):
    """Return ``[(case, worst relative error)]`` over ops, losses and the encoder."""
    rng = np.random.default_rng([seed, 3])
    results = []
    for name, fn, params in _op_cases(rng) + _loss_cases(rng):
        errs = check_gradients(fn, params, step=1e-5)
        results.append((f"op/{name}", max(errs.values())))
    for name, enc, x, mix, fn, names in _encoder_cases(seed):
        errs = encoder_gradients(enc, x, mix, fn, names)
        results.append((name, max(errs.values())))
    return results

"""Losses, PK sampling, Adam, and the two-stage per-step optimization."""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError, LabelError, ParameterError, SamplerError
from .numerics import autodiff as T

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
TEMP_FLOOR = 0.01


@dataclass(frozen=True)
class TrainConfig:
    stage1_iters: int = 300
    stage1_lr: float = 3.5e-4
    stage2_iters: int = 600
    stage2_lr: float = 1e-3
    baseline_lr: float = 1e-4
    pretrain_iters: int = 600
    pretrain_lr: float = 1e-3
    p_ids: int = 8
    k_instances: int = 4
    margin: float = 0.3
    w_i2tce: float = 1.0
    w_tri: float = 1.0
    w_id: float = 1.0
    init_temperature: float = 0.07
    seed: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ParameterError("triplet margin must be >= 0")
        if self.p_ids < 1 or self.k_instances < 2:
            raise ParameterError("PK sampling needs P >= 1 and K >= 2")

    @property
    def batch_size(self):
        return self.p_ids * self.k_instances


# -- losses -------------------------------------------------------------------

def l2_normalize(x):
    return x / T.sqrt(T.sum(x * x, axis=-1, keepdims=True) + NORM_EPS)


def cross_entropy(logits, labels):
    labels = np.asarray(labels)
    lp = T.log_softmax(logits, axis=-1)
    return -T.mean(T.index(lp, (np.arange(len(labels)), labels)))


def hardest_pairs(feats, labels):
    """Batch-hard mining: per anchor, farthest positive and closest negative."""
    f = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels)
    d = np.sqrt(((f[:, None, :] - f[None, :, :]) ** 2).sum(-1))
    same = labels[:, None] == labels[None, :]
    eye = np.eye(len(labels), dtype=bool)
    pos_mask = same & ~eye
    if not pos_mask.any(axis=1).all():
        raise SamplerError("every anchor needs at least one positive in the batch")
    if not (~same).any(axis=1).all():
        raise SamplerError("every anchor needs at least one negative in the batch")
    pos = np.where(pos_mask, d, -np.inf).argmax(axis=1)
    neg = np.where(~same, d, np.inf).argmin(axis=1)
    return pos, neg


def batch_hard_triplet(feats, labels, margin):
    """``mean_i max(0, margin + d(i, hardest pos) - d(i, hardest neg))``, Euclidean."""
    pos, neg = hardest_pairs(feats.data, labels)
    anchors = np.arange(len(labels))

    def dist(j):
        diff = T.index(feats, anchors) - T.index(feats, j)
        return T.sqrt(T.sum(diff * diff, axis=-1) + NORM_EPS)

    return T.mean(T.relu(dist(pos) - dist(neg) + margin))


def cosine_logits(feats, protos, temp):
    return (l2_normalize(feats) @ l2_normalize(protos).T) / temp


def i2t_loss(feats, protos, temp, labels):
    """Each feature against every prototype of the step (i2t contrastive / i2tce)."""
    return cross_entropy(cosine_logits(feats, protos, temp), labels)


def t2i_loss(feats, protos, temp, labels):
    """Each prototype in the batch against the batch's per-identity feature centroids."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    avg = (labels[None, :] == present[:, None]).astype(feats.dtype)
    avg /= avg.sum(axis=1, keepdims=True)
    centroids = T.Tensor(avg) @ feats
    chosen = T.take(protos, present)
    logits = (l2_normalize(chosen) @ l2_normalize(centroids).T) / temp
    return cross_entropy(logits, np.arange(len(present)))


# -- sampling & optimizer ------------------------------------------------------

def pk_sample(labels, p_ids, k_instances, rng):
    """``p_ids`` identities with ``k_instances`` samples each, as row indices."""
    labels = np.asarray(labels)
    ids, counts = np.unique(labels, return_counts=True)
    eligible = ids[counts >= k_instances]
    if len(eligible) < p_ids:
        raise SamplerError(f"need {p_ids} identities with >= {k_instances} samples, "
                           f"only {len(eligible)} available")
    chosen = rng.choice(eligible, size=p_ids, replace=False)
    out = [rng.choice(np.flatnonzero(labels == pid), size=k_instances, replace=False)
           for pid in chosen]
    return np.concatenate(out)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            g = g.astype(p.dtype, copy=False)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def local_labels(ids, classes):
    idx = np.searchsorted(classes, ids)
    idx = np.clip(idx, 0, len(classes) - 1)
    if not np.array_equal(classes[idx], ids):
        raise LabelError("labels outside the step's identity set")
    return idx


# -- stages ----------------------------------------------------------------------

@dataclass
class PrototypeEntry:
    classes: np.ndarray     # global identity ids, sorted
    protos: np.ndarray      # (C, d_model) float32
    temp: np.ndarray        # (1,) float32


def init_prototypes(feats, labels, classes, temperature=0.07):
    """Prototypes start at each identity's normalized mean feature."""
    f = np.asarray(feats, dtype=np.float64)
    lab = local_labels(labels, classes)
    protos = np.zeros((len(classes), f.shape[1]))
    np.add.at(protos, lab, f)
    protos /= np.maximum(np.linalg.norm(protos, axis=1, keepdims=True), 1e-12)
    return PrototypeEntry(np.asarray(classes), protos.astype(np.float32),
                          np.array([temperature], dtype=np.float32))


def stage1_train_prototypes(feats, labels, cfg, rng, log_rows=None, step=0):
    """Fit the step's prototypes (and logit temperature) on frozen features."""
    feats = np.asarray(feats, dtype=np.float32)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    entry = init_prototypes(feats, labels, classes, cfg.init_temperature)
    lab = local_labels(labels, classes)
    if len(classes) == 1:
        return entry
    p_ids = min(cfg.p_ids, len(classes))
    params = {"protos": entry.protos, "temp": entry.temp}
    opt = Adam(cfg.stage1_lr)
    for it in range(cfg.stage1_iters):
        idx = pk_sample(lab, p_ids, cfg.k_instances, rng)
        f = T.Tensor(feats[idx])

        def loss_fn(t):
            li2t = i2t_loss(f, t["protos"], t["temp"], lab[idx])
            lt2i = t2i_loss(f, t["protos"], t["temp"], lab[idx])
            loss_fn.parts = (float(li2t.data), float(lt2i.data))
            return li2t + lt2i

        loss, grads = T.grad_eval(loss_fn, params)
        opt.step(params, grads)
        np.maximum(entry.temp, TEMP_FLOOR, out=entry.temp)
        if log_rows is not None:
            log_rows.append({"step": step, "stage": 1, "iteration": it,
                             "i2t": loss_fn.parts[0], "t2i": loss_fn.parts[1],
                             "i2tce": 0.0, "tri": 0.0, "id": 0.0, "total": loss})
    return entry


def prototype_accuracy(feats, labels, entry):
    f = np.asarray(feats, dtype=np.float64)
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    p = entry.protos / np.linalg.norm(entry.protos, axis=1, keepdims=True)
    pred = (f @ p.T).argmax(axis=1)
    return float((pred == local_labels(labels, entry.classes)).mean())


def stage2_losses(feats, lab, protos, temp, classifier, cfg):
    """Return ``(total, parts)`` for the image-side objective."""
    li2tce = i2t_loss(feats, protos, temp, lab)
    ltri = batch_hard_triplet(feats, lab, cfg.margin)
    logits = feats @ classifier["w"].T + classifier["b"]
    lid = cross_entropy(logits, lab)
    total = li2tce * cfg.w_i2tce + ltri * cfg.w_tri + lid * cfg.w_id
    return total, (float(li2tce.data), float(ltri.data), float(lid.data))


def new_classifier(n_classes, d_model, rng, dtype=np.float32):
    return {"w": (rng.standard_normal((n_classes, d_model)) * 0.01).astype(dtype),
            "b": np.zeros(n_classes, dtype=dtype)}


def stage2_train(encoder, train, mix, trainable, entry, cfg, rng, lr, log_rows=None, step=0):
    """Image-side training of ``trainable`` encoder tensors plus a step-local ID head.

    Prototypes and the logit temperature stay frozen.
    """
    lab = local_labels(train.ids, entry.classes)
    if len(entry.classes) < 2:
        raise SamplerError("the image-side objective needs at least 2 identities")
    p_ids = min(cfg.p_ids, len(entry.classes))
    head = new_classifier(len(entry.classes), encoder.cfg.d_model, rng)
    params = {**encoder.parameters(), "head.w": head["w"], "head.b": head["b"]}
    bad = [n for n in trainable if n in encoder.base_parameters()] if encoder.frozen else []
    if bad:
        raise ParameterError(f"base tensors are frozen: {bad[:3]}")
    protos = T.Tensor(entry.protos)
    temp = T.Tensor(entry.temp)
    opt = Adam(lr)
    feats_in = np.asarray(train.features, dtype=np.float32)
    for it in range(cfg.stage2_iters):
        idx = pk_sample(lab, p_ids, cfg.k_instances, rng)
        out, leaves = encoder.forward(feats_in[idx], mix, trainable=trainable, return_leaves=True)
        hw = T.Tensor(head["w"], requires_grad=True)
        hb = T.Tensor(head["b"], requires_grad=True)
        total, parts = stage2_losses(out, lab[idx], protos, temp, {"w": hw, "b": hb}, cfg)
        T.backward(total)
        grads = {n: t.grad for n, t in leaves.items() if t.grad is not None}
        grads["head.w"], grads["head.b"] = hw.grad, hb.grad
        opt.step(params, grads)
        if log_rows is not None:
            log_rows.append({"step": step, "stage": 2, "iteration": it, "i2t": 0.0, "t2i": 0.0,
                             "i2tce": parts[0], "tri": parts[1], "id": parts[2],
                             "total": float(total.data)})
    return head


def pretrain_base(encoder, base, cfg, rng, log_rows=None):
    """ID cross-entropy on the base domain over every base tensor, then freeze."""
    if len(base) == 0:
        raise DataError("base-domain data is empty")
    classes = np.unique(base.ids)
    lab = local_labels(base.ids, classes)
    trainable = frozenset(encoder.base_parameters())
    head = new_classifier(len(classes), encoder.cfg.d_model, rng)
    params = {**encoder.base_parameters(), "head.w": head["w"], "head.b": head["b"]}
    opt = Adam(cfg.pretrain_lr)
    feats_in = np.asarray(base.features, dtype=np.float32)
    bs = cfg.batch_size
    for it in range(cfg.pretrain_iters):
        idx = rng.choice(len(lab), size=bs, replace=False)
        out, leaves = encoder.forward(feats_in[idx], None, trainable=trainable, return_leaves=True)
        hw = T.Tensor(head["w"], requires_grad=True)
        hb = T.Tensor(head["b"], requires_grad=True)
        loss = cross_entropy(out @ hw.T + hb, lab[idx])
        T.backward(loss)
        grads = {n: t.grad for n, t in leaves.items() if t.grad is not None}
        grads["head.w"], grads["head.b"] = hw.grad, hb.grad
        opt.step(params, grads)
        if log_rows is not None:
            log_rows.append({"step": 0, "stage": 0, "iteration": it, "i2t": 0.0, "t2i": 0.0,
                             "i2tce": 0.0, "tri": 0.0, "id": float(loss.data),
                             "total": float(loss.data)})
    encoder.freeze()
    return head


def classification_accuracy(encoder, ds, head):
    classes = np.unique(ds.ids)
    f = encoder.encode_base(ds.features).astype(np.float64)
    pred = (f @ head["w"].T + head["b"]).argmax(axis=1)
    return float((pred == local_labels(ds.ids, classes)).mean())

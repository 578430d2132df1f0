"""Central finite-difference checks for tape gradients (float64)."""
import numpy as np

from .autodiff import grad_eval


def numeric_grad(loss_fn, params, name, step=1e-4):
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = np.zeros_like(base[name])
    flat = base[name].reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi, _ = grad_eval(loss_fn, base, trainable=())
        flat[i] = orig - step
        lo, _ = grad_eval(loss_fn, base, trainable=())
        flat[i] = orig
        g[i] = (hi - lo) / (2 * step)
    return out


def relative_error(analytic, numeric, floor=1e-7):
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor))


def check_gradients(loss_fn, params, trainable=None, step=1e-4):
    """Return ``{name: relative error}`` between tape and finite-difference gradients."""
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = grad_eval(loss_fn, params, trainable)
    return {name: relative_error(g, numeric_grad(loss_fn, params, name, step))
            for name, g in grads.items()}

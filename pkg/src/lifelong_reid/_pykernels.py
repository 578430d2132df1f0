"""Pure numpy fallbacks for the compiled kernels in ``_ext/_kernels.pyx``.

The eigensolver uses round-robin (parallel-order) Jacobi: each round rotates
n/2 disjoint index pairs at once, so every round is a handful of vectorized
column/row updates instead of n/2 scalar rotations.
"""
import numpy as np


def _round_robin(n):
    """Pairings for an n-player round robin (n even), n-1 rounds."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        pairs = [(players[i], players[n - 1 - i]) for i in range(half)]
        p = np.array([min(a, b) for a, b in pairs])
        q = np.array([max(a, b) for a, b in pairs])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a, tol, max_sweeps):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    m = n + (n % 2)
    A = np.zeros((m, m))
    A[:n, :n] = a
    V = np.eye(m)
    fro = np.linalg.norm(a)
    rounds = _round_robin(m) if m > 1 else []
    iu = np.triu_indices(n, 1)

    for sweep in range(max_sweeps + 1):
        off = np.sqrt(2.0 * np.sum(A[:n, :n][iu] ** 2))
        if off <= tol * fro or off == 0.0:
            return A.diagonal()[:n].copy(), V[:n, :n].copy(), sweep
        if sweep == max_sweeps:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) >= 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cp, cq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * cp - s * cq
            A[:, q] = s * cp + c * cq
            rp, rq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * rp - s[:, None] * rq
            A[q, :] = s[:, None] * rp + c[:, None] * rq
            A[p, q] = 0.0
            A[q, p] = 0.0
            vp, vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = c * vp - s * vq
            V[:, q] = s * vp + c * vq
    return A.diagonal()[:n].copy(), V[:n, :n].copy(), -1


def ranked_ap(order, q_ids, q_cams, g_ids, g_cams):
    order = np.asarray(order)
    ids = np.asarray(g_ids)[order]
    cams = np.asarray(g_cams)[order]
    same_id = ids == np.asarray(q_ids)[:, None]
    junk = same_id & (cams == np.asarray(q_cams)[:, None])
    keep = ~junk
    rel = same_id & keep
    rank = np.cumsum(keep, axis=1)
    hits = np.cumsum(rel, axis=1)
    nrel = rel.sum(axis=1)
    prec = np.where(rel, hits / np.maximum(rank, 1), 0.0)
    ap = np.where(nrel > 0, prec.sum(axis=1) / np.maximum(nrel, 1), 0.0)
    first = np.argmax(keep, axis=1)
    top = (keep.any(axis=1) & rel[np.arange(len(order)), first]).astype(np.int8)
    return ap, top, nrel.astype(np.int64)

"""Independent reference implementations used as test oracles.

Written in plain Python loops on purpose; nothing here imports the code
under test.
"""

import math

import numpy as np


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return g.reshape(x.shape)


def rel_err(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def staircase(i, C, U, N, M):
    """Class count at step i, counting reached stair edges one by one."""
    if i < U:
        return C
    stairs = 0
    for t in range(1, N + 1):
        if i - U >= t * (M + 1):
            stairs += 1
    return C * (1 + stairs)


def simulate_alg1(total_steps, U, N, M, mode="Full"):
    """Literal transcription of the pseudo-code's queue handling.

    Returns, per step, the list of selected newest-first queue indices and the
    queue length after the step. ``mode`` follows the scheduling ablations.
    """
    weight_queue = []  # index 0 is newest
    selected, lengths = [], []
    warm = 0 if mode == "NoWarmup" else U
    cap = N * (M + 1)
    for step in range(total_steps):
        picks = []
        if mode != "Baseline" and step >= warm:
            if len(weight_queue) > M and (mode != "NoStepPacing" or len(weight_queue) == cap):
                for idx in range(M, len(weight_queue), M + 1):
                    picks.append(idx)
            weight_queue.insert(0, step)
            if len(weight_queue) > cap:
                weight_queue.pop()
        selected.append(picks)
        lengths.append(len(weight_queue))
    return selected, lengths


def brute_ranking(q, r, same_set):
    """Reference order per query: descending cosine, ties by ascending index."""
    out = []
    for i in range(len(q)):
        scored = []
        for j in range(len(r)):
            if same_set and i == j:
                continue
            cos = sum(a * b for a, b in zip(q[i], r[j])) / (
                math.sqrt(sum(a * a for a in q[i])) * math.sqrt(sum(b * b for b in r[j]))
            )
            scored.append((-cos, j))
        scored.sort()
        out.append([j for _, j in scored])
    return out


def brute_metrics(q, r, q_labels, r_labels, ks, same_set):
    """Metrics straight from their definitions over all (query, ref) pairs."""
    n_q = len(q)
    recall = {k: 0.0 for k in ks}
    p1 = rp = mapr = 0.0
    for i in range(n_q):
        scored = []
        for j in range(len(r)):
            if same_set and i == j:
                continue
            cos = sum(a * b for a, b in zip(q[i], r[j])) / (
                math.sqrt(sum(a * a for a in q[i])) * math.sqrt(sum(b * b for b in r[j]))
            )
            scored.append((-cos, j))
        scored.sort()
        rel = [1 if r_labels[j] == q_labels[i] else 0 for _, j in scored]
        R = sum(rel)
        for k in ks:
            recall[k] += 1.0 if any(rel[:k]) else 0.0
        p1 += rel[0]
        rp += sum(rel[:R]) / R
        ap = 0.0
        for pos in range(R):
            if rel[pos]:
                ap += sum(rel[: pos + 1]) / (pos + 1)
        mapr += ap / R
    return {
        "recall_at": {k: v / n_q for k, v in recall.items()},
        "p_at_1": p1 / n_q,
        "r_precision": rp / n_q,
        "map_at_r": mapr / n_q,
    }


def scalar_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam over a sequence of gradients; returns the parameter trajectory."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
        out.append(p)
    return out

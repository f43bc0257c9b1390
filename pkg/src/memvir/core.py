"""Dense numeric primitives: normalization, cosine logits, stable softmax."""

import numpy as np

EPS = 1e-12


class ZeroNorm(ValueError):
    """Raised when a vector to be normalized has norm <= EPS."""


def l2_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > EPS:
        raise ZeroNorm(f"cannot normalize vector with norm {norm:.3g}")
    return v / norm


def row_norms(a, what="row"):
    """Return the l2 norms of the rows of ``a``; raise ZeroNorm on any degenerate row."""
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    bad = np.flatnonzero(~(norms > EPS))
    if bad.size:
        raise ZeroNorm(f"{what} {int(bad[0])} has norm {norms[bad[0]]:.3g}")
    return norms


def normalize_rows(a, what="row"):
    a = np.asarray(a, dtype=np.float64)
    norms = row_norms(a, what)
    return a / norms[:, None], norms


def stable_log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def logsumexp(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    zmax = np.max(z, axis=axis, keepdims=True)
    out = zmax + np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def pairwise_cosine(a, b):
    """Cosine similarity between every row of ``a`` (n x D) and every row of ``b`` (m x D)."""
    a_hat, _ = normalize_rows(np.atleast_2d(a))
    b_hat, _ = normalize_rows(np.atleast_2d(b))
    return a_hat @ b_hat.T


def normalize_backward(grad_hat, v_hat, norms):
    """Pull a gradient w.r.t. normalized rows back to the raw rows.

    d(v/|v|) = (I - v_hat v_hat^T) dv / |v|, applied row-wise.
    """
    radial = np.einsum("ij,ij->i", grad_hat, v_hat)
    return (grad_hat - v_hat * radial[:, None]) / norms[:, None]

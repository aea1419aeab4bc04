"""Pure numpy versions of the hot kernels.

Masking uses an additive -1e9 on pad logits; ``exp`` of that underflows to
exactly zero in float64, so pads carry zero attention weight.
"""
import numpy as np

MASK_PENALTY = -1e9


def attention_forward(f1, f2, x1, x2, mask1, mask2):
    """Soft alignment of two padded sentence batches.

    Returns ``(p_row, p_col, eps2, eps1)`` where ``p_row`` normalizes the
    logits ``f1 @ f2^T`` over sentence-2 positions and ``p_col`` over
    sentence-1 positions.
    """
    e = np.matmul(f1, f2.transpose(0, 2, 1))
    row = e + MASK_PENALTY * (1.0 - mask2)[:, None, :]
    row = np.exp(row - row.max(axis=2, keepdims=True))
    p_row = row / row.sum(axis=2, keepdims=True)
    col = e + MASK_PENALTY * (1.0 - mask1)[:, :, None]
    col = np.exp(col - col.max(axis=1, keepdims=True))
    p_col = col / col.sum(axis=1, keepdims=True)
    eps2 = np.matmul(p_row, x2)
    eps1 = np.matmul(p_col.transpose(0, 2, 1), x1)
    return p_row, p_col, eps2, eps1


def attention_backward(d_eps2, d_eps1, p_row, p_col, f1, f2, x1, x2):
    """Returns ``(d_f1, d_f2, d_x1, d_x2)``; the x grads cover the weighted
    sums only."""
    d_x2 = np.matmul(p_row.transpose(0, 2, 1), d_eps2)
    d_x1 = np.matmul(p_col, d_eps1)
    d_prow = np.matmul(d_eps2, x2.transpose(0, 2, 1))
    d_pcol = np.matmul(x1, d_eps1.transpose(0, 2, 1))
    d_e = p_row * (d_prow - np.sum(p_row * d_prow, axis=2, keepdims=True))
    d_e += p_col * (d_pcol - np.sum(p_col * d_pcol, axis=1, keepdims=True))
    d_f1 = np.matmul(d_e, f2)
    d_f2 = np.matmul(d_e.transpose(0, 2, 1), f1)
    return d_f1, d_f2, d_x1, d_x2


def pool_forward(v, mask):
    """Masked sum and max pooling over axis 1; also returns argmax rows."""
    vsum = np.einsum("blh,bl->bh", v, mask)
    masked = np.where(mask[:, :, None] > 0, v, -np.inf)
    argmax = np.argmax(masked, axis=1)
    vmax = np.take_along_axis(v, argmax[:, None, :], axis=1)[:, 0, :]
    return vsum, vmax, argmax.astype(np.int64)


def pool_backward(d_sum, d_max, argmax, mask):
    B, L = mask.shape
    h = d_sum.shape[1]
    dv = mask[:, :, None] * d_sum[:, None, :]
    bi = np.arange(B)[:, None]
    hi = np.arange(h)[None, :]
    np.add.at(dv, (bi, argmax, hi), d_max)
    return dv


def cdf_l1(u, v):
    """Sum over support positions of |CDF_u - CDF_v|."""
    return float(np.sum(np.abs(np.cumsum(u) - np.cumsum(v))))

"""Raw numpy kernels for same-padding 2-D convolution.

Layout is channels-first: activations are (C, N, H, W) where N indexes
(frame, batch) pairs. The convolution is lowered to one GEMM per direction in
the (C_out x K) @ (K x N*M) orientation, which is the fastest shape for the
BLAS this targets. Columns are gathered through a flattened sliding window
over the padded image: window position p = i*(W+2p) + j addresses the output
pixel (i, j), and tap (dy, dx) lives at p + dy*(W+2p) + dx. Positions whose j
falls in the padding wrap to the next row and produce garbage lanes; they are
sliced away from the forward output and zero-masked in the weight-gradient
GEMM.

The large transient buffers (padded inputs, column matrices, extended GEMM
outputs) repeat their shapes every training step, so they come from a small
keyed workspace pool instead of fresh allocations; on hosts with slow
page-fault paths this is worth several seconds per step. The engine is
single-threaded per run, so the pool needs no locking.
"""

from __future__ import annotations

import numpy as np

# keep per-chunk column buffers a few hundred MB at Table II sizes
_CHUNK_BYTES = 420e6

_pool: dict = {}


def _scratch(key: str, shape) -> np.ndarray:
    """Reusable float64 buffer of at least prod(shape) elements."""
    need = int(np.prod(shape))
    buf = _pool.get(key)
    if buf is None or buf.size < need:
        buf = np.empty(need)
        _pool[key] = buf
    return buf[:need].reshape(shape)


def clear_workspace():
    _pool.clear()


def _geometry(h: int, w: int, kh: int, kw: int):
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    m = (h - 1) * wp + w  # flat window positions covering all valid outputs
    return ph, pw, hp, wp, m


def _pad_into(key: str, x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Zero-padded copy of (C, n, H, W) in a pooled buffer."""
    c, n, h, w = x.shape
    out = _scratch(key, (c, n, h + 2 * ph, w + 2 * pw))
    if ph or pw:
        out[:, :, :ph, :] = 0.0
        out[:, :, h + ph:, :] = 0.0
        out[:, :, :, :pw] = 0.0
        out[:, :, :, w + pw:] = 0.0
    out[:, :, ph:h + ph, pw:w + pw] = x
    return out


def _build_cols(key: str, xp: np.ndarray, kh: int, kw: int, wp: int, m: int) -> np.ndarray:
    """Gather (kh*kw*C, n*m) columns from a padded image stack (C, n, HP, WP)."""
    c, n = xp.shape[:2]
    xf = xp.reshape(c, n, -1)
    cols = _scratch(key, (kh * kw, c, n, m))
    q = 0
    for dy in range(kh):
        for dx in range(kw):
            off = dy * wp + dx
            cols[q] = xf[:, :, off:off + m]
            q += 1
    return cols.reshape(kh * kw * c, n * m)


def _extract_valid(ye: np.ndarray, c: int, n: int, h: int, w: int, wp: int,
                   out: np.ndarray) -> None:
    """Copy the valid (C, n, H, W) block out of extended GEMM output (C, n*M)."""
    yv = ye.reshape(c, n, -1)
    view = np.lib.stride_tricks.as_strided(
        yv,
        shape=(c, n, h, w),
        strides=(yv.strides[0], yv.strides[1], wp * yv.itemsize, yv.itemsize),
    )
    np.copyto(out, view)


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    # (Co, Ci, kh, kw) -> (Co, kh*kw*Ci) matching the (dy, dx, ci) column order
    co = w.shape[0]
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(co, -1)


def _rotated_weight_matrix(w: np.ndarray) -> np.ndarray:
    # backward-data kernel: swap in/out channels, rotate taps 180 degrees
    ci = w.shape[1]
    return np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 2, 3, 0)).reshape(ci, -1)


def _chunk(n: int, per_image_bytes: float) -> int:
    return max(1, min(n, int(_CHUNK_BYTES / max(per_image_bytes, 1.0))))


def conv2d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padding convolution, x (Ci, N, H, W), w (Co, Ci, kh, kw) -> (Co, N, H, W)."""
    ci, n, h, wdt = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise ValueError(f"input has {ci} channels, kernel expects {ci_w}")
    ph, pw, hp, wp, m = _geometry(h, wdt, kh, kw)
    wm = _weight_matrix(w)
    out = np.empty((co, n, h, wdt))
    step = _chunk(n, kh * kw * ci * m * 8)
    for s in range(0, n, step):
        e = min(n, s + step)
        xp = _pad_into("fwd_pad", x[:, s:e], ph, pw)
        cols = _build_cols("fwd_cols", xp, kh, kw, wp, m)
        ye = _scratch("fwd_out", (co, (e - s) * m))
        np.matmul(wm, cols, out=ye)
        _extract_valid(ye, co, e - s, h, wdt, wp, out[:, s:e])
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray,
                    need_gx: bool = True):
    """Gradients of conv2d_forward. Returns (gx or None, gw)."""
    ci, n, h, wdt = x.shape
    co, _, kh, kw = w.shape
    ph, pw, hp, wp, m = _geometry(h, wdt, kh, kw)
    gw_mat = np.zeros((co, kh * kw * ci))
    gx = np.empty_like(x) if need_gx else None
    wrot = _rotated_weight_matrix(w) if need_gx else None
    step = _chunk(n, kh * kw * max(ci, co) * m * 8)
    for s in range(0, n, step):
        e = min(n, s + step)
        nn = e - s
        # weight gradient: scatter gy into the extended layout so garbage
        # column lanes multiply against zeros
        ge = _scratch("bwd_scatter", (co, nn, m))
        it = ge.itemsize
        gev = np.lib.stride_tricks.as_strided(
            ge, shape=(co, nn, h, wdt), strides=(ge.strides[0], ge.strides[1],
                                                 wp * it, it))
        if wp > wdt:
            # zero only the wrap-around lanes between valid rows
            lanes = np.lib.stride_tricks.as_strided(
                ge, shape=(co, nn, h - 1, wp - wdt),
                strides=(ge.strides[0], ge.strides[1], wp * it, it))
            lanes2 = np.lib.stride_tricks.as_strided(
                ge.reshape(-1)[wdt:], shape=(co, nn, h - 1, wp - wdt),
                strides=(ge.strides[0], ge.strides[1], wp * it, it))
            lanes2[...] = 0.0
        gev[...] = gy[:, s:e]
        xp = _pad_into("fwd_pad", x[:, s:e], ph, pw)
        cols = _build_cols("fwd_cols", xp, kh, kw, wp, m)
        gw_mat += ge.reshape(co, nn * m) @ cols.T
        if need_gx:
            gp = _pad_into("bwd_pad", gy[:, s:e], ph, pw)
            colsg = _build_cols("bwd_cols", gp, kh, kw, wp, m)
            ge2 = _scratch("bwd_out", (ci, nn * m))
            np.matmul(wrot, colsg, out=ge2)
            _extract_valid(ge2, ci, nn, h, wdt, wp, gx[:, s:e])
    gw = np.ascontiguousarray(
        gw_mat.reshape(co, kh, kw, ci).transpose(0, 3, 1, 2))
    return gx, gw


def avgpool2_forward(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 mean pooling, (C, N, H, W) -> (C, N, H/2, W/2)."""
    c, n, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    return 0.25 * (x[:, :, 0::2, 0::2] + x[:, :, 0::2, 1::2]
                   + x[:, :, 1::2, 0::2] + x[:, :, 1::2, 1::2])


def avgpool2_backward(gy: np.ndarray) -> np.ndarray:
    """Spread each pooled gradient evenly over its 2x2 window."""
    c, n, h2, w2 = gy.shape
    gx = np.empty((c, n, h2 * 2, w2 * 2))
    q = 0.25 * gy
    gx[:, :, 0::2, 0::2] = q
    gx[:, :, 0::2, 1::2] = q
    gx[:, :, 1::2, 0::2] = q
    gx[:, :, 1::2, 1::2] = q
    return gx

"""Array kernels with a compiled fast path.

The Cython extension is optional; set HLSDSE_PURE_PYTHON=1 to force the
numpy fallback even when the extension built.  Both paths return bitwise
identical float64 results, so everything downstream is backend agnostic.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _speedups

    _HAVE_EXT = True
except ImportError:
    _speedups = None
    _HAVE_EXT = False

HAS_COMPILED = _HAVE_EXT and os.environ.get("HLSDSE_PURE_PYTHON", "") != "1"


def _as_index(idx: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(idx, dtype=np.int64)


def scatter_add_rows_numpy(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    np.add.at(out, idx, src)


def segment_max_rows_numpy(out: np.ndarray, seg: np.ndarray, src: np.ndarray) -> None:
    np.maximum.at(out, seg, src)


def gather_rows_add_numpy(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    out += src[idx]


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """out[idx[e]] += src[e], accumulating duplicate rows."""
    if HAS_COMPILED:
        _speedups.scatter_add_rows(out, _as_index(idx), np.ascontiguousarray(src))
    else:
        scatter_add_rows_numpy(out, idx, src)


def segment_max_rows(out: np.ndarray, seg: np.ndarray, src: np.ndarray) -> None:
    """Rowwise running max into out[seg[e]]; pre-fill out with -inf."""
    if HAS_COMPILED:
        _speedups.segment_max_rows(out, _as_index(seg), np.ascontiguousarray(src))
    else:
        segment_max_rows_numpy(out, seg, src)


def gather_rows_add(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """out[e] += src[idx[e]] (adjoint of scatter_add_rows)."""
    if HAS_COMPILED:
        _speedups.gather_rows_add(out, _as_index(idx), np.ascontiguousarray(src))
    else:
        gather_rows_add_numpy(out, idx, src)


def gather2_add_numpy(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, ia: np.ndarray, ib: np.ndarray
) -> np.ndarray:
    buf = a[ia]
    buf += b[ib]
    buf += c
    return buf


def scatter2_add_rows_numpy(
    ga: np.ndarray, gb: np.ndarray, ia: np.ndarray, ib: np.ndarray, g: np.ndarray
) -> None:
    np.add.at(ga, ia, g)
    np.add.at(gb, ib, g)


def gather2_add(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, ia: np.ndarray, ib: np.ndarray
) -> np.ndarray:
    """Return a[ia] + b[ib] + c without the intermediate gathers."""
    if HAS_COMPILED:
        out = np.empty_like(c)
        _speedups.gather2_add(
            out,
            np.ascontiguousarray(a),
            np.ascontiguousarray(b),
            np.ascontiguousarray(c),
            _as_index(ia),
            _as_index(ib),
        )
        return out
    return gather2_add_numpy(a, b, c, ia, ib)


def scatter2_add_rows(
    ga: np.ndarray, gb: np.ndarray, ia: np.ndarray, ib: np.ndarray, g: np.ndarray
) -> None:
    """ga[ia[e]] += g[e] and gb[ib[e]] += g[e] (adjoint of gather2_add)."""
    if HAS_COMPILED:
        _speedups.scatter2_add_rows(ga, gb, _as_index(ia), _as_index(ib), np.ascontiguousarray(g))
    else:
        scatter2_add_rows_numpy(ga, gb, ia, ib, g)


def weighted_gather_scatter_numpy(
    out: np.ndarray, alpha: np.ndarray, values: np.ndarray, src: np.ndarray, dst: np.ndarray
) -> None:
    np.add.at(out, dst, alpha * values[src])


def weighted_gather_scatter_bwd_numpy(
    galpha: np.ndarray,
    gvalues: np.ndarray,
    alpha: np.ndarray,
    values: np.ndarray,
    src: np.ndarray,
    dst: np.ndarray,
    g: np.ndarray,
) -> None:
    gseg = g[dst]
    galpha[:, 0] = np.einsum("ej,ej->e", values[src], gseg)
    np.add.at(gvalues, src, alpha * gseg)


def weighted_gather_scatter(
    out: np.ndarray, alpha: np.ndarray, values: np.ndarray, src: np.ndarray, dst: np.ndarray
) -> None:
    """out[dst[e]] += alpha[e, 0] * values[src[e]] (attention aggregation)."""
    if HAS_COMPILED:
        _speedups.weighted_gather_scatter(
            out,
            np.ascontiguousarray(alpha),
            np.ascontiguousarray(values),
            _as_index(src),
            _as_index(dst),
        )
    else:
        weighted_gather_scatter_numpy(out, alpha, values, src, dst)


def weighted_gather_scatter_bwd(
    galpha: np.ndarray,
    gvalues: np.ndarray,
    alpha: np.ndarray,
    values: np.ndarray,
    src: np.ndarray,
    dst: np.ndarray,
    g: np.ndarray,
) -> None:
    """Adjoint of weighted_gather_scatter; galpha is overwritten, gvalues accumulated."""
    if HAS_COMPILED:
        _speedups.weighted_gather_scatter_bwd(
            galpha,
            gvalues,
            np.ascontiguousarray(alpha),
            np.ascontiguousarray(values),
            _as_index(src),
            _as_index(dst),
            np.ascontiguousarray(g),
        )
    else:
        weighted_gather_scatter_bwd_numpy(galpha, gvalues, alpha, values, src, dst, g)


def leaky_forward(x: np.ndarray, slope: float) -> np.ndarray:
    """Elementwise x if x > 0 else slope * x."""
    if HAS_COMPILED and x.ndim == 2:
        out = np.empty_like(x)
        _speedups.leaky_forward(out, np.ascontiguousarray(x), slope)
        return out
    return np.where(x > 0, x, slope * x)


def leaky_backward(x: np.ndarray, g: np.ndarray, slope: float) -> np.ndarray:
    """Adjoint of leaky_forward: g if x > 0 else slope * g."""
    if HAS_COMPILED and x.ndim == 2:
        gx = np.empty_like(g)
        _speedups.leaky_backward(gx, np.ascontiguousarray(x), np.ascontiguousarray(g), slope)
        return gx
    return np.where(x > 0, g, slope * g)


def backend_name() -> str:
    return "compiled" if HAS_COMPILED else "numpy"

"""Finite-difference gradient operators restricted to a pixel mask."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptyDomain
from .geometry import Intrinsics


class GradientScheme(enum.Enum):
    """How ``(z_x, z_y)`` is discretized at each masked pixel.

    ``FORWARD``
        forward difference, backward difference when the forward
        neighbour is outside the mask.
    ``AVERAGED``
        mean of the forward and backward differences where both
        neighbours are masked (a central difference), one-sided otherwise.

    A pixel with no masked neighbour along an axis gets a zero row.
    """

    FORWARD = "forward"
    AVERAGED = "averaged"


def _axis_operator(mask, index, axis, scheme):
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    n = len(ys)

    def neighbour(step):
        yy, xx = ys.copy(), xs.copy()
        if axis == 1:
            xx = xx + step
            ok = (xx >= 0) & (xx < w)
        else:
            yy = yy + step
            ok = (yy >= 0) & (yy < h)
        j = np.full(n, -1)
        j[ok] = index[yy[ok], xx[ok]]
        return j

    fwd = neighbour(+1)
    bwd = neighbour(-1)
    has_f = fwd >= 0
    has_b = bwd >= 0
    rows, cols, vals = [], [], []
    pix = np.arange(n)

    def add(sel, j, wgt):
        rows.append(pix[sel])
        cols.append(j[sel])
        vals.append(np.full(sel.sum(), wgt))
        rows.append(pix[sel])
        cols.append(pix[sel])
        vals.append(np.full(sel.sum(), -wgt))

    if scheme is GradientScheme.FORWARD:
        add(has_f, fwd, 1.0)
        only_b = ~has_f & has_b
        # backward difference z[p] - z[p-1]
        add(only_b, bwd, -1.0)
    else:
        both = has_f & has_b
        add(both, fwd, 0.5)
        add(both, bwd, -0.5)
        add(has_f & ~has_b, fwd, 1.0)
        add(has_b & ~has_f, bwd, -1.0)
    D = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    D.sum_duplicates()
    D.eliminate_zeros()
    return D


@dataclass
class MaskDomain:
    """Masked pixel set with its discrete gradient and per-pixel camera offsets.

    Everything the solvers touch is stored as vectors over the ``n`` masked
    pixels in row-major order.
    """

    mask: np.ndarray
    scheme: GradientScheme
    intr: Intrinsics
    ys: np.ndarray
    xs: np.ndarray
    xt: np.ndarray
    yt: np.ndarray
    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    index: np.ndarray

    @classmethod
    def build(cls, mask, intr: Intrinsics, scheme=GradientScheme.AVERAGED) -> "MaskDomain":
        mask = np.asarray(mask, dtype=bool)
        scheme = GradientScheme(scheme)
        ys, xs = np.nonzero(mask)
        if len(ys) == 0:
            raise EmptyDomain("mask has no pixels")
        index = np.full(mask.shape, -1, dtype=np.int64)
        index[ys, xs] = np.arange(len(ys))
        Dx = _axis_operator(mask, index, 1, scheme)
        Dy = _axis_operator(mask, index, 0, scheme)
        if Dx.nnz == 0 and Dy.nnz == 0:
            raise EmptyDomain("no masked pixel has a masked neighbour")
        xt, yt = intr.offsets(xs, ys)
        return cls(mask, scheme, intr, ys, xs, xt, yt, Dx, Dy, index)

    @property
    def n(self) -> int:
        return len(self.ys)

    @property
    def shape(self):
        return self.mask.shape

    def gradient(self, z):
        """Per-pixel ``(n, 2)`` gradient of a pixel vector ``z``."""
        return np.column_stack([self.Dx @ z, self.Dy @ z])

    def gather(self, arr):
        """Masked entries of an ``(H, W)`` or ``(H, W, C)`` array."""
        return np.asarray(arr, dtype=float)[self.ys, self.xs]

    def scatter(self, vec, fill=np.nan):
        """Inverse of :meth:`gather`; unmasked pixels get ``fill``."""
        vec = np.asarray(vec)
        out = np.full(self.mask.shape + vec.shape[1:], fill, dtype=float)
        out[self.ys, self.xs] = vec
        return out

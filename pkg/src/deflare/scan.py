"""Bijections between 2-D grids and 1-D scan sequences.

Three families of index maps live here, all represented as permutations of
the flat (row-major) grid indices so they compose and invert cheaply:

* the local-window order, which visits non-overlapping windows in raster
  order and pixels inside each window in raster order, keeping spatial
  neighbors close in sequence position;
* the four directional variants (identity, transpose, full sequence
  reversal, transposed reversal), each scanned with its own SSM;
* the hierarchical stride partition, which samples every 2^i-th pixel from
  each of the 4^i offsets into zero-padded sub-images, scans them, and maps
  the results back so distant pixels meet at short sub-sequence distances.

On top of the index maps sit the two differentiable composites,
:func:`local_enhanced_ss2d` and :func:`hier_scan`.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DomainError
from .ssm import SsmParams, selective_scan_op


# ---------------------------------------------------------------------------
# scan orders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanOrder:
    """A bijection between sequence positions and flat grid indices.

    ``forward[p]`` is the flat grid index visited at sequence position
    ``p``; ``inverse`` is its inverse permutation.
    """
    forward: np.ndarray
    inverse: np.ndarray
    h: int
    w: int

    def __post_init__(self):
        for arr in (self.forward, self.inverse):
            arr.setflags(write=False)


def _order_from_forward(forward: np.ndarray, h: int, w: int) -> ScanOrder:
    inverse = np.empty_like(forward)
    inverse[forward] = np.arange(forward.size, dtype=np.int64)
    return ScanOrder(forward=forward, inverse=inverse, h=h, w=w)


def raster_order(h: int, w: int) -> ScanOrder:
    return _order_from_forward(np.arange(h * w, dtype=np.int64), h, w)


@functools.lru_cache(maxsize=512)
def local_window_order(h: int, w: int, win_h: int, win_w: int) -> ScanOrder:
    """Window-by-window raster order.

    Windows tile the grid from the top-left; edge windows keep their
    natural (smaller) extent when the window does not divide the grid.
    """
    if win_h < 1 or win_w < 1:
        raise DomainError(f"window extents must be >= 1, got ({win_h}, {win_w})")
    forward = np.empty(h * w, dtype=np.int64)
    pos = 0
    for wy in range(0, h, win_h):
        for wx in range(0, w, win_w):
            for y in range(wy, min(wy + win_h, h)):
                for x in range(wx, min(wx + win_w, w)):
                    forward[pos] = y * w + x
                    pos += 1
    return _order_from_forward(forward, h, w)


def _variant_maps(h: int, w: int):
    """The four directional base permutations and their variant grid extents.

    Entry p of a map is the original flat index read at variant-grid
    position p: identity, transpose (grid becomes w x h), full sequence
    reversal, and transposed reversal.
    """
    hw = h * w
    ident = np.arange(hw, dtype=np.int64)
    # transposed grid is w x h; its position p = a*h + b reads pixel (b, a)
    tr = (np.arange(hw, dtype=np.int64) % h) * w + np.arange(hw, dtype=np.int64) // h
    return (
        (ident, h, w),
        (tr, w, h),
        (ident[::-1].copy(), h, w),
        (tr[::-1].copy(), w, h),
    )


@functools.lru_cache(maxsize=512)
def directional_orders(h: int, w: int, win_h: int, win_w: int):
    """The four directional scan permutations for an h x w grid.

    Direction d maps sequence position p to the flat index of the original
    grid: first the variant transform, then the local-window order on the
    variant grid.  Returns a tuple of four ScanOrders on the original grid.
    """
    orders = []
    for vmap, vh, vw in _variant_maps(h, w):
        worder = local_window_order(vh, vw, win_h, win_w)
        orders.append(_order_from_forward(vmap[worder.forward], h, w))
    return tuple(orders)


def directional_variants(x: Tensor):
    """Materialize the four directional views of an (H, W, C) map.

    Returns four ``(variant, invert)`` pairs where ``invert`` restores the
    original layout; round-tripping any variant is the identity.
    """
    x = ad.as_tensor(x)
    h, w, c = x.shape
    out = []
    for vmap, vh, vw in _variant_maps(h, w):
        order = _order_from_forward(vmap, h, w)
        flat = ad.reshape(x, (h * w, c))
        var = ad.reshape(ad.permute_rows(flat, order.forward, order.inverse), (vh, vw, c))

        def invert(v, order=order, vh=vh, vw=vw):
            flat_v = ad.reshape(ad.as_tensor(v), (vh * vw, v.shape[-1]))
            return ad.reshape(
                ad.permute_rows(flat_v, order.inverse, order.forward), (h, w, v.shape[-1])
            )

        out.append((var, invert))
    return out


# ---------------------------------------------------------------------------
# hierarchical stride partition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HierPartition:
    """Level-i stride partition of an h x w grid.

    ``index[s, j]`` is the flat grid index feeding padded sub-position j of
    sub-image s, or -1 where that position is padding.  ``sub_id`` and
    ``sub_pos`` invert the map per grid pixel.
    """
    level: int
    h: int
    w: int
    offsets: tuple
    sub_shape: tuple
    index: np.ndarray
    sub_id: np.ndarray = field(repr=False)
    sub_pos: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return self.index.shape[0]


@functools.lru_cache(maxsize=256)
def hier_partition_info(h: int, w: int, level: int) -> HierPartition:
    """Index bookkeeping for the level-i partition (pure, cached)."""
    if level < 1:
        raise DomainError(f"hierarchy level must be >= 1, got {level}")
    stride = 1 << level
    hs = -(-h // stride)
    ws = -(-w // stride)
    offsets = [(hk, wk) for hk in range(stride) for wk in range(stride)]
    index = np.full((len(offsets), hs * ws), -1, dtype=np.int64)
    for s, (hk, wk) in enumerate(offsets):
        rows = hk + stride * np.arange(hs)
        cols = wk + stride * np.arange(ws)
        rmask = rows < h
        cmask = cols < w
        grid = rows[rmask][:, None] * w + cols[cmask][None, :]
        sub = np.full((hs, ws), -1, dtype=np.int64)
        sub[np.ix_(rmask, cmask)] = grid
        index[s] = sub.reshape(-1)
    sub_id = np.empty(h * w, dtype=np.int64)
    sub_pos = np.empty(h * w, dtype=np.int64)
    for s in range(index.shape[0]):
        valid = index[s] >= 0
        sub_id[index[s][valid]] = s
        sub_pos[index[s][valid]] = np.nonzero(valid)[0]
    index.setflags(write=False)
    sub_id.setflags(write=False)
    sub_pos.setflags(write=False)
    return HierPartition(level=level, h=h, w=w, offsets=tuple(offsets),
                         sub_shape=(hs, ws), index=index, sub_id=sub_id,
                         sub_pos=sub_pos)


def hier_partition(f: Tensor, level: int):
    """Split (H, W, C) into the 4^level zero-padded stride sub-images.

    Returns ``(subs, part)`` with ``subs`` of shape (S, hs, ws, C).  Padded
    positions hold zero and carry zero gradient.
    """
    f = ad.as_tensor(f)
    h, w, c = f.shape
    part = hier_partition_info(h, w, level)
    hs, ws = part.sub_shape
    flat = ad.reshape(f, (h * w, c))
    subs = ad.reshape(ad.gather_pad(flat, part.index), (part.count, hs, ws, c))
    return subs, part


def hier_reverse(subs: Tensor, part: HierPartition) -> Tensor:
    """Map processed sub-images back onto the original grid; drops padding."""
    subs = ad.as_tensor(subs)
    hs, ws = part.sub_shape
    if subs.shape[:3] != (part.count, hs, ws):
        raise ContractError(
            f"hier_reverse: sub-images {subs.shape} do not match partition "
            f"({part.count}, {hs}, {ws}, C)"
        )
    c = subs.shape[3]
    flat = ad.reshape(subs, (part.count, hs * ws, c))
    out = ad.scatter_cover(flat, part.index, part.h * part.w)
    return ad.reshape(out, (part.h, part.w, c))


# ---------------------------------------------------------------------------
# the scanning composites
# ---------------------------------------------------------------------------

def _le_scan_batch(xs: Tensor, ssms, win: tuple[int, int]) -> Tensor:
    """Four-direction local-window selective scan over a batch of grids.

    ``xs`` is (S, h, w, C); the same four parameter sets serve every batch
    entry (gradients sum across the batch).  Output matches the input shape
    and is the sum of the four directional results.
    """
    s_count, h, w, c = xs.shape
    L = h * w
    orders = directional_orders(h, w, win[0], win[1])
    flat = ad.reshape(xs, (s_count, L, c))

    seqs, deltas, bs, cs, a_rows, d_vals = [], [], [], [], [], []
    for o, p in zip(orders, ssms):
        seq = ad.permute_rows(flat, o.forward, o.inverse)
        seqs.append(seq)
        deltas.append(ad.softplus(ad.linear(seq, p.w_delta, p.delta_base)))
        bs.append(ad.linear(seq, p.w_b, p.b_base))
        cs.append(ad.linear(seq, p.w_c, p.c_base))
        a_rows.append(ad.neg(ad.texp(p.a_log)))
        d_vals.append(p.d)

    n = ssms[0].state_size
    u = ad.reshape(ad.stack(seqs, axis=1), (s_count * 4, L, c))
    delta = ad.reshape(ad.stack(deltas, axis=1), (s_count * 4, L, c))
    b = ad.reshape(ad.stack(bs, axis=1), (s_count * 4, L, n))
    cc = ad.reshape(ad.stack(cs, axis=1), (s_count * 4, L, n))
    a = ad.reshape(ad.tile_leading(ad.stack(a_rows, axis=0), s_count), (s_count * 4, n))
    d = ad.reshape(ad.tile_leading(ad.stack(d_vals, axis=0), s_count), (s_count * 4,))

    y = ad.reshape(selective_scan_op(u, delta, b, cc, a, d), (s_count, 4, L, c))
    total = None
    for i, o in enumerate(orders):
        part = ad.permute_rows(ad.take_index(y, i, axis=1), o.inverse, o.forward)
        total = part if total is None else ad.add(total, part)
    return ad.reshape(total, (s_count, h, w, c))


def local_enhanced_ss2d(x: Tensor, ssms, win: tuple[int, int]) -> Tensor:
    """Window-partitioned four-direction selective scan of one (H, W, C) map.

    Each direction owns an independent :class:`SsmParams`; the directional
    results are summed.
    """
    x = ad.as_tensor(x)
    if len(ssms) != 4:
        raise ContractError(f"local_enhanced_ss2d needs 4 parameter sets, got {len(ssms)}")
    h, w, c = x.shape
    out = _le_scan_batch(ad.reshape(x, (1, h, w, c)), ssms, win)
    return ad.reshape(out, (h, w, c))


def hier_scan(f: Tensor, level_ssms, win: tuple[int, int]) -> Tensor:
    """Hierarchical selective scan: partition, scan, reverse, average.

    ``level_ssms[i-1]`` holds the four directional parameter sets used at
    level i; levels run 1..K and the K per-level results are averaged.
    """
    f = ad.as_tensor(f)
    k = len(level_ssms)
    if k < 1:
        raise DomainError("hier_scan needs at least one level")
    h, w, c = f.shape
    acc = None
    for i, ssms in enumerate(level_ssms, start=1):
        subs, part = hier_partition(f, i)
        scanned = _le_scan_batch(subs, ssms, win)
        level_out = hier_reverse(scanned, part)
        acc = level_out if acc is None else ad.add(acc, level_out)
    return ad.scale(acc, 1.0 / k)


def make_direction_params(channels: int, state_size: int,
                          rng: np.random.Generator) -> list[SsmParams]:
    """Four fresh, independent parameter sets, one per scan direction."""
    return [SsmParams.init(channels, state_size, rng) for _ in range(4)]

#!/usr/bin/env python3
"""Scan orders as pictures: raster vs local windows, the four directions,
and the hierarchical stride partition.

Run:  python demos/02_scan_orders.py
"""

import numpy as np

from deflare import scan


def show(title, forward, h, w):
    grid = np.empty((h, w), dtype=int)
    for pos, flat in enumerate(forward):
        grid[flat // w, flat % w] = pos
    print(f"\n{title}")
    for row in grid:
        print("  " + " ".join(f"{v:3d}" for v in row))


H = W = 8

# Raster order walks full rows: vertical neighbors end up W apart in the
# sequence.  Window order keeps every 4x4 block contiguous.
show("raster order (sequence position per pixel)",
     scan.local_window_order(H, W, H, W).forward, H, W)
show("4x4 local-window order",
     scan.local_window_order(H, W, 4, 4).forward, H, W)

pos = scan.local_window_order(H, W, 4, 4).inverse
print("\nsequence distance between (0,0) and (1,0):")
print("  raster:", W, "  window:", abs(int(pos[W]) - int(pos[0])))

# The four directional variants of a tiny grid, as flat index orders.
print("\ndirectional orders on a 2x2 grid (window = grid):")
for name, order in zip(["identity", "transpose", "reversal", "transp+rev"],
                       scan.directional_orders(2, 2, 2, 2)):
    print(f"  {name:11s} {order.forward.tolist()}")

# Hierarchical partition: level i samples every 2^i-th pixel from 4^i
# offsets, so pixels far apart land next to each other in a sub-image.
part = scan.hier_partition_info(H, W, 1)
grid = np.empty((H, W), dtype=int)
for s in range(part.count):
    idx = part.index[s]
    grid.reshape(-1)[idx[idx >= 0]] = s
print("\nlevel-1 partition: sub-image id per pixel")
for row in grid:
    print("  " + " ".join(str(v) for v in row))
print("pixels (0,0) and (0,2) share sub-image",
      part.sub_id[0] == part.sub_id[2],
      "at sub-positions", int(part.sub_pos[0]), "and", int(part.sub_pos[2]))

"""
Windowed attention and the shifted grid
=======================================

Attention runs inside fixed windows.  Every other block shifts the grid
by half a window so neighboring windows exchange information; a mask
keeps tokens that wrapped around the edge from attending to each other.
"""
import numpy as np

from yotor.nn import Tensor
from yotor.swin import (SwinBlock, attention_mask, shift_zone_map,
                        window_partition, window_reverse)

H = W = 8
WS = 4
SHIFT = 2

# zone labels on the shifted grid: tokens sharing a label may attend
zones = shift_zone_map(H, W, H, W, WS, SHIFT)
print("shift zones (tokens sharing a number may attend):")
print(zones)

# the mask is per window: 0 where attention is allowed, a large negative
# value where it is forbidden
mask = attention_mask(H, W, H, W, WS, SHIFT, np.float32)
print(f"\nmask shape {mask.shape}: "
      f"{(mask.data < 0).mean():.0%} of pairs are blocked")

# window partition is exactly invertible
x = Tensor(np.arange(H * W, dtype=np.float32).reshape(1, H, W, 1))
wins = window_partition(x, WS)
back = window_reverse(wins, WS, H, W)
print(f"\npartition {x.shape} -> {wins.shape} -> reverse {back.shape}, "
      f"roundtrip exact: {np.array_equal(x.data, back.data)}")

# a full block: pad to a window multiple, roll, attend, roll back, crop.
# Ragged grids are handled by the same path.
rng = np.random.default_rng(0)
block = SwinBlock(dim=16, num_heads=2, window_size=WS, shift=SHIFT, rng=rng)
y = block(Tensor(rng.normal(size=(1, 7, 9, 16)).astype(np.float32)))
print(f"shifted block on a ragged 7x9 grid -> {y.shape}")

# shift 0 and shift ws//2 alternate inside every stage
print("\nblock shifts alternate:",
      [WS // 2 if i % 2 else 0 for i in range(4)])

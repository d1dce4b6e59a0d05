"""Published size tables: backbone variants, anchor boxes, channel plans."""
from __future__ import annotations

# transformer backbone sizes: embed dim, blocks per stage, heads per stage
SWIN_VARIANTS = {
    "T": dict(embed_dim=96, depths=(2, 2, 6, 2), num_heads=(3, 6, 12, 24)),
    "S": dict(embed_dim=96, depths=(2, 2, 18, 2), num_heads=(3, 6, 12, 24)),
    "B": dict(embed_dim=128, depths=(2, 2, 18, 2), num_heads=(4, 8, 16, 32)),
    "L": dict(embed_dim=192, depths=(2, 2, 18, 2), num_heads=(6, 12, 24, 48)),
}

# anchor (w, h) pairs in input pixels, three per level, finest level first
ANCHORS_P6 = (
    (19, 27, 44, 40, 38, 94),
    (96, 68, 86, 152, 180, 137),
    (140, 301, 303, 264, 238, 542),
    (436, 615, 739, 380, 925, 792),
)

STRIDES_P6 = (8, 16, 32, 64)

# four-level pyramid plan shared by the adapter-style variants
PLAN_P6 = dict(
    tap_channels=(256, 384, 512),
    p6_channels=640,
    neck_widths=(128, 192, 256, 320),
    head_channels=(256, 384, 512, 640),
    csp_depth=3,
)

# toy anchor set for desk-scale models: same ladder structure, tuned to the
# synthetic-rectangle distribution the way real sets are tuned per dataset.
# 32..56 px objects fall inside the size-ratio gate only at stride 16, which
# keeps every assignment on one level and the box targets clean.
ANCHORS_TOY = (
    (6, 6, 8, 6, 6, 8),
    (32, 32, 44, 32, 32, 48),
    (224, 224, 288, 224, 224, 288),
    (448, 448, 576, 448, 448, 576),
)

"""
Building the model family
=========================

Every model here is one config object away.  The four published hybrids
pair a windowed-attention backbone with a convolutional detection neck;
the toy variant keeps the same four-level layout at desk scale.
"""
import numpy as np

from yotor.builder import ModelConfig, build, summarize
from yotor.nn import Tensor, no_grad

# the toy model builds in well under a second
toy = build("toy", num_classes=2, seed=0)
info = summarize(toy)
print(f"toy: {info['params']['total']:,} parameters, strides {info['strides']}")

# a forward pass returns one raw prediction tensor per pyramid level
x = Tensor(np.zeros((1, 3, 128, 128), dtype=np.float32))
with no_grad():
    outs = toy(x)
for o, s in zip(outs, toy.strides):
    b, na, h, w, no = o.shape
    print(f"  stride {s:>2}: grid {h}x{w}, {na} anchors, {no} channels each")

# full-size variants: TP4/TP5 on the small backbone, BP4/BB4 on the big one.
# TP5 keeps the original convolutional deep stage for its coarsest level;
# BB4 drops the adapter projections and feeds raw token widths to the neck.
print()
for name in ("TP4", "TP5", "BP4", "BB4"):
    model = build(name, num_classes=80, seed=0)
    p = summarize(model)["params"]
    print(f"{name}: total {p['total']:>12,}  backbone {p['backbone']:>12,}  "
          f"neck {p['neck']:>11,}  head {p['head']:>10,}")

# configs serialize to YAML and back; the packaged files under
# yotor/configs/ were produced exactly this way
print()
print(ModelConfig.toy().to_yaml().splitlines()[0], "... (see yotor/configs/)")

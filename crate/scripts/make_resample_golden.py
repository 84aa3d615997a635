"""Freeze PIL bicubic resize outputs on float rasters for the resampler tests."""
import json
import numpy as np
from PIL import Image

rng = np.random.default_rng(7)
cases = []
for (w, h, ow, oh) in [(13, 11, 5, 7), (4, 6, 9, 10), (64, 48, 32, 32), (9, 9, 9, 4), (50, 37, 28, 28), (20, 20, 28, 28)]:
    src = rng.random((h, w), dtype=np.float32)
    out = np.asarray(Image.fromarray(src, mode="F").resize((ow, oh), Image.BICUBIC), dtype=np.float32)
    cases.append({
        "width": w, "height": h, "out_width": ow, "out_height": oh,
        "input": src.ravel().tolist(), "output": out.ravel().tolist(),
    })
json.dump({"cases": cases}, open("crates/core/tests/data/resample_golden.json", "w"))
print("ok", [c["output"][:3] for c in cases[:2]])

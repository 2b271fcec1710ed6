# Compression artifacts on a synthetic frame.
#
# The block-DCT simulator stands in for a real HEVC encoder: 8x8 blocks,
# orthonormal DCT, uniform quantization with the HEVC step size.
# Run: python3 demos/01_degradation.py [out_dir]

import sys
from pathlib import Path

import numpy as np

from dcngan import degrade, psnr, qstep
from dcngan.frames import LumaFrame, to_uint8
from dcngan.synthetic import texture

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/degradation")
out.mkdir(parents=True, exist_ok=True)

frame = LumaFrame(texture(96, 96, seed=7))
frame.shape, frame.pixels.dtype  # (96, 96) float32 in [0, 1]

# step size doubles every 6 QP
for qp in (22, 27, 32, 37):
    print(f"QP {qp}: Qstep {qstep(qp):6.2f}")

# quality drops as QP grows; MAE rises
rows = []
for qp in (22, 27, 32, 37):
    d = degrade(frame, qp)
    mae = np.abs(d.pixels - frame.pixels).mean()
    rows.append((qp, psnr(d, frame), mae))
    print(f"QP {qp}: PSNR {rows[-1][1]:5.2f} dB   MAE {mae:.4f}")

# a second pass changes nothing on block-aligned frames
once = degrade(frame, 37)
twice = degrade(once, 37)
print("re-degrade max change:", np.abs(once.pixels - twice.pixels).max())

# ragged edges are a different story: the zero-padded edge block is
# requantized from a different input, so small changes survive
ragged = LumaFrame(texture(90, 90, seed=7))
r1 = degrade(ragged, 37)
print("ragged 90x90 re-degrade max change:", np.abs(r1.pixels - degrade(r1, 37).pixels).max())

from PIL import Image

strip = np.concatenate([to_uint8(frame)] + [to_uint8(degrade(frame, q)) for q in (22, 37)], axis=1)
Image.fromarray(strip, mode="L").save(out / "raw_qp22_qp37.png")
print("wrote", out / "raw_qp22_qp37.png")

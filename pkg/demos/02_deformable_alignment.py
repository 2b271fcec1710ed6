# What the deformable alignment stage does, tap by tap.
#
# One offset pair per frame, kernel tap and pixel: 3 frames x 9 taps x 2.
# Run: python3 demos/02_deformable_alignment.py

import numpy as np
import torch
import torch.nn.functional as F

from dcngan import deformable_conv, offset_channels
from dcngan.deform import DeformableAlign, predict_offsets
from dcngan.frames import FrameTriplet
from dcngan.synthetic import synthetic_sequence

torch.manual_seed(0)
print("offset channels for a triplet:", offset_channels())  # 54

frames = synthetic_sequence(3, 32, 32, seed=4)
planes = torch.as_tensor(np.stack([f.pixels for f in frames]), dtype=torch.float64)
weight = torch.randn(8, 3, 3, 3, dtype=torch.float64)

# zero offsets: exactly an ordinary 3x3 convolution with zero padding
zero = torch.zeros(54, 32, 32, dtype=torch.float64)
plain = F.conv2d(planes[None], weight, padding=1)[0]
print("zero offsets vs conv2d:", (deformable_conv(planes, zero, weight) - plain).abs().max().item())

# a constant vertical offset of +1 on every tap reads one row further down
down = zero.clone()
down[0::2] = 1.0
shifted = deformable_conv(planes, down, weight)
ref = F.conv2d(F.pad(planes[None, :, 1:], (0, 0, 0, 1)), weight, padding=1)[0]
# row 0 differs: its upper taps now land on real pixels instead of padding
print("unit vertical offset vs shifted conv:", (shifted - ref)[:, 1:].abs().max().item())

# the learned part: an offset U-Net looks at the whole triplet at once
module = DeformableAlign(channels=16, unet_base=8, unet_levels=2)
offsets = predict_offsets(FrameTriplet(*frames), module)
tuple(offsets.shape)  # (54, 32, 32)
print("a fresh offset head predicts zeros:", float(offsets.abs().max()))

# and the fused features come out in one pass
feats = module(planes[None].float())
print("aligned feature map:", tuple(feats.shape))

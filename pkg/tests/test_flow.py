import numpy as np
import pytest
import torch

from dcngan.deform import DeformableAlign, align
from dcngan.errors import ShapeError
from dcngan.flow import FlowAlign, FlowField, estimate_flow, flow_align, warp, warp_tensor
from dcngan.frames import FrameTriplet, LumaFrame
from dcngan.synthetic import pan_sequence, texture


def shifted_pair(dx=2.0, dy=0.0, size=64, seed=1):
    canvas = texture(size + 16, size + 16, seed=seed)
    a, b = pan_sequence(canvas, 2, size, size, velocity=(dy, dx), origin=(8, 8))
    return a, b


def test_zero_flow_for_identical_frames(natural_frame):
    fl = estimate_flow(natural_frame, natural_frame)
    assert np.abs(fl.u).max() < 1e-9 and np.abs(fl.v).max() < 1e-9


def test_zero_flow_warp_is_identity(natural_frame):
    out = warp(natural_frame, FlowField.zeros(natural_frame.shape))
    assert np.array_equal(out.pixels, natural_frame)


def test_unit_flow_shifts_left():
    f = LumaFrame(np.random.default_rng(0).random((8, 8)))
    out = warp(f, FlowField(np.ones((8, 8)), np.zeros((8, 8)))).pixels
    np.testing.assert_allclose(out[:, :-1], f.pixels[:, 1:], atol=1e-6)
    assert np.all(out[:, -1] == 0)


@pytest.mark.parametrize("dx,dy", [(2.0, 0.0), (0.0, -1.5), (1.0, 1.0)])
def test_recovers_global_shift(dx, dy):
    a, b = shifted_pair(dx, dy)
    fl = estimate_flow(a, b)
    inner = (slice(12, -12), slice(12, -12))
    assert np.median(fl.u[inner]) == pytest.approx(dx, abs=0.1)
    assert np.median(fl.v[inner]) == pytest.approx(dy, abs=0.1)


def test_warp_round_trip():
    a, b = shifted_pair(1.5, 0.5)
    fl = estimate_flow(a, b)
    back = warp(a, fl).pixels
    inner = (slice(8, -8), slice(8, -8))
    assert np.abs(back[inner] - b.pixels[inner]).mean() < 0.02


def test_shape_errors(natural_frame):
    with pytest.raises(ShapeError):
        estimate_flow(natural_frame, np.zeros((32, 32), np.float32))
    with pytest.raises(ShapeError):
        warp(natural_frame, FlowField.zeros((8, 8)))
    with pytest.raises(ShapeError):
        FlowField(np.zeros((2, 2)), np.zeros((3, 3)))


def test_warp_tensor_matches_numpy(natural_frame):
    rng = np.random.default_rng(2)
    u, v = rng.normal(0, 2, (2,) + natural_frame.shape)
    ref = warp(natural_frame, FlowField(u, v)).pixels
    out = warp_tensor(torch.from_numpy(natural_frame.astype(np.float64))[None],
                      torch.from_numpy(u)[None], torch.from_numpy(v)[None])[0].numpy()
    np.testing.assert_allclose(np.clip(out, 0, 1), ref, atol=1e-6)


def test_flow_align_is_drop_in(short_sequence):
    t = FrameTriplet(*short_sequence[:3])
    torch.manual_seed(0)
    a = align(t, DeformableAlign(channels=8, unet_base=4, unet_levels=2))
    f = flow_align(t, FlowAlign(channels=8))
    assert a.shape == f.shape == (8, 64, 64)


def test_flow_align_static_scene(natural_frame):
    frames = torch.from_numpy(np.stack([natural_frame] * 3))[None]
    stack = FlowAlign(channels=4).warped_stack(frames)
    assert torch.allclose(stack, frames, atol=1e-6)

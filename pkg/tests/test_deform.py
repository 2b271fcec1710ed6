import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from dcngan.deform import (OFFSET_CHANNELS, DeformableAlign, OffsetUNet, align, bilinear_sample,
                           deformable_conv, gather_bilinear, offset_channels, predict_offsets)
from dcngan.errors import ShapeError
from dcngan.frames import FrameTriplet, LumaFrame

from fd import numeric_grad, rel_error


class TestBilinearSample:
    plane = np.array([[0.0, 1.0], [2.0, 3.0]])

    def test_knots(self):
        rng = np.random.default_rng(0)
        p = rng.random((5, 6))
        for y in range(5):
            for x in range(6):
                assert bilinear_sample(p, y, x) == p[y, x]

    def test_far_outside_is_zero(self):
        assert bilinear_sample(self.plane, -5.0, -5.0) == 0.0

    def test_centre_of_cell(self):
        assert bilinear_sample(self.plane, 0.5, 0.5) == pytest.approx(1.5)

    def test_half_outside_blends_with_zero(self):
        assert bilinear_sample(self.plane, -0.5, 0.0) == pytest.approx(0.0 * 0.5 + 0.5 * 0.0)
        assert bilinear_sample(self.plane, 1.5, 1.0) == pytest.approx(1.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 8), st.floats(-3, 9))
    def test_torch_sampler_matches_numpy(self, y, x):
        p = np.random.default_rng(1).random((6, 7))
        t = gather_bilinear(torch.as_tensor(p)[None], torch.tensor([[y]], dtype=torch.float64),
                            torch.tensor([[x]], dtype=torch.float64))
        assert float(t) == pytest.approx(bilinear_sample(p, y, x), abs=1e-12)

    def test_integer_coordinate_gradient_uses_next_cell(self):
        p = torch.tensor([[[0.0, 1.0, 5.0]]], dtype=torch.float64)
        x = torch.tensor([[1.0]], dtype=torch.float64, requires_grad=True)
        gather_bilinear(p, torch.zeros(1, 1, dtype=torch.float64), x).sum().backward()
        assert float(x.grad) == pytest.approx(4.0)


def random_instance(seed, b=1, t=3, h=5, w=5, c=4, dtype=torch.float64, scale=1.5):
    g = torch.Generator().manual_seed(seed)
    planes = torch.rand(b, t, h, w, generator=g, dtype=dtype)
    offsets = torch.randn(b, t * 18, h, w, generator=g, dtype=dtype) * scale
    weight = torch.randn(c, t, 3, 3, generator=g, dtype=dtype)
    bias = torch.randn(c, generator=g, dtype=dtype)
    return planes, offsets, weight, bias


class TestDeformableConv:
    def test_offset_channel_count(self):
        assert OFFSET_CHANNELS == offset_channels(3, 3) == 54

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_offsets_is_plain_conv(self, seed):
        planes, offsets, weight, bias = random_instance(seed, b=2, h=9, w=7, dtype=torch.float32)
        out = deformable_conv(planes, torch.zeros_like(offsets), weight, bias)
        ref = F.conv2d(planes, weight, bias, padding=1)
        assert (out - ref).abs().max() < 1e-5

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_torchvision(self, seed):
        tv = pytest.importorskip("torchvision")
        planes, offsets, weight, bias = random_instance(seed, b=2, h=8, w=11, scale=3.0)
        ref = tv.ops.deform_conv2d(planes, offsets, weight, bias, padding=1)
        assert (deformable_conv(planes, offsets, weight, bias) - ref).abs().max() < 1e-12

    @pytest.mark.parametrize("sampler,tol", [("gather", 0.0), ("grid", 1e-12)])
    def test_unit_vertical_offset_shifts_plane(self, sampler, tol):
        plane = torch.rand(1, 1, 6, 5, dtype=torch.float64)
        weight = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
        weight[0, 0, 1, 1] = 1.0
        offsets = torch.zeros(1, 18, 6, 5, dtype=torch.float64)
        offsets[:, 0::2] = 1.0
        out = deformable_conv(plane, offsets, weight, sampler=sampler)[0, 0]
        expected = torch.zeros(6, 5, dtype=torch.float64)
        expected[:-1] = plane[0, 0, 1:]
        assert (out - expected).abs().max() <= tol

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_samplers_agree(self, seed):
        planes, offsets, weight, bias = random_instance(seed, h=7, w=9, scale=3.0)
        offsets.requires_grad_()
        probe = torch.randn(1, 4, 7, 9, dtype=torch.float64)
        grads = []
        outs = []
        for sampler in ("grid", "gather"):
            out = deformable_conv(planes, offsets, weight, bias, sampler=sampler)
            (out * probe).sum().backward()
            outs.append(out.detach())
            grads.append(offsets.grad.clone())
            offsets.grad = None
        assert (outs[0] - outs[1]).abs().max() < 1e-12
        assert (grads[0] - grads[1]).abs().max() < 1e-9

    def test_unknown_sampler(self):
        planes, offsets, weight, _ = random_instance(0)
        with pytest.raises(ValueError):
            deformable_conv(planes, offsets, weight, sampler="nearest")

    def test_offset_layout_per_frame(self):
        # displacing only frame 2 leaves the contributions of frames 0 and 1 untouched
        planes, offsets, weight, _ = random_instance(3)
        w2 = weight.clone()
        w2[:, 2] = 0
        moved = torch.zeros_like(offsets)
        moved[:, 2 * 18:] = 0.7
        assert torch.allclose(deformable_conv(planes, moved, w2), deformable_conv(planes, torch.zeros_like(offsets), w2))

    def test_unbatched(self):
        planes, offsets, weight, bias = random_instance(0)
        assert torch.equal(deformable_conv(planes[0], offsets[0], weight, bias),
                           deformable_conv(planes, offsets, weight, bias)[0])

    @pytest.mark.parametrize("bad", ["offsets", "weight"])
    def test_shape_errors(self, bad):
        planes, offsets, weight, bias = random_instance(0)
        if bad == "offsets":
            offsets = offsets[:, :50]
        else:
            weight = weight[:, :2]
        with pytest.raises(ShapeError):
            deformable_conv(planes, offsets, weight, bias)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_input(self, seed, a, b):
        f, offsets, weight, _ = random_instance(seed, dtype=torch.float32)
        g = torch.rand_like(f)
        lhs = deformable_conv(a * f + b * g, offsets, weight)
        rhs = a * deformable_conv(f, offsets, weight) + b * deformable_conv(g, offsets, weight)
        assert (lhs - rhs).abs().max() < 1e-5 * max(1.0, abs(a) + abs(b))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients_match_finite_differences(self, seed):
        planes, offsets, weight, bias = random_instance(seed, t=1, h=5, w=5, c=2)
        offsets = offsets[:, :18].contiguous()
        probe = torch.randn(1, 2, 5, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(99))
        tensors = [planes, offsets, weight]
        for t in tensors:
            t.requires_grad_(True)
        loss = lambda: (deformable_conv(planes, offsets, weight, bias) * probe).sum()  # noqa: E731
        loss().backward()
        for t in tensors:
            with torch.no_grad():
                num = numeric_grad(loss, t)
            assert rel_error(t.grad, num) < 1e-3


class TestOffsetNetwork:
    def triplet(self, h=16, w=16, same=False, seed=0):
        rng = np.random.default_rng(seed)
        f = [LumaFrame(rng.random((h, w))) for _ in range(3)]
        return FrameTriplet(f[0], f[0], f[0]) if same else FrameTriplet(*f)

    def test_fresh_head_predicts_zero(self):
        torch.manual_seed(0)
        m = DeformableAlign(8, 8)
        off = predict_offsets(self.triplet(same=True), m)
        assert off.shape == (54, 16, 16)
        assert torch.all(off == 0)

    @pytest.mark.parametrize("size", [(16, 16), (13, 21), (8, 40)])
    def test_channel_count_and_resolution(self, size):
        torch.manual_seed(0)
        m = DeformableAlign(8, 8)
        torch.nn.init.normal_(m.offset_net.head.weight, std=0.01)
        off = predict_offsets(self.triplet(*size), m)
        assert off.shape == (54, *size)
        assert torch.isfinite(off).all()

    def test_deterministic(self):
        torch.manual_seed(1)
        m = DeformableAlign(8, 8)
        torch.nn.init.normal_(m.offset_net.head.weight, std=0.01)
        t = self.triplet(seed=4)
        assert torch.equal(predict_offsets(t, m), predict_offsets(t, m))

    def test_unet_output_layout(self):
        net = OffsetUNet(base=4, levels=2)
        assert net(torch.rand(2, 3, 12, 12)).shape == (2, 54, 12, 12)


class TestAlign:
    def test_fresh_align_is_plain_conv(self):
        torch.manual_seed(0)
        m = DeformableAlign(8, 8)
        t = TestOffsetNetwork().triplet(seed=2)
        z = align(t, m)
        ref = m.fuse(torch.as_tensor(t.stack())[None])[0]
        assert z.shape == (8, 16, 16)
        assert (z - ref).abs().max() < 1e-5

    def test_default_channels(self):
        m = DeformableAlign()
        assert align(TestOffsetNetwork().triplet(), m).shape == (64, 16, 16)

    def test_constant_triplet_constant_interior(self):
        torch.manual_seed(3)
        m = DeformableAlign(6, 8)
        torch.nn.init.normal_(m.offset_net.head.weight, std=1e-3)
        const = LumaFrame(np.full((16, 16), 0.4))
        z = align(FrameTriplet(const, const, const), m)
        # offsets of a constant input are spatially constant away from the U-Net's padded border;
        # sampled values stay constant wherever the kernel footprint stays inside the frame
        interior = z[:, 4:-4, 4:-4]
        assert (interior - interior[:, :1, :1]).abs().max() < 1e-5

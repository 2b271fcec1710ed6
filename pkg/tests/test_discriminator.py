import pytest
import torch

from dcngan.discriminator import PatchDiscriminator, discriminate, extract_features
from dcngan.errors import InputTooSmallError

from fd import numeric_grad, rel_error


@pytest.fixture
def disc():
    torch.manual_seed(0)
    return PatchDiscriminator(ndf=8)


def test_default_widths():
    d = PatchDiscriminator()
    assert [l[0].out_channels for l in d.layers] == [64, 128, 256, 512]
    assert [l[0].stride[0] for l in d.layers] == [2, 2, 2, 1]
    assert d.head.out_channels == 1


def test_128_gives_grid_of_patches(disc):
    s = discriminate(torch.rand(1, 1, 128, 128), disc)
    # 128 -> 64 -> 32 -> 16 -> 15 -> 14 with kernel 4, padding 1
    assert s.scores.shape == (1, 1, 14, 14)
    assert disc.score_size(128) == 14


def test_fully_convolutional(disc):
    small = discriminate(torch.rand(1, 1, 64, 64), disc).scores
    big = discriminate(torch.rand(1, 1, 128, 128), disc).scores
    assert big.shape[-1] > small.shape[-1] > 1


def test_mean_is_average_of_scores(disc):
    s = discriminate(torch.rand(2, 1, 64, 80), disc)
    assert abs(float(s.mean.detach()) - float(s.scores.detach().mean())) < 1e-6


def test_zero_head(disc):
    torch.nn.init.zeros_(disc.head.weight)
    torch.nn.init.zeros_(disc.head.bias)
    s = discriminate(torch.rand(1, 1, 64, 64), disc)
    assert torch.all(s.scores == 0) and float(s.mean.detach()) == 0


def test_features(disc):
    x = torch.rand(1, 1, 128, 128)
    feats = extract_features(x, disc)
    assert len(feats) == disc.n_features == 4
    sizes = [f.shape[-1] for f in feats]
    assert sizes == sorted(sizes, reverse=True) and len(set(sizes)) == 4
    again = extract_features(x, disc)
    assert all(torch.equal(a, b) for a, b in zip(feats, again))
    scores, shared = disc(x, return_features=True)
    assert all(torch.equal(a, b) for a, b in zip(feats, shared))
    assert torch.equal(scores, discriminate(x, disc).scores)


def test_too_small(disc):
    n = disc.min_input_size()
    assert disc.score_size(n) >= 1 and disc.score_size(n - 1) < 1
    with pytest.raises(InputTooSmallError):
        discriminate(torch.rand(1, 1, n - 1, 64), disc)


def test_accepts_numpy_frames(disc):
    import numpy as np
    s = discriminate(np.random.default_rng(0).random((64, 64)), disc)
    assert s.scores.shape == (1, 1, 6, 6)


def test_mean_score_gradient(disc):
    d = disc.double()
    n = d.min_input_size()
    x = torch.rand(1, 1, n, n, dtype=torch.float64, requires_grad=True)
    discriminate(x, d).mean.backward()
    with torch.no_grad():
        num = numeric_grad(lambda: discriminate(x, d).mean, x)
    assert rel_error(x.grad, num) < 1e-3

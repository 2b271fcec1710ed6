import csv
import filecmp

import numpy as np
import pytest
import torch

from dcngan.cache import build_samples, write_cache
from dcngan.errors import CheckpointError, ConfigurationError, TrainingDivergenceError
from dcngan.generator import Generator, GeneratorConfig
from dcngan.synthetic import synthetic_sequence
from dcngan.training import (Batch, Trainer, TrainingConfig, load_generator, read_checkpoint, train)

TINY_G = dict(align_channels=4, base_channels=4, unet_base=4, unet_levels=2)


def tiny(**kw):
    base = dict(batch_size=2, patch=32, steps=3, ndf=4, log_every=0,
                generator=GeneratorConfig(**TINY_G), vgg=dict(width=0.0625, layer_ids=(3, 8)))
    base.update(kw)
    return TrainingConfig(**base)


@pytest.fixture(scope="module")
def data():
    seqs = [synthetic_sequence(3, 40, 40, seed=s) for s in range(2)]
    return build_samples(seqs, [22, 37], 32, 2, seed=0)


def params(module):
    return [p.detach().clone() for p in module.parameters()]


def same(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


def read_log(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_desk(self):
        cfg = TrainingConfig.desk()
        assert (cfg.batch_size, cfg.patch, cfg.steps) == (8, 64, 2000)
        assert cfg.lr == 1e-4 and cfg.betas == (0.9, 0.999) and cfg.eps == 1e-8

    def test_defaults_match_full_scale(self):
        cfg = TrainingConfig()
        assert (cfg.batch_size, cfg.patch, cfg.qp_set) == (32, 128, (22, 27, 32, 37))

    def test_yaml_round_trip(self, tmp_path):
        import yaml
        cfg = tiny(seed=4)
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        assert TrainingConfig.from_file(path).to_dict() == cfg.to_dict()

    def test_yaml_preset(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("preset: desk\nsteps: 5\ngenerator:\n  align_backend: flow\n")
        cfg = TrainingConfig.from_file(path)
        assert cfg.steps == 5 and cfg.batch_size == 8
        assert cfg.generator.align_backend == "flow" and cfg.generator.base_channels == 16

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("stepz: 5\n")
        with pytest.raises(ConfigurationError, match="stepz"):
            TrainingConfig.from_file(path)

    @pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(batch_size=0), dict(qp_set=(30,)), dict(qp_set=())])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            tiny(**kw)


class TestSchedule:
    def test_batches_cover_each_epoch(self, data):
        tr = Trainer(tiny(batch_size=3), data)
        n = len(data)
        idx = np.concatenate([tr.batch_indices(s) for s in range(n)])
        for e in range(3):
            assert sorted(idx[e * n:(e + 1) * n]) == list(range(n))

    def test_seeded(self, data):
        a = [Trainer(tiny(seed=1), data).batch_indices(s) for s in range(4)]
        b = [Trainer(tiny(seed=1), data).batch_indices(s) for s in range(4)]
        c = [Trainer(tiny(seed=2), data).batch_indices(s) for s in range(4)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))


class TestStep:
    def test_zero_lr_leaves_params(self, data):
        tr = Trainer(tiny(lr=0.0), data)
        g, d = params(tr.generator), params(tr.discriminator)
        tr.train_step(tr.batch(0))
        assert same(g, params(tr.generator)) and same(d, params(tr.discriminator))

    def test_both_networks_move(self, data):
        tr = Trainer(tiny(), data)
        g, d = params(tr.generator), params(tr.discriminator)
        tr.train_step(tr.batch(0))
        assert not same(g, params(tr.generator)) and not same(d, params(tr.discriminator))

    def test_d_update_does_not_touch_g(self, data):
        tr = Trainer(tiny(), data)
        g = params(tr.generator)
        tr.opt_g.step = lambda *a, **k: None
        tr.train_step(tr.batch(0))
        assert same(g, params(tr.generator))

    def test_g_update_does_not_touch_d(self, data):
        tr = Trainer(tiny(), data)
        d = params(tr.discriminator)
        tr.opt_d.step = lambda *a, **k: None
        tr.train_step(tr.batch(0))
        assert same(d, params(tr.discriminator))
        assert all(p.requires_grad for p in tr.discriminator.parameters())

    def test_report_is_consistent(self, data):
        r = Trainer(tiny(), data).train_step(Batch.from_samples(data.subset(np.arange(2))))
        assert r.total_g == pytest.approx(r.l_gan_g + r.l_vgg + r.l_fm, rel=1e-5)
        assert all(np.isfinite(r.as_row()))

    def test_divergence_raises(self, data):
        tr = Trainer(tiny(), data)
        with torch.no_grad():
            tr.generator.head.bias.fill_(float("nan"))
        with pytest.raises(TrainingDivergenceError):
            tr.train_step(tr.batch(0))

    def test_single_qp_uses_full_code(self, data):
        cfg = tiny(qp_set=(37,))
        tr = Trainer(cfg, data.subset(data.qp == 37))
        assert tr.generator.code_tensor([37]).tolist() == [[0.0, 0.0, 0.0, 1.0]]
        tr.train_step(tr.batch(0))


class TestTrainRun:
    def test_outputs(self, data, tmp_path):
        path = train(tiny(out_dir=str(tmp_path), checkpoint_every=2), data)
        assert path == tmp_path / "final.pt"
        assert (tmp_path / "ckpt_0000002.pt").exists()
        rows = read_log(tmp_path / "loss_log.csv")
        assert rows[0] == ["step", "l_gan_g", "l_gan_d", "l_vgg", "l_fm", "total_g"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]

    def test_zero_steps(self, data, tmp_path):
        path = train(tiny(steps=0, out_dir=str(tmp_path)), data)
        assert len(read_log(tmp_path / "loss_log.csv")) == 1
        assert read_checkpoint(path)["step"] == 0

    def test_bit_identical_logs(self, data, tmp_path):
        train(tiny(out_dir=str(tmp_path / "a")), data)
        train(tiny(out_dir=str(tmp_path / "b")), data)
        assert filecmp.cmp(tmp_path / "a" / "loss_log.csv", tmp_path / "b" / "loss_log.csv", shallow=False)

    def test_resume_matches_uninterrupted(self, data, tmp_path):
        train(tiny(steps=4, out_dir=str(tmp_path / "full")), data)
        train(tiny(steps=4, checkpoint_every=2, out_dir=str(tmp_path / "cut")), data)
        ckpt = tmp_path / "cut" / "ckpt_0000002.pt"
        train(tiny(steps=4, out_dir=str(tmp_path / "cut"), resume=str(ckpt)), data)
        assert read_log(tmp_path / "full" / "loss_log.csv") == read_log(tmp_path / "cut" / "loss_log.csv")
        a = read_checkpoint(tmp_path / "full" / "final.pt")["generator"]
        b = read_checkpoint(tmp_path / "cut" / "final.pt")["generator"]
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_checkpoint_round_trip(self, data, tmp_path):
        tr = Trainer(tiny(), data)
        tr.train_step(tr.batch(0))
        tr.save(tmp_path / "a.pt")
        again = Trainer.from_checkpoint(tmp_path / "a.pt", data)
        again.save(tmp_path / "b.pt")
        sa, sb = read_checkpoint(tmp_path / "a.pt"), read_checkpoint(tmp_path / "b.pt")
        assert sa["step"] == sb["step"] == 1 and sa["config"] == sb["config"]
        for key in ("generator", "discriminator"):
            assert all(torch.equal(sa[key][k], sb[key][k]) for k in sa[key])

    def test_load_generator(self, data, tmp_path):
        path = train(tiny(out_dir=str(tmp_path)), data)
        g = load_generator(path)
        assert isinstance(g, Generator) and not g.training
        assert g.config.base_channels == 4

    def test_missing_data(self, tmp_path):
        with pytest.raises(ConfigurationError):
            train(tiny(out_dir=str(tmp_path), train_data=str(tmp_path / "nope.bin")))

    def test_data_from_cache(self, data, tmp_path):
        path = write_cache(data, tmp_path / "train.bin")
        train(tiny(qp_set=(22, 37), out_dir=str(tmp_path / "o"), train_data=str(path)))
        assert (tmp_path / "o" / "final.pt").exists()

    def test_cache_missing_qp(self, data, tmp_path):
        path = write_cache(data.subset(data.qp == 22), tmp_path / "train.bin")
        with pytest.raises(ConfigurationError, match="37"):
            train(tiny(qp_set=(22, 37), out_dir=str(tmp_path / "o"), train_data=str(path)))

    def test_cache_wrong_patch(self, data, tmp_path):
        path = write_cache(data, tmp_path / "train.bin")
        with pytest.raises(ConfigurationError, match="patch"):
            train(tiny(patch=48, qp_set=(22, 37), out_dir=str(tmp_path / "o"), train_data=str(path)))


class TestCheckpointErrors:
    def test_shape_mismatch(self, data, tmp_path):
        path = Trainer(tiny(), data).save(tmp_path / "a.pt")
        state = read_checkpoint(path)
        state["config"]["generator"]["base_channels"] = 8
        torch.save(state, tmp_path / "b.pt")
        with pytest.raises(CheckpointError):
            load_generator(tmp_path / "b.pt")

    def test_not_a_checkpoint(self, tmp_path):
        torch.save({"hello": 1}, tmp_path / "x.pt")
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / "x.pt")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / "none.pt")

import numpy as np
import pytest
import torch

from uqgan.errors import InvalidArgumentError, UnsupportedModelError
from uqgan.models import (
    ArchitectureSpec,
    build_cae,
    build_classifier,
    build_gan,
    load_checkpoint,
    mc_dropout_wrap,
    models_from_checkpoint,
    save_checkpoint,
)
from uqgan.trainer import TrainingConfig

TOY = ArchitectureSpec(kind="mlp_toy", input_shape=(2,), n_classes=2)
MNIST = ArchitectureSpec(kind="lenet5", input_shape=(1, 28, 28), n_classes=5, latent_dim=32)


class TestClassifier:
    def test_toy_shape_and_range(self):
        out = build_classifier(TOY)(torch.randn(16, 2))
        assert out.shape == (16, 2)
        assert torch.all((out > 0) & (out < 1))

    def test_lenet(self):
        out = build_classifier(MNIST)(torch.rand(3, 1, 28, 28))
        assert out.shape == (3, 5)

    def test_small_resnet(self):
        spec = ArchitectureSpec(kind="small_resnet", input_shape=(3, 32, 32), n_classes=5, latent_dim=128)
        assert build_classifier(spec)(torch.rand(2, 3, 32, 32)).shape == (2, 5)

    def test_needs_two_classes(self):
        with pytest.raises(InvalidArgumentError):
            build_classifier(ArchitectureSpec(n_classes=1))

    def test_rows_not_normalised(self):
        # the one-vs-all head is elementwise: rows need not sum to one
        out = build_classifier(TOY, seed=0)(torch.randn(64, 2) * 5)
        assert not torch.allclose(out.sum(dim=1), torch.ones(64), atol=1e-3)

    def test_seeded_build(self):
        a = build_classifier(TOY, seed=3).state_dict()
        b = build_classifier(TOY, seed=3).state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_no_normalisation_layers(self):
        clf = build_classifier(MNIST)
        assert not any(isinstance(m, (torch.nn.BatchNorm1d, torch.nn.BatchNorm2d)) for m in clf.modules())


class TestCae:
    def test_roundtrip_shape_and_range(self):
        enc, dec = build_cae(MNIST)
        x = torch.rand(4, 1, 28, 28)
        y = torch.tensor([0, 1, 2, 4])
        z = enc(x, y)
        assert z.shape == (4, 32)
        xr = dec(z, y)
        assert xr.shape == x.shape
        assert torch.all((xr >= 0) & (xr <= 1))

    def test_cifar_latent(self):
        spec = ArchitectureSpec(kind="small_resnet", input_shape=(3, 32, 32), n_classes=5, latent_dim=128)
        enc, dec = build_cae(spec)
        assert enc(torch.rand(2, 3, 32, 32), torch.tensor([0, 1])).shape == (2, 128)

    def test_toy_identity(self):
        enc, dec = build_cae(TOY)
        x = torch.randn(5, 2)
        assert torch.equal(dec(enc(x, None), None), x)

    def test_label_conditioning_changes_code(self):
        enc, _ = build_cae(MNIST, seed=0)
        x = torch.rand(1, 1, 28, 28)
        assert not torch.allclose(enc(x, torch.tensor([0])), enc(x, torch.tensor([3])))


class TestGan:
    def test_shapes(self):
        g, d = build_gan(MNIST)
        e = torch.rand(8, MNIST.noise_dim)
        y = torch.randint(0, 5, (8,))
        z = g(e, y)
        assert z.shape == (8, 32)
        assert d(z, y).shape == (8,)

    def test_widths(self):
        g, d = build_gan(MNIST)
        g_lin = [m.out_features for m in g.modules() if isinstance(m, torch.nn.Linear)]
        d_lin = [m.out_features for m in d.modules() if isinstance(m, torch.nn.Linear)]
        assert g_lin == [1024, 512, 256, 32]
        assert d_lin == [512, 512, 512, 1]

    def test_batchnorm_only_in_generator(self):
        g, d = build_gan(MNIST)
        assert any(isinstance(m, torch.nn.BatchNorm1d) for m in g.modules())
        assert not any(isinstance(m, (torch.nn.BatchNorm1d, torch.nn.LayerNorm)) for m in d.modules())
        assert not any(isinstance(m, torch.nn.Sigmoid) for m in d.modules())

    def test_noise_dim_defaults_to_latent(self):
        assert MNIST.noise_dim == 32
        assert TOY.noise_dim == TOY.latent_dim == 2

    def test_generator_deterministic(self):
        g, _ = build_gan(MNIST, seed=0)
        g.eval()
        e = torch.rand(4, 32)
        y = torch.tensor([0, 1, 2, 3])
        assert torch.equal(g(e, y), g(e, y))

    def test_critic_unbounded(self):
        _, d = build_gan(TOY, seed=0)
        out = d(torch.randn(256, 2) * 1e3, torch.zeros(256, dtype=torch.long))
        assert out.abs().max() > 1.0


class TestMcDropout:
    def test_zero_rate_is_deterministic(self):
        clf = build_classifier(TOY, seed=0)
        x = torch.randn(10, 2)
        mean, std = mc_dropout_wrap(clf, passes=1, rate=0.0)(x)
        clf.eval()
        assert torch.equal(mean, clf(x))
        assert torch.all(std == 0)

    def test_stochastic_with_rate(self):
        spec = ArchitectureSpec(kind="mlp_toy", input_shape=(2,), n_classes=2, dropout_rate=0.5)
        mean, std = mc_dropout_wrap(build_classifier(spec, seed=0), passes=20, rate=0.5)(torch.randn(10, 2))
        assert torch.all(std > 0)
        assert mean.shape == (10, 2)

    def test_validation(self):
        clf = build_classifier(TOY)
        with pytest.raises(InvalidArgumentError):
            mc_dropout_wrap(clf, passes=0)
        with pytest.raises(InvalidArgumentError):
            mc_dropout_wrap(clf, passes=5, rate=1.0)
        with pytest.raises(UnsupportedModelError):
            mc_dropout_wrap(torch.nn.Linear(2, 2), passes=5, rate=0.5)

    def test_defaults(self):
        w = mc_dropout_wrap(build_classifier(TOY))
        assert (w.passes, w.rate) == (50, 0.5)


def test_checkpoint_roundtrip(tmp_path):
    clf = build_classifier(MNIST, seed=1)
    g, d = build_gan(MNIST, seed=2)
    enc, dec = build_cae(MNIST, seed=3)
    mods = {"classifier": clf, "generator": g, "critic": d, "encoder": enc, "decoder": dec}
    save_checkpoint(tmp_path / "a.pt", mods, MNIST, TrainingConfig(seed=7), seed=7)
    ckpt = load_checkpoint(tmp_path / "a.pt")
    assert ckpt["seed"] == 7 and ckpt["config"]["seed"] == 7
    spec, loaded = models_from_checkpoint(ckpt)
    assert spec == MNIST
    for name, m in mods.items():
        a, b = m.state_dict(), loaded[name].state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)
    # bytes are reproducible for identical content
    save_checkpoint(tmp_path / "b.pt", mods, MNIST, TrainingConfig(seed=7), seed=7)
    assert (tmp_path / "a.pt").read_bytes() == (tmp_path / "b.pt").read_bytes()

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmjnd import autodiff as ad
from hmjnd.autodiff import ContractError, Tensor
from hmjnd.model import ModelConfig
from hmjnd.params import ParamStore
from hmjnd.synth import synth_dataset
from hmjnd.train import (TrainConfig, adam_step, loss_overall, loss_terms, lr_at, patch_origins,
                         patch_partition, train)

TOY = ModelConfig(channels=4, window=4, heads=2, blocks=1, se_reduction=2)


def tensors(rng, c=4, h=4, w=4):
    return (Tensor(rng.standard_normal((1, c, h, w)), requires_grad=True),
            Tensor(rng.standard_normal((1, c, h, w))),
            Tensor(rng.random((1, 3, h, w)), requires_grad=True),
            rng.random((1, 3, h, w)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5), st.floats(0.01, 5), st.integers(0, 1000))
def test_loss_is_nonnegative_and_linear_in_weights(lf, lp, seed):
    f_r, f_pr, i_rr, gt = tensors(np.random.default_rng(seed))
    loss = lambda a, b: loss_overall(f_r, f_pr, i_rr, gt, TrainConfig(lambda_fea=a, lambda_pix=b)).item()
    assert loss(lf, lp) >= 0
    base = loss(0.0, lp)
    assert loss(2 * lf, lp) - base == pytest.approx(2 * (loss(lf, lp) - base), rel=1e-9, abs=1e-12)


def test_loss_is_zero_when_both_distances_vanish(rng):
    f = Tensor(rng.standard_normal((1, 4, 4, 4)))
    img = rng.random((1, 3, 4, 4))
    assert loss_overall(f, f, Tensor(img), img, TrainConfig()).item() == 0.0


def test_pixel_gradient_closed_form(rng):
    f_r, f_pr, i_rr, gt = tensors(rng)
    cfg = TrainConfig(lambda_fea=0.3, lambda_pix=0.7)
    ad.backward(loss_overall(f_r, f_pr, i_rr, gt, cfg))
    np.testing.assert_allclose(i_rr.grad, 2 * 0.7 * (i_rr.data - gt) / gt.size, rtol=1e-12)


def test_loss_terms_shape_checks(rng):
    f_r, f_pr, i_rr, gt = tensors(rng)
    with pytest.raises(ad.ShapeError):
        loss_terms(f_r, Tensor(np.zeros((1, 4, 2, 2))), i_rr, gt, TrainConfig())
    with pytest.raises(ad.ShapeError):
        loss_terms(f_r, f_pr, i_rr, gt[:, :, :2], TrainConfig())


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_patch_tiling_covers_the_axis(patch, extra):
    length = patch + extra - 1
    starts = patch_origins(length, patch)
    covered = np.zeros(length, bool)
    for s in starts:
        assert 0 <= s <= length - patch
        covered[s:s + patch] = True
    assert covered.all()
    assert starts == sorted(set(starts))
    assert len(starts) == -(-length // patch)


def test_patch_partition_anchors_remainder(tiny_bundles):
    patches = patch_partition(tiny_bundles[0], 24)
    assert len(patches) == 4
    assert patches[-1].name.endswith("@8,8")
    with pytest.raises(ValueError):
        patch_origins(10, 12)


def test_adam_first_step_moves_by_lr():
    store = ParamStore()
    p = store.add("w", np.array([1.0]))
    p.grad = np.array([1.0])
    adam_step(store, 0.1)
    assert p.data[0] == pytest.approx(0.9, abs=1e-6)
    store.add("v", np.zeros(2))
    with pytest.raises(ContractError):
        adam_step(store, 0.1)


def test_learning_rate_schedule():
    cfg = TrainConfig(epochs=200)
    assert lr_at(0, cfg) == 1e-4
    assert lr_at(100, cfg) == pytest.approx(5e-5)
    assert lr_at(200, cfg) == 0.0
    with pytest.raises(ValueError):
        lr_at(201, cfg)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(lambda_fea=-1)
    with pytest.raises(ValueError):
        TrainConfig(lambda_fea=0, lambda_pix=0)
    cfg = TrainConfig(epochs=3, lr=0.01, seed=9)
    assert TrainConfig.from_strings(cfg.to_strings()) == cfg


def test_training_is_deterministic_and_logs(tiny_bundles):
    cfg = TrainConfig(epochs=2, lr=3e-3, batch_size=2, patch=16, seed=4)
    a = train(tiny_bundles[:2], cfg, TOY)
    b = train(tiny_bundles[:2], cfg, TOY)
    assert a.log == b.log
    assert len(a.log) == 2 * 4
    assert a.log_csv().splitlines()[0] == "epoch,step,loss_total,loss_fea,loss_pix"
    c = train(tiny_bundles[:2], TrainConfig(epochs=2, lr=3e-3, batch_size=2, patch=16, seed=5), TOY)
    assert c.log != a.log


def test_training_preconditions(tiny_bundles):
    b = tiny_bundles[0]
    no_gt = type(b)(b.rgb, b.saliency, b.depth, b.segmentation)
    with pytest.raises(ValueError, match="ground truth"):
        train([no_gt], TrainConfig(epochs=1), TOY)
    with pytest.raises(ValueError, match="multiple of window"):
        train([b], TrainConfig(epochs=1, patch=18), TOY)
    with pytest.raises(ValueError):
        train([], TrainConfig(epochs=1), TOY)


def test_short_run_reduces_loss():
    data = synth_dataset(2, (16, 16), seed=8)
    res = train(data, TrainConfig(epochs=40, lr=3e-3, batch_size=2, patch=16), TOY)
    assert np.mean(res.epoch_losses[-5:]) < res.epoch_losses[0]


def test_zero_epochs_keeps_the_initialisation(tiny_bundles):
    from hmjnd.model import HmJndNet
    res = train(tiny_bundles[:1], TrainConfig(epochs=0, patch=16), TOY)
    fresh = HmJndNet(TOY, seed=0)
    for path in fresh.store:
        np.testing.assert_array_equal(res.net.store[path].data, fresh.store[path].data)
    assert res.log == []


def test_feature_term_pulls_the_two_streams_together():
    data = synth_dataset(2, (16, 16), seed=12)
    gaps = []
    for seed in range(5):
        gap = []
        for lf in (0.0, 0.1):
            cfg = TrainConfig(epochs=30, lr=3e-3, batch_size=2, patch=16, seed=seed, lambda_fea=lf)
            net = train(data, cfg, TOY).net
            gap.append(np.mean([np.abs(p.f_r - p.f_pr).mean() for p in map(net.predict, data)]))
        gaps.append(gap)
    assert all(with_fea < without for without, with_fea in gaps)

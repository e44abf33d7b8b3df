import copy
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from arsal.fusion import FusionInputs
from arsal.metrics import cc
from arsal.vqsal import (
    ARFusionNet,
    Codebook,
    PatchDiscriminator,
    StopGradient,
    VQConfig,
    VQLossWeights,
    VQNet,
    VQSal,
    VQSalAR,
    gan_loss,
    gradient_check,
    load_checkpoint,
    perceptual_loss,
    quantize,
    saliency_loss,
    save_checkpoint,
    train_ar,
    train_saliency,
    train_vq,
    vq_loss,
)
from arsal.vqsal import autodiff as ad
from arsal.vqsal.network import density_head
from arsal.vqsal.training import analytic_gradients, fusion_objective, saliency_objective, to_nchw

TOY = VQConfig(in_channels=1, channels=(4, 8), n_z=4, K=8, seed=3)
TINY = VQConfig(in_channels=1, channels=(2, 3), n_z=2, K=4, seed=1)


def toy_images(n=16, size=8, seed=0):
    rng = np.random.default_rng(seed)
    imgs = ndimage.gaussian_filter(rng.random((n, size, size)), (0, 1.0, 1.0))
    imgs = (imgs - imgs.min()) / (imgs.max() - imgs.min())
    return imgs[..., None]


def toy_densities(n=16, size=8, seed=1):
    rng = np.random.default_rng(seed)
    d = ndimage.gaussian_filter(rng.random((n, size, size)) ** 4, (0, 1.0, 1.0)) + 1e-3
    return d / d.sum(axis=(1, 2), keepdims=True)


# -- quantizer ----------------------------------------------------------------


def test_quantize_examples():
    cb = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert quantize(np.array([0.2, 0.1]), cb).indices == 0
    tok = quantize(np.array([1.0, 1.0]), cb)
    assert tok.indices == 1 and np.array_equal(tok.embedded, cb[1])
    assert quantize(np.array([0.5, 0.5]), cb).indices == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9))
def test_quantize_gathers_exact_rows(seed, k):
    rng = np.random.default_rng(seed)
    cb = rng.normal(size=(k, 3))
    z = rng.normal(size=(2, 3, 4, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tok = quantize(z, Codebook(cb))
    assert np.array_equal(tok.embedded, cb[tok.indices])
    d = ((z[..., None, :] - cb) ** 2).sum(-1)
    assert np.array_equal(tok.indices, d.argmin(-1))


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook(np.array([[0.0, np.nan]]))
    with pytest.warns(RuntimeWarning):
        Codebook(np.zeros((1, 2)))


def test_quantize_dimension_mismatch():
    with pytest.raises(ValueError):
        quantize(np.zeros((2, 3)), np.zeros((4, 2)))


# -- losses -------------------------------------------------------------------


def _q_with(z_e_value, z_q_value):
    class Q:
        pass

    q = Q()
    q.z_e = ad.Tensor(z_e_value, True)
    q.z_q = ad.Tensor(z_q_value, True)
    q.sg_z_e = ad.Tensor(z_e_value)
    q.sg_z_q = ad.Tensor(z_q_value)
    return q


def test_vq_loss_zero_cases(rng):
    z = rng.normal(size=(1, 2, 2, 2))
    x = rng.random((1, 1, 8, 8))
    res = vq_loss(x, x, _q_with(z, z.copy()))
    assert res.components["codebook"] == 0.0 and res.components["commitment"] == 0.0
    assert res.value == 0.0


def test_beta_scales_commitment_only(rng):
    z_e, z_q = rng.normal(size=(2, 1, 2, 2, 2))
    x, x_hat = rng.random((2, 1, 1, 8, 8))
    a = vq_loss(x, x_hat, _q_with(z_e, z_q), VQLossWeights(beta=0.25)).components
    b = vq_loss(x, x_hat, _q_with(z_e, z_q), VQLossWeights(beta=0.5)).components
    assert b["weighted_commitment"] == pytest.approx(2 * a["weighted_commitment"], rel=1e-12)
    assert b["rec"] == a["rec"] and b["codebook"] == a["codebook"]
    assert b["total"] - a["total"] == pytest.approx(a["weighted_commitment"], rel=1e-9)


def test_vq_loss_gradient_routing(rng):
    z_e, z_q = rng.normal(size=(2, 1, 2, 2, 2))
    q = _q_with(z_e, z_q)
    x = rng.random((1, 1, 8, 8))
    res = vq_loss(x, ad.Tensor(x), q)
    ad.backward(res.total)
    # codebook term feeds z_q, beta * commitment feeds z_e
    np.testing.assert_allclose(q.z_q.grad, 2 * (z_q - z_e) / z_e.size, atol=1e-12)
    np.testing.assert_allclose(q.z_e.grad, 0.25 * 2 * (z_e - z_q) / z_e.size, atol=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        VQLossWeights(beta=0.0)
    with pytest.raises(ValueError):
        VQLossWeights(lam=-1.0)
    w = VQLossWeights(0.3, 0.4)
    assert VQLossWeights.from_dict(w.to_dict()) == w


def test_perceptual_examples(rng):
    a, b = rng.random((2, 2, 1, 8, 8))
    assert perceptual_loss(a, a).value == 0.0
    assert perceptual_loss(a, b).value == perceptual_loss(b, a).value
    p, q = rng.random((2, 1, 1, 1, 1))
    assert perceptual_loss(p, q).value == pytest.approx(float(((p - q) ** 2).mean()), rel=1e-12)
    with pytest.raises(ValueError):
        perceptual_loss(a, b[:, :, :4])


def test_gan_examples():
    half = np.full((1, 1, 2, 2), 0.5)
    loss_d, _ = gan_loss(half, half)
    assert loss_d.value == pytest.approx(-2 * math.log(0.5), rel=1e-12)
    loss_d, _ = gan_loss(np.ones((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))
    assert loss_d.value < 1e-6
    gs = [gan_loss(half, np.full((1, 1, 2, 2), p))[1].value for p in (0.1, 0.3, 0.6, 0.9)]
    assert all(a > b for a, b in zip(gs, gs[1:]))


def test_saliency_loss_examples():
    gt = toy_densities(2)
    same = saliency_loss(gt, gt)
    assert abs(same.components["cc"]) < 1e-12 and abs(same.components["kl"]) < 1e-5
    uniform = np.full_like(gt, 1.0 / 64)
    res = saliency_loss(uniform, gt)
    assert res.components["cc"] == 1.0
    assert cc(uniform[0], gt[0]) == 0.0
    zero_lam = saliency_loss(uniform, gt, w=0.0)
    assert zero_lam.value == zero_lam.components["rec"]
    with pytest.raises(ValueError):
        saliency_loss(uniform, gt[:, :4])


# -- networks -----------------------------------------------------------------


def test_encoder_downsamples_by_four():
    net = VQNet(TOY)
    out, q = net.forward(to_nchw(toy_images(2, 16)))
    assert q.z_e.shape == (2, 4, 4, 4)
    assert out.shape == (2, 1, 16, 16)
    assert q.tokens.indices.shape == (2, 4, 4)


def test_frozen_gradients_are_exactly_zero():
    net = VQNet(TOY).to_saliency()
    x = to_nchw(toy_images(2))
    _, grads, _ = analytic_gradients(
        saliency_objective(net, x, toy_densities(2), VQLossWeights()), net.named_parameters()
    )
    for name, g in grads.items():
        if name.startswith("enc") or name == "codebook":
            assert not g.any(), name
        else:
            assert g.any(), name


def test_saliency_training_keeps_encoder_bits():
    net = VQNet(TOY)
    before = {k: v.value.copy() for k, v in net.named_parameters().items()}
    train_saliency(net, toy_images(4), toy_densities(4), steps=5)
    after = net.named_parameters()
    for k, v in before.items():
        if k.startswith("enc") or k == "codebook":
            assert np.array_equal(after[k].value, v)


def test_single_entry_codebook_still_trains_decoder():
    with pytest.warns(RuntimeWarning):
        net = VQNet(VQConfig(in_channels=1, channels=(4, 8), n_z=4, K=1, seed=0))
    x = to_nchw(toy_images(3))
    _, q = net.forward(x)
    assert np.all(q.tokens.indices == 0)
    before = net.decoder.layers[-1].weight.value.copy()
    res = train_vq(net, toy_images(3), steps=3)
    assert not np.array_equal(net.decoder.layers[-1].weight.value, before)
    assert all(np.isfinite(res.losses))


def test_zero_lr_leaves_parameters_bit_identical():
    net = VQNet(TOY)
    before = {k: v.value.copy() for k, v in net.named_parameters().items()}
    train_vq(net, toy_images(4), steps=3, lr=0.0)
    for k, v in net.named_parameters().items():
        assert np.array_equal(v.value, before[k])


def test_same_seed_same_losses():
    a = train_vq(VQNet(TOY), toy_images(6), steps=4, batch_size=3, seed=5).losses
    b = train_vq(VQNet(TOY), toy_images(6), steps=4, batch_size=3, seed=5).losses
    assert a == b


def test_adversarial_training_runs():
    res = train_vq(VQNet(TOY), toy_images(2, 16), steps=3, adversarial=True)
    assert "gan_g" in res.components[0] and all(np.isfinite(res.losses))
    assert PatchDiscriminator(1)(ad.constant(np.zeros((1, 1, 16, 16)))).shape == (1, 1, 4, 4)


def test_reconstruction_loss_halves():
    res = train_vq(VQNet(TOY), toy_images(16), steps=200)
    assert res.losses[-1] <= 0.5 * res.losses[0]
    assert res.slope() < 0


def test_fusion_gradient_check():
    # the reconstruction and saliency objectives are checked in the acceptance suite
    net = VQNet(TINY)
    x = to_nchw(toy_images(1, 4))
    gt = toy_densities(1, 4)
    fusion = ARFusionNet(copy.deepcopy(net), seed=2)
    params = fusion.named_parameters()
    trainable = [k for k, p in params.items() if p.requires_grad]
    rep = gradient_check(fusion_objective(fusion, x, x[:, :, ::-1], x[:, :, :, ::-1], gt, VQLossWeights()), params, names=trainable)
    assert rep.ok, rep.max_rel_error
    assert not rep.analytic["codebook"].any()


def _fusion_inputs(seed=0, n=2, size=8):
    rng = np.random.default_rng(seed)
    return [to_nchw(rng.random((n, size, size, 1))) for _ in range(3)]


def test_fusion_output_is_unit_mass():
    net = ARFusionNet(VQNet(TOY))
    out = net.forward(*_fusion_inputs()).value
    assert out.shape == (2, 8, 8)
    np.testing.assert_allclose(out.sum(axis=(1, 2)), 1.0, atol=1e-12)
    assert out.min() > 0
    with pytest.raises(ValueError):
        net.forward(*_fusion_inputs()[:2], np.zeros((2, 1, 4, 4)))


def test_fusion_decoders_share_nothing():
    net = ARFusionNet(VQNet(TOY))
    ids = [set(map(id, net.decoders[b].parameters())) for b in net.BRANCHES]
    assert not (ids[0] & ids[1] or ids[1] & ids[2] or ids[0] & ids[2])


def test_fusion_permutation_invariance():
    net = ARFusionNet(VQNet(TOY), seed=4)
    for b in net.BRANCHES:  # make the three decoders differ
        for p in net.decoders[b].parameters():
            p.value = p.value + np.random.default_rng(len(b) + ord(b[0])).normal(0, 0.1, p.shape)
    x_ar, x_bg, x_s = _fusion_inputs(1)
    ref = net.forward(x_ar, x_bg, x_s).value
    perm = (2, 0, 1)
    swapped = copy.copy(net)
    slots = [net.decoders[b] for b in net.BRANCHES]
    swapped.decoders = {b: slots[i] for b, i in zip(net.BRANCHES, perm)}
    swapped.fuse_weight = ad.Tensor(net.fuse_weight.value[:, list(perm)], True)
    xs = (x_ar, x_bg, x_s)
    out = swapped.forward(*(xs[i] for i in perm)).value
    np.testing.assert_allclose(out, ref, atol=1e-9)


def test_fusion_averaging_and_selection_heads():
    base = VQNet(TOY).to_saliency()
    x = to_nchw(toy_images(2))
    single = density_head(base.forward(x)[0]).value
    net = ARFusionNet(base)
    net.fuse_bias.value = np.zeros(1)
    net.fuse_weight.value = np.full((1, 3, 1, 1), 1.0 / 3.0)
    np.testing.assert_allclose(net.forward(x, x, x).value, single, atol=1e-12)
    net.fuse_weight.value = np.array([0.0, 0.0, 1.0]).reshape(1, 3, 1, 1)
    rng = np.random.default_rng(9)
    other = to_nchw(rng.random((2, 8, 8, 1)))
    np.testing.assert_allclose(net.forward(other, other[::-1], x).value, single, atol=1e-12)


def test_train_ar_freezes_shared_parts():
    base = VQNet(TOY).to_saliency()
    net = ARFusionNet(base)
    enc_before = [p.value.copy() for p in net.encoder.parameters()]
    imgs = toy_images(3)
    res = train_ar(net, imgs, imgs[::-1], imgs, toy_densities(3), steps=3)
    assert len(res.losses) == 3
    for p, v in zip(net.encoder.parameters(), enc_before):
        assert np.array_equal(p.value, v)


def test_stop_gradient_replay():
    sg = StopGradient()
    t = ad.Tensor(np.arange(3.0), True)
    sg("k", t)
    replay = StopGradient(sg.values)
    t.value = t.value + 5
    np.testing.assert_array_equal(replay("k", t).value, np.arange(3.0))


# -- persistence and estimators --------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    net = VQNet(TOY)
    train_vq(net, toy_images(4), steps=2)
    net.to_saliency()
    save_checkpoint(net, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    x = to_nchw(toy_images(2))
    assert back.mode == "saliency"
    np.testing.assert_array_equal(back.forward(x)[0].value, net.forward(x)[0].value)
    fusion = ARFusionNet(net)
    save_checkpoint(fusion, tmp_path / "ar")
    fb = load_checkpoint(tmp_path / "ar")
    np.testing.assert_array_equal(fb.forward(x, x, x).value, fusion.forward(x, x, x).value)


def test_vqsal_estimator(tmp_path):
    imgs = [np.repeat(im, 3, axis=2) for im in toy_images(3, 16)]
    dens = toy_densities(3, 16)
    est = VQSal(K=8, n_z=4, channels=(4, 8), work_size=16, steps_vq=2, steps_sal=2).fit(imgs, dens)
    (pred,) = est.predict(imgs[:1])
    assert pred.shape == (16, 16) and abs(pred.grid.sum() - 1) < 1e-9
    est.save(tmp_path / "m")
    again = VQSal.load(tmp_path / "m")
    np.testing.assert_array_equal(again.predict_one(imgs[0]).grid, pred.grid)
    assert est.get_params()["K"] == 8


def test_vqsal_ar_estimator():
    imgs = [np.repeat(im, 3, axis=2) for im in toy_images(3, 16)]
    items = [FusionInputs(a, b, s, 0.5) for a, b, s in zip(imgs, imgs[::-1], imgs)]
    est = VQSalAR(K=8, n_z=4, channels=(4, 8), work_size=16, steps_vq=1, steps_sal=1, steps_ar=2)
    est.fit(items, toy_densities(3, 16))
    assert len(est.ar_curve_) == 2
    assert est.predict(items)[0].shape == (16, 16)

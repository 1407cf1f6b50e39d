"""PoE fusion closed forms, VAE losses, mask sampling, and training."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from flowmi.autodiff import Tensor, backward, finite_diff_check
from flowmi.config import config_from_dict
from flowmi.dataset import generate_dataset
from flowmi.errors import ContractError, ShapeError
from flowmi.mmvae import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    GaussianPosterior,
    LossWeights,
    Mask,
    decode,
    decode_np,
    encode_modality,
    encode_modality_np,
    init_vae,
    loss_kl,
    loss_pull,
    loss_rec,
    poe_fuse,
    poe_fuse_np,
    sample_mask,
    sample_posterior,
    train_vae,
    vae_total_loss,
)
from flowmi.phantom import FAMILIES
from flowmi.rng import Rng, derive_seed


def _post(mu, logvar):
    return GaussianPosterior(
        mu=Tensor(np.asarray(mu, dtype=np.float64)),
        logvar=Tensor(np.asarray(logvar, dtype=np.float64)),
    )


# ---------------------------------------------------------------------------
# Mask


def test_mask_constructors_and_properties():
    mask = Mask.from_indices(4, [0, 2])
    assert mask.observed == (True, False, True, False)
    assert mask.count == 2
    assert mask.indices == (0, 2)
    assert not mask.is_full
    assert len(mask) == 4
    assert Mask.full(3).is_full


# ---------------------------------------------------------------------------
# PoE fusion closed forms


def test_fuse_single_expert_with_prior():
    # N(2, 1) times the unit prior: precision 2, mean 2 * (1/2) = 1
    fused = poe_fuse([_post([2.0], [0.0])])
    assert fused.mu.data[0] == pytest.approx(1.0, abs=1e-12)
    assert fused.logvar.data[0] == pytest.approx(math.log(0.5), abs=1e-12)


def test_fuse_two_identical_experts_without_prior():
    # two copies of N(m, s^2): same mean, half the variance
    fused = poe_fuse([_post([3.0], [0.4])] * 2, include_prior=False)
    assert fused.mu.data[0] == pytest.approx(3.0, abs=1e-12)
    assert fused.logvar.data[0] == pytest.approx(0.4 - math.log(2.0), abs=1e-12)


def test_fuse_k_unit_experts_with_prior():
    for k in (1, 2, 3, 5):
        fused = poe_fuse([_post([0.0], [0.0])] * k)
        assert fused.logvar.data[0] == pytest.approx(-math.log(k + 1.0), abs=1e-12)


def test_fuse_precisions_add():
    a, b = _post([1.0], [0.7]), _post([-2.0], [-0.3])
    ab = poe_fuse([a, b], include_prior=False)
    lam = math.exp(-0.7) + math.exp(0.3)
    assert ab.logvar.data[0] == pytest.approx(-math.log(lam), abs=1e-12)
    want_mu = (1.0 * math.exp(-0.7) - 2.0 * math.exp(0.3)) / lam
    assert ab.mu.data[0] == pytest.approx(want_mu, abs=1e-12)


def test_fuse_is_associative_on_precisions():
    experts = [_post([0.5], [0.2]), _post([1.5], [-0.4]), _post([-1.0], [0.9])]
    all_at_once = poe_fuse(experts, include_prior=False)
    pair = poe_fuse(experts[:2], include_prior=False)
    stepwise = poe_fuse([pair, experts[2]], include_prior=False)
    assert np.allclose(all_at_once.mu.data, stepwise.mu.data, atol=1e-12)
    assert np.allclose(all_at_once.logvar.data, stepwise.logvar.data, atol=1e-12)


def test_fused_mean_lies_in_the_expert_hull():
    rng = Rng(13)
    for _ in range(50):
        mus = [np.array([6.0 * rng.uniform() - 3.0]) for _ in range(3)]
        lvs = [np.array([4.0 * rng.uniform() - 2.0]) for _ in range(3)]
        fused = poe_fuse(
            [_post(m, l) for m, l in zip(mus, lvs)], include_prior=False
        )
        lo = min(m[0] for m in mus)
        hi = max(m[0] for m in mus)
        assert lo - 1e-12 <= fused.mu.data[0] <= hi + 1e-12


def test_fuse_prior_shrinks_mean_towards_zero():
    fused_with = poe_fuse([_post([4.0], [0.0])])
    fused_without = poe_fuse([_post([4.0], [0.0])], include_prior=False)
    assert abs(fused_with.mu.data[0]) < abs(fused_without.mu.data[0])


def test_fuse_bare_prior_and_errors():
    bare = poe_fuse([], latent_dim=3)
    assert np.array_equal(bare.mu.data, np.zeros(3))
    assert np.array_equal(bare.logvar.data, np.zeros(3))
    with pytest.raises(ContractError):
        poe_fuse([], include_prior=False)
    with pytest.raises(ContractError):
        poe_fuse([])


def test_fuse_np_twin_matches_tape_fuse():
    rng = Rng(21)
    for include_prior in (True, False):
        moments = [
            (rng.normals(5), rng.normals(5) * 0.5) for _ in range(3)
        ]
        posts = [_post(mu, lv) for mu, lv in moments]
        taped = poe_fuse(posts, include_prior=include_prior)
        mu_np, lv_np = poe_fuse_np(moments, include_prior=include_prior)
        assert np.allclose(taped.mu.data, mu_np, atol=1e-15)
        assert np.allclose(taped.logvar.data, lv_np, atol=1e-15)
    with pytest.raises(ContractError):
        poe_fuse_np([])


def test_fuse_is_differentiable():
    mu = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    lv = Tensor(np.array([0.3, -0.1]), requires_grad=True)

    def f():
        fused = poe_fuse([GaussianPosterior(mu=mu, logvar=lv)])
        return (fused.mu * fused.mu).sum() + fused.logvar.sum()

    assert finite_diff_check(f, [mu, lv]) < 1e-6


# ---------------------------------------------------------------------------
# encode / decode / sampling


def _tiny_vae(seed=0, hidden=(8,), latent_dim=3, image_dim=16):
    return init_vae(
        Rng(seed), FAMILIES["ct_pair"], image_dim=image_dim,
        latent_dim=latent_dim, hidden=hidden,
    )


def test_encoder_np_twin_and_logvar_clamp():
    params = _tiny_vae()
    x = Rng(4).uniforms(16)
    post = encode_modality(params, 0, Tensor(x))
    mu_np, lv_np = encode_modality_np(params, 0, x)
    assert np.array_equal(post.mu.data, mu_np)
    assert np.array_equal(post.logvar.data, lv_np)
    assert np.all(lv_np >= LOGVAR_MIN) and np.all(lv_np <= LOGVAR_MAX)


def test_encoder_rejects_bad_index_and_shape():
    params = _tiny_vae()
    with pytest.raises(ContractError):
        encode_modality(params, 2, Tensor(np.zeros(16)))
    with pytest.raises(ShapeError):
        encode_modality(params, 0, Tensor(np.zeros(9)))


def test_logvar_bias_init_gives_small_initial_variance():
    params = init_vae(
        Rng(0), FAMILIES["ct_pair"], image_dim=16, latent_dim=4,
        hidden=(8,), logvar_bias_init=-5.0,
    )
    for enc in params.encoders:
        bias = enc.layers[-1][1].data
        assert np.all(bias[4:] == -5.0)
        assert np.all(bias[:4] == 0.0)


def test_decode_np_twin_and_shapes():
    params = _tiny_vae()
    z = Rng(5).normals(3)
    taped = decode(params, Tensor(z))
    plain = decode_np(params, z)
    assert len(taped) == len(plain) == 2
    for t, p in zip(taped, plain):
        assert t.data.shape == (16,)
        assert np.array_equal(t.data, p)
    with pytest.raises(ShapeError):
        decode(params, Tensor(np.zeros(5)))


def test_sample_posterior_reparameterization():
    post = _post([1.0, -2.0], [math.log(4.0), math.log(9.0)])
    eps = np.array([0.5, -1.0])
    z = sample_posterior(post, eps=eps)
    assert np.allclose(z.data, [1.0 + 2.0 * 0.5, -2.0 - 3.0], atol=1e-12)
    with pytest.raises(ContractError):
        sample_posterior(post)


def test_sample_posterior_gradients_flow():
    mu = Tensor(np.array([0.3]), requires_grad=True)
    lv = Tensor(np.array([-0.2]), requires_grad=True)

    def f():
        z = sample_posterior(
            GaussianPosterior(mu=mu, logvar=lv), eps=np.array([0.7])
        )
        return (z * z).sum()

    assert finite_diff_check(f, [mu, lv]) < 1e-6


# ---------------------------------------------------------------------------
# mask sampling


def test_sample_mask_nonempty_uniformity():
    rng = Rng(77)
    counts = {}
    n = 70000
    for _ in range(n):
        mask = sample_mask(rng, 3)
        counts[mask.observed] = counts.get(mask.observed, 0) + 1
    assert len(counts) == 7  # every non-empty subset of 3 modalities
    for c in counts.values():
        assert abs(c / n - 1.0 / 7.0) < 0.01


def test_sample_mask_strict_subset_excludes_full():
    rng = Rng(78)
    seen = set()
    for _ in range(2000):
        mask = sample_mask(rng, 2, scheme="uniform_strict_subset")
        assert not mask.is_full
        assert mask.count >= 1
        seen.add(mask.observed)
    assert seen == {(True, False), (False, True)}


def test_sample_mask_rejects_bad_arguments():
    with pytest.raises(ContractError):
        sample_mask(Rng(0), 0)
    with pytest.raises(ContractError):
        sample_mask(Rng(0), 1, scheme="uniform_strict_subset")
    with pytest.raises(ContractError):
        sample_mask(Rng(0), 3, scheme="bogus")


# ---------------------------------------------------------------------------
# losses


def test_loss_rec_example_and_errors():
    recon = [Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0]))]
    targets = [np.array([1.0, 0.0]), np.array([0.0, 4.0])]
    # squared errors: 0 + 4 + 9 + 0 over 4 entries
    assert loss_rec(recon, targets).item() == pytest.approx(13.0 / 4.0, abs=1e-12)
    with pytest.raises(ContractError):
        loss_rec(recon, targets[:1])
    with pytest.raises(ShapeError):
        loss_rec([Tensor(np.zeros(3))], [np.zeros(2)])


def test_loss_pull_blocks_gradient_into_the_full_path():
    broken = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    full = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    loss = loss_pull(broken, full)
    assert loss.item() == pytest.approx((1.0 + 4.0) / 2.0, abs=1e-12)
    backward(loss)
    assert np.allclose(broken.grad, [1.0, 2.0], atol=1e-12)
    assert full.grad is None or np.all(full.grad == 0.0)


def test_loss_kl_closed_form_value():
    # mu = 0, sigma^2 = 2 in every dim: KL = 0.5 * (2 - ln 2 - 1) per dim
    post = _post(np.zeros(4), np.full(4, math.log(2.0)))
    want = 0.5 * (2.0 - math.log(2.0) - 1.0)
    assert loss_kl([post]).item() == pytest.approx(want, abs=1e-10)


def test_loss_kl_zero_at_the_prior_and_nonnegative():
    assert loss_kl([_post(np.zeros(3), np.zeros(3))]).item() == pytest.approx(0.0, abs=1e-12)
    rng = Rng(31)
    for _ in range(200):
        post = _post(rng.normals(4) * 2.0, rng.normals(4))
        assert loss_kl([post]).item() >= -1e-12


def test_loss_kl_sums_over_modalities():
    a = _post([1.0], [0.0])
    both = loss_kl([a, a]).item()
    assert both == pytest.approx(2.0 * loss_kl([a]).item(), abs=1e-12)


# ---------------------------------------------------------------------------
# total objective


def _one_study(seed=11):
    _, studies = generate_dataset(seed=seed, n_studies=20)
    by_family = {}
    for study in studies.values():
        by_family.setdefault(study.family, study)
    return by_family


def test_vae_total_loss_reduces_to_rec_when_weights_vanish():
    params = _tiny_vae(image_dim=256)
    study = _one_study()["ct_pair"]
    mask = Mask.full(2)
    total, parts = vae_total_loss(
        params, study, mask, LossWeights(lambda_pull=0.0, beta_kl=0.0), Rng(3)
    )
    assert total.item() == pytest.approx(parts["rec"], abs=1e-12)


def test_vae_total_loss_full_mask_has_zero_pull():
    params = _tiny_vae(image_dim=256)
    study = _one_study()["ct_pair"]
    _, parts = vae_total_loss(
        params, study, Mask.full(2), LossWeights(), Rng(3)
    )
    assert parts["pull"] == pytest.approx(0.0, abs=1e-15)


def _fd_fixture(seed=1):
    params = init_vae(
        Rng(seed), FAMILIES["ct_pair"], image_dim=16, latent_dim=2, hidden=(8,)
    )
    gen = Rng(40)
    study = SimpleNamespace(
        id="fd0",
        images={m: gen.uniforms(16) for m in FAMILIES["ct_pair"]},
    )
    return params, study


def test_vae_total_loss_gradients_full_mask():
    # with every modality observed the pull target equals the pulled value,
    # so the stop-gradient branch is inert and the whole objective is a
    # plain differentiable function of the parameters
    params, study = _fd_fixture()
    weights = LossWeights(lambda_pull=0.5, beta_kl=0.5)

    def f():
        total, _ = vae_total_loss(params, study, Mask.full(2), weights, Rng(9))
        return total

    assert finite_diff_check(f, params.parameters()) < 1e-4


def test_vae_total_loss_gradients_broken_mask_without_pull():
    params, study = _fd_fixture()
    weights = LossWeights(lambda_pull=0.0, beta_kl=0.5)
    mask = Mask.from_indices(2, [0])

    def f():
        total, _ = vae_total_loss(params, study, mask, weights, Rng(9))
        return total

    assert finite_diff_check(f, params.parameters()) < 1e-4


def test_pull_gradient_chain_through_encoder_and_fusion():
    # pin the alignment target to a constant so finite differences and the
    # tape agree on the broken-path derivative
    params, study = _fd_fixture()
    target = Tensor(np.array([0.3, -0.8]))
    x = Tensor(study.images[params.modalities[0]])

    def f():
        post = encode_modality(params, 0, x)
        fused = poe_fuse([post])
        return loss_pull(fused.mu, target)

    assert finite_diff_check(f, params.encoders[0].parameters()) < 1e-4


def test_pull_sends_no_gradient_down_the_full_only_path():
    # the unobserved modality's encoder reaches the loss through the KL term
    # and through the stop-gradient side of the pull, so toggling the pull
    # weight must not change its gradient at all
    params, study = _fd_fixture()
    mask = Mask.from_indices(2, [0])

    def grads(lambda_pull):
        for p in params.parameters():
            p.grad = None
        total, _ = vae_total_loss(
            params, study, mask,
            LossWeights(lambda_pull=lambda_pull, beta_kl=0.5), Rng(9),
        )
        backward(total)
        return [
            None if p.grad is None else p.grad.copy()
            for p in params.encoders[1].parameters()
        ], [
            None if p.grad is None else p.grad.copy()
            for p in params.encoders[0].parameters()
        ]

    off_ctc, off_ct = grads(0.0)
    on_ctc, on_ct = grads(1.0)
    for a, b in zip(off_ctc, on_ctc):
        assert np.array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(off_ct, on_ct))


def test_vae_total_loss_validates_mask():
    params = _tiny_vae(image_dim=256)
    study = _one_study()["ct_pair"]
    with pytest.raises(ContractError):
        vae_total_loss(params, study, Mask.from_indices(3, [0]), LossWeights(), Rng(0))
    with pytest.raises(ContractError):
        vae_total_loss(params, study, Mask.from_indices(2, []), LossWeights(), Rng(0))


def test_loss_weights_reject_negatives():
    with pytest.raises(ContractError):
        LossWeights(lambda_pull=-0.1)
    with pytest.raises(ContractError):
        LossWeights(beta_kl=-1.0)


# ---------------------------------------------------------------------------
# training


def _small_config(seed=5, epochs=3):
    return config_from_dict(
        {
            "seed": seed,
            "dataset": {"n_studies": 20},
            "model": {"hidden": [8], "latent_dim": 3},
            "optimizer": {"epochs": epochs, "effective_batch": 4, "micro_batch": 4, "lr": 3e-3},
        }
    )


def test_train_vae_is_deterministic_and_improves_reconstruction():
    config = _small_config(epochs=12)
    manifest, studies = generate_dataset(seed=config.seed, n_studies=20)

    def run():
        params, history = train_vae(config, manifest, studies, "ct_pair")
        return params, history

    params_a, hist_a = run()
    params_b, hist_b = run()
    for pa, pb in zip(params_a.parameters(), params_b.parameters()):
        assert np.array_equal(pa.data, pb.data)
    assert hist_a.epochs == hist_b.epochs
    assert hist_a.last("rec") < hist_a.first("rec")
    assert set(hist_a.train_ids) == set(manifest.ids_of_family("ct_pair", "train"))


def test_train_vae_zero_epochs_returns_init():
    config = _small_config(epochs=0)
    manifest, studies = generate_dataset(seed=config.seed, n_studies=20)
    params, history = train_vae(config, manifest, studies, "ct_pair")
    assert history.epochs == []
    fresh = init_vae(
        Rng(derive_seed(config.seed, "vae-init-ct_pair")),
        FAMILIES["ct_pair"], image_dim=config.dataset.spec.grid ** 2,
        latent_dim=config.model.latent_dim, hidden=config.model.hidden,
        activation=config.model.activation,
        logvar_bias_init=config.model.logvar_bias_init,
    )
    for p, q in zip(params.parameters(), fresh.parameters()):
        assert np.array_equal(p.data, q.data)

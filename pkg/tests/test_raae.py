import numpy as np
import pytest

from ambigen import models, raae
from ambigen import numerics as nx
from ambigen.errors import ConfigError, UnlabelablePointError
from conftest import make_stub_raae


def test_class_pair_ordering_enforced():
    with pytest.raises(ConfigError):
        raae.ClassPair(8, 3)
    with pytest.raises(ConfigError):
        raae.ClassPair(5, 5)
    assert raae.ClassPair(3, 8).name == "pair3-8"


def test_default_prior_layout():
    prior = raae.default_prior()
    assert np.array_equal(prior.means, [[-3.0, 0.0], [3.0, 0.0]])
    assert np.array_equal(prior.stds, np.ones((2, 2)))


def test_sample_prior_degenerate_std():
    prior = raae.LatentPrior(np.array([[-3.0, 0.0], [3.0, 0.0]]), np.zeros((2, 2)))
    draws = raae.sample_prior(prior, 0, 50, seed=1)
    assert np.all(draws == [-3.0, 0.0])


def test_sample_prior_monte_carlo_mean():
    draws = raae.sample_prior(raae.default_prior(), 0, 100_000, seed=2)
    assert np.max(np.abs(draws.mean(axis=0) - [-3.0, 0.0])) < 0.05


def test_sample_prior_tail_mass():
    # P(first coordinate > 0 | mode at -3, std 1) = Phi(-3) ~ 0.00135
    draws = raae.sample_prior(raae.default_prior(), 0, 100_000, seed=3)
    assert np.mean(draws[:, 0] > 0) < 0.005


def test_sample_prior_side_validation():
    with pytest.raises(ConfigError):
        raae.sample_prior(raae.default_prior(), 2, 10, seed=0)


def test_modes_disjoint_at_default_eps():
    prior = raae.default_prior()
    assert prior.modes_disjoint()
    # widening the stds merges the high-density regions
    wide = raae.LatentPrior(prior.means, 3.0 * np.ones((2, 2)))
    assert not wide.modes_disjoint()


def test_normalize_score_pair_exact_cases():
    assert raae.normalize_score_pair(0.9, 0.1) == (0.9, 0.1)
    p1, p2 = raae.normalize_score_pair(0.6, 0.2)
    assert abs(p1 - 0.75) < 1e-12 and abs(p2 - 0.25) < 1e-12
    p1, p2 = raae.normalize_score_pair(0.4, 0.4)
    assert p1 == 0.5 and p2 == 0.5


def test_normalize_score_pair_scale_invariant():
    rng = nx.seeded_rng(4)
    for _ in range(100):
        s1, s2 = rng.uniform(1e-6, 1.0, size=2)
        lam = rng.uniform(1e-6, 1e6)
        a = raae.normalize_score_pair(s1, s2)
        b = raae.normalize_score_pair(lam * s1, lam * s2)
        assert abs(a[0] - b[0]) < 1e-12 and abs(a[1] - b[1]) < 1e-12


def test_normalize_score_pair_unlabelable():
    with pytest.raises(UnlabelablePointError):
        raae.normalize_score_pair(1e-13, 1e-13)


def test_probabilistic_label_through_stub_disc():
    # logits chosen so the sigmoid scores are 0.9 and 0.1 under the two conditions
    model = make_stub_raae(disc_logits=(np.log(9.0), -np.log(9.0)))
    label = raae.probabilistic_label(model, np.zeros(2))
    assert abs(label.p_c1 - 0.9) < 1e-12
    assert abs(label.p_c2 - 0.1) < 1e-12
    assert label.truly_ambiguous
    assert abs(label.p_c1 + label.p_c2 - 1.0) < 1e-9


def test_probabilistic_label_embedding():
    label = raae.ProbabilisticLabel(0.75, 0.25, raae.ClassPair(3, 8))
    row = label.embed(10)
    assert row[3] == 0.75 and row[8] == 0.25
    assert np.count_nonzero(row) == 2
    assert abs(row.sum() - 1.0) < 1e-9


def test_balance_pair_subsamples_larger_class():
    y = np.array([0] * 30 + [1] * 10)
    keep = raae._balance_pair(y, nx.seeded_rng(0))
    kept = y[keep]
    assert np.count_nonzero(kept == 0) == 10
    assert np.count_nonzero(kept == 1) == 10


def test_real_fake_accuracy_indistinguishable_populations():
    # an untrained disc scored on two iid prior populations sits near chance
    model = make_stub_raae(decoder_kind="random", seed=7)
    rng = nx.seeded_rng(8)
    disc = models.build_discriminator(
        models.DiscriminatorConfig(latent_dim=2), nx.seeded_rng(9))
    model.discriminator = disc
    a = raae.sample_prior(model.prior, 0, 2000, seed=10)
    b = raae.sample_prior(model.prior, 0, 2000, seed=11)
    acc = raae._real_fake_accuracy(model.disc_scores(a, 0), model.disc_scores(b, 0))
    assert abs(acc - 0.5) < 0.05


def test_class_accuracy_constant_classifier():
    # a disc hard-wired to prefer c1 scores exactly the c1 share correct
    p1 = np.full(40, 0.8)
    p2 = np.full(40, 0.2)
    local_y = np.array([0] * 25 + [1] * 15)
    acc = raae._class_accuracy(p1, p2, local_y)
    assert acc == 25 / 40


def test_train_raae_rejects_bad_inputs():
    imgs = np.zeros((4, 28, 28))
    with pytest.raises(ConfigError):
        raae.train_raae(imgs, np.array([3, 8, 3, 5]), raae.ClassPair(3, 8))
    with pytest.raises(ConfigError):
        raae.train_raae(imgs + 2.0, np.array([3, 8, 3, 8]), raae.ClassPair(3, 8))


def test_raae_checkpoint_round_trip(tmp_path):
    model = make_stub_raae(disc_logits=(0.3, -0.7), image_dim=9)
    model.verdict = raae.ValidationVerdict(0.5, 0.95, True)
    path = tmp_path / "stub.ambg"
    raae.save_raae(path, model)
    loaded = raae.load_raae(path)
    zs = nx.seeded_rng(1).standard_normal((5, 2))
    assert np.array_equal(loaded.decode(zs), model.decode(zs))
    assert np.array_equal(loaded.disc_scores(zs, 0), model.disc_scores(zs, 0))
    assert loaded.verdict.accepted
    assert loaded.pair == model.pair
    assert np.array_equal(loaded.prior.means, model.prior.means)


# -- end-to-end behaviour on the shared trained model (slow fixtures) --------

@pytest.mark.slow
def test_trained_raae_reconstruction_quality(pair38_raae):
    model, _, (hold_x, hold_y) = pair38_raae
    recon = model.decode(model.encode(hold_x))
    mse = float(np.mean((recon - models.flatten_images(hold_x)) ** 2))
    assert mse <= 0.05


@pytest.mark.slow
def test_trained_raae_modes_pulled_apart(pair38_raae):
    model, _, (hold_x, hold_y) = pair38_raae
    z = model.encode(hold_x)
    assert z[hold_y == 3, 0].mean() < -1.0
    assert z[hold_y == 8, 0].mean() > 1.0


@pytest.mark.slow
def test_trained_raae_validation_reproducible(pair38_raae):
    model, _, (hold_x, hold_y) = pair38_raae
    v1 = raae.validate_raae(model, hold_x, hold_y, seed=100)
    v2 = raae.validate_raae(model, hold_x, hold_y, seed=100)
    assert v1 == v2


@pytest.mark.slow
def test_adversarial_off_reduces_to_plain_autoencoder(pair38_raae, corpus_big):
    _, (fit_x, fit_y), (hold_x, _) = pair38_raae
    cfg = raae.RaaeTrainConfig(epochs=12, adversarial=False)
    off = raae.train_raae(fit_x, fit_y, raae.ClassPair(3, 8, "digits"),
                          config=cfg, seed=0)
    plain = models.train_autoencoder(
        models.flatten_images(fit_x), models.AutoencoderConfig(),
        models.TrainConfig(epochs=12), seed=0)
    x = models.flatten_images(hold_x)
    mse_off = float(np.mean((off.decode(off.encode(x)) - x) ** 2))
    mse_plain = float(np.mean((plain.reconstruct(x) - x) ** 2))
    assert abs(mse_off - mse_plain) <= 0.2 * max(mse_off, mse_plain)

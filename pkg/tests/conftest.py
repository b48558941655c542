import numpy as np
import pytest

from ambigen import models, raae, synth
from ambigen import numerics as nx


@pytest.fixture(scope="session")
def corpus():
    """Mid-size digit corpus for model-level tests (renders in a few seconds)."""
    return synth.make_digit_corpus(4000, 800, seed=7001)


@pytest.fixture(scope="session")
def corpus_big():
    """Desk-scale digit corpus shared with the acceptance suite."""
    return synth.make_digit_corpus(10000, 2000, seed=7001)


@pytest.fixture(scope="session")
def shapes_corpus():
    return synth.make_fashion_corpus(4000, 2000, seed=7002)


@pytest.fixture(scope="session")
def trained_classifier(corpus):
    result = models.train_classifier(
        corpus.train_images, np.eye(10)[corpus.train_labels],
        models.ClassifierConfig(), models.TrainConfig(epochs=8), seed=1)
    return result.model


@pytest.fixture(scope="session")
def pair38_raae(corpus_big):
    """One trained-and-validated rAAE on the (3, 8) pair of the big corpus."""
    mask = (corpus_big.train_labels == 3) | (corpus_big.train_labels == 8)
    imgs, labs = corpus_big.train_images[mask], corpus_big.train_labels[mask]
    perm = nx.seeded_rng(11).permutation(len(imgs))
    n_hold = int(0.2 * len(imgs))
    hold, fit = perm[:n_hold], perm[n_hold:]
    model = raae.train_raae(imgs[fit], labs[fit], raae.ClassPair(3, 8, "digits"), seed=0)
    raae.validate_raae(model, imgs[hold], labs[hold], seed=100)
    return model, (imgs[fit], labs[fit]), (imgs[hold], labs[hold])


def make_stub_raae(disc_logits=(0.0, 0.0), decoder_kind="random", seed=0,
                   latent_dim=2, image_dim=9):
    """RaaeModel with a hand-wired discriminator for sampler/label tests.

    The discriminator is a single dense layer whose logit depends only on the
    one-hot condition: logit = disc_logits[side] everywhere in latent space.
    """
    rng = nx.seeded_rng(seed)
    enc = [nx.init_dense(rng, image_dim, latent_dim, "identity")]
    if decoder_kind == "random":
        dec = [nx.init_dense(rng, latent_dim, 8, "tanh"),
               nx.init_dense(rng, 8, image_dim, "sigmoid")]
    elif decoder_kind == "constant":
        dec = [nx.DenseLayer(np.zeros((image_dim, latent_dim)),
                             np.linspace(-1, 1, image_dim), "sigmoid")]
    else:
        raise ValueError(decoder_kind)
    w = np.zeros((1, latent_dim + 2))
    w[0, latent_dim] = disc_logits[0]
    w[0, latent_dim + 1] = disc_logits[1]
    disc = [nx.DenseLayer(w, np.zeros(1), "identity")]
    ae = models.AutoencoderModel(enc, dec, latent_dim)
    model = raae.RaaeModel(raae.ClassPair(0, 1, "stub"), ae, disc, raae.default_prior(latent_dim))
    model.verdict = raae.ValidationVerdict(0.5, 1.0, True)
    return model

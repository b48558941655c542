import numpy as np
import pytest

from ambigen import models
from ambigen import numerics as nx
from ambigen.errors import ConfigError, FormatError


def test_default_classifier_shapes():
    model = models.build_classifier(models.ClassifierConfig(), nx.seeded_rng(0))
    assert model.layers[0].in_size == 784
    assert model.layers[-1].out_size == 10
    assert model.hidden_count == 2


def test_default_autoencoder_is_two_dimensional():
    ae = models.build_autoencoder(models.AutoencoderConfig(), nx.seeded_rng(0))
    assert ae.latent_dim == 2
    assert ae.encoder[0].in_size == 784 and ae.encoder[-1].out_size == 2
    assert ae.decoder[0].in_size == 2 and ae.decoder[-1].out_size == 784
    assert ae.decoder[-1].activation == "sigmoid"


def test_discriminator_shape_contract():
    disc = models.build_discriminator(models.DiscriminatorConfig(), nx.seeded_rng(0))
    assert disc[0].in_size == 4  # latent 2 + one-hot condition 2
    assert disc[-1].out_size == 1


def test_invalid_widths_rejected():
    with pytest.raises(ConfigError):
        models.build_classifier(models.ClassifierConfig(hidden=(0,)), nx.seeded_rng(0))
    with pytest.raises(ConfigError):
        models.build_classifier(models.ClassifierConfig(hidden=()), nx.seeded_rng(0))
    with pytest.raises(ConfigError):
        models.build_autoencoder(models.AutoencoderConfig(latent_dim=-1), nx.seeded_rng(0))


def test_zero_weight_predict_is_uniform():
    model = models.build_classifier(models.ClassifierConfig(), nx.seeded_rng(0))
    for layer in model.layers:
        layer.weights[...] = 0.0
        layer.bias[...] = 0.0
    rows = model.predict(nx.seeded_rng(1).random((5, 784)))
    assert np.max(np.abs(rows - 0.1)) < 1e-15


def test_predict_deterministic():
    model = models.build_classifier(models.ClassifierConfig(), nx.seeded_rng(0))
    x = nx.seeded_rng(1).random((3, 784))
    assert np.array_equal(model.predict(x), model.predict(x))


def test_mc_dropout_rate_zero_equals_predict():
    model = models.build_classifier(models.ClassifierConfig(dropout_rate=0.0), nx.seeded_rng(0))
    x = nx.seeded_rng(1).random((1, 784))
    sample = models.mc_dropout_predict(model, x, t=8, seed=3)
    base = model.predict(x)[0]
    assert np.max(np.abs(sample.rows - base)) <= 1e-12


def test_mc_dropout_seeded_determinism():
    model = models.build_classifier(models.ClassifierConfig(), nx.seeded_rng(0))
    x = nx.seeded_rng(1).random((1, 784))
    a = models.mc_dropout_predict(model, x, t=6, seed=11)
    b = models.mc_dropout_predict(model, x, t=6, seed=11)
    assert np.array_equal(a.rows, b.rows)
    # different seeds give different sample sets
    c = models.mc_dropout_predict(model, x, t=6, seed=12)
    assert not np.array_equal(a.rows, c.rows)


def test_mc_dropout_needs_two_samples():
    model = models.build_classifier(models.ClassifierConfig(), nx.seeded_rng(0))
    with pytest.raises(ConfigError):
        models.mc_dropout_predict(model, np.zeros((1, 784)), t=1, seed=0)


def test_mc_dropout_resampling_stability(trained_classifier):
    x = np.zeros((1, 784))
    x[0, 200:260] = 1.0
    a = models.mc_dropout_rows(trained_classifier, x, t=128, seed=21)[0]
    b = models.mc_dropout_rows(trained_classifier, x, t=128, seed=22)[0]
    assert np.max(np.abs(a.mean(axis=0) - b.mean(axis=0))) < 0.05


def test_train_classifier_memorizes_one_batch():
    rng = nx.seeded_rng(4)
    x = rng.random((8, 16))
    y = np.eye(4)[rng.integers(0, 4, size=8)]
    cfg = models.ClassifierConfig(input_dim=16, hidden=(32,), class_count=4, dropout_rate=0.0)
    result = models.train_classifier(
        x, y, cfg, models.TrainConfig(epochs=300, batch_size=8, lr=1e-2,
                                      validation_fraction=0.0), seed=0)
    assert result.train_losses[-1] < 1e-3


def test_train_classifier_loss_monotone():
    rng = nx.seeded_rng(5)
    x = rng.random((64, 16))
    y = np.eye(4)[rng.integers(0, 4, size=64)]
    cfg = models.ClassifierConfig(input_dim=16, hidden=(12,), class_count=4, dropout_rate=0.2)
    result = models.train_classifier(
        x, y, cfg, models.TrainConfig(epochs=40, batch_size=16,
                                      validation_fraction=0.0), seed=0)
    losses = np.array(result.train_losses)
    assert np.all(np.diff(losses) <= 1e-12)


def test_train_classifier_deterministic():
    rng = nx.seeded_rng(6)
    x = rng.random((40, 16))
    y = np.eye(4)[rng.integers(0, 4, size=40)]
    cfg = models.ClassifierConfig(input_dim=16, hidden=(8,), class_count=4)
    tr = models.TrainConfig(epochs=5, batch_size=16)
    a = models.train_classifier(x, y, cfg, tr, seed=9)
    b = models.train_classifier(x, y, cfg, tr, seed=9)
    for la, lb in zip(a.model.layers, b.model.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.bias, lb.bias)


def test_trained_classifier_reaches_desk_accuracy(trained_classifier, corpus):
    pred = trained_classifier.predict(corpus.test_images).argmax(axis=1)
    assert np.mean(pred == corpus.test_labels) >= 0.90


def test_checkpoint_round_trip_bit_exact(tmp_path, trained_classifier):
    path = tmp_path / "clf.ambg"
    models.save_classifier(path, trained_classifier)
    loaded = models.load_classifier(path)
    x = nx.seeded_rng(2).random((4, 784))
    assert np.array_equal(loaded.predict(x), trained_classifier.predict(x))
    assert loaded.dropout_rate == trained_classifier.dropout_rate


def test_autoencoder_checkpoint_round_trip(tmp_path):
    ae = models.build_autoencoder(
        models.AutoencoderConfig(input_dim=16, encoder_hidden=(8,), latent_dim=3),
        nx.seeded_rng(0))
    path = tmp_path / "ae.ambg"
    models.save_autoencoder(path, ae)
    loaded = models.load_autoencoder(path)
    x = nx.seeded_rng(1).random((5, 16))
    assert np.array_equal(loaded.reconstruct(x), ae.reconstruct(x))
    assert loaded.latent_dim == 3


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ambg"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        models.load_layer_container(path)


def test_checkpoint_truncated(tmp_path, trained_classifier):
    path = tmp_path / "trunc.ambg"
    models.save_classifier(path, trained_classifier)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError, match="offset"):
        models.load_layer_container(path)


def test_trace_shapes(trained_classifier):
    x = nx.seeded_rng(3).random((6, 784))
    trace = trained_classifier.trace(x)
    assert len(trace.layer_activations) == trained_classifier.hidden_count
    assert trace.softmax_rows.shape == (6, 10)
    assert trace.predicted.shape == (6,)

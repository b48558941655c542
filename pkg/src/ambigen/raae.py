"""2-class regularized adversarial autoencoders.

The encoder is adversarially pushed to map each of the two classes onto its
own latent Gaussian mode, leaving empty space between the modes.  A
conditional discriminator scores how much a latent point looks like an
encoded real image of a given class; normalizing its two class scores yields
a probabilistic label for anything the decoder produces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UnlabelablePointError
from . import models
from . import numerics as nx
from .numerics import Tensor

DEFAULT_DISJOINT_EPS = 2e-3


@dataclass(frozen=True)
class ClassPair:
    """Canonically ordered pair of class indices (c1 < c2)."""

    c1: int
    c2: int
    dataset: str = ""

    def __post_init__(self):
        if self.c1 >= self.c2:
            raise ConfigError(f"class pair must satisfy c1 < c2, got ({self.c1}, {self.c2})")

    @property
    def name(self) -> str:
        tag = f"{self.dataset}_" if self.dataset else ""
        return f"{tag}pair{self.c1}-{self.c2}"


@dataclass
class LatentPrior:
    """Per-class diagonal Gaussian modes; rows ordered (c1, c2)."""

    means: Tensor  # [2 x d]
    stds: Tensor   # [2 x d]

    def __post_init__(self):
        self.means = nx.tensor(self.means)
        self.stds = nx.tensor(self.stds)
        if self.means.shape != self.stds.shape or self.means.ndim != 2 or self.means.shape[0] != 2:
            raise ConfigError("prior needs [2 x d] means and stds")
        if np.any(self.stds < 0):
            raise ConfigError("prior stds must be nonnegative")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def high_density_radius(self, side: int, eps: float) -> float:
        """Mahalanobis radius of the region where the mode's density exceeds eps."""
        d = self.dim
        sigma = self.stds[side]
        if np.any(sigma == 0):
            return 0.0
        log_norm = -0.5 * d * np.log(2.0 * np.pi) - np.sum(np.log(sigma))
        r2 = 2.0 * (log_norm - np.log(eps))
        return float(np.sqrt(r2)) if r2 > 0 else 0.0

    def modes_disjoint(self, eps: float = DEFAULT_DISJOINT_EPS) -> bool:
        """Analytic disjointness of the two high-density ellipsoids.

        Exact for equal per-axis stds (Mahalanobis mean distance vs summed
        radii); for unequal stds a conservative axis-separation test is used.
        """
        r1 = self.high_density_radius(0, eps)
        r2 = self.high_density_radius(1, eps)
        if np.allclose(self.stds[0], self.stds[1]):
            sigma = np.where(self.stds[0] > 0, self.stds[0], 1.0)
            dist = np.linalg.norm((self.means[0] - self.means[1]) / sigma)
            return bool(dist > r1 + r2)
        lo0, hi0 = self.means[0] - r1 * self.stds[0], self.means[0] + r1 * self.stds[0]
        lo1, hi1 = self.means[1] - r2 * self.stds[1], self.means[1] + r2 * self.stds[1]
        return bool(np.any((hi0 < lo1) | (hi1 < lo0)))


def default_prior(dim: int = 2) -> LatentPrior:
    """Modes at (-3, 0, ...) and (3, 0, ...) with unit std."""
    means = np.zeros((2, dim))
    means[0, 0], means[1, 0] = -3.0, 3.0
    return LatentPrior(means, np.ones((2, dim)))


def sample_prior(prior: LatentPrior, side: int, n: int, seed: int) -> Tensor:
    """n i.i.d. draws from one mode; ``side`` is 0 for c1, 1 for c2."""
    if side not in (0, 1):
        raise ConfigError(f"side must be 0 or 1, got {side}")
    rng = nx.seeded_rng(seed)
    return prior.means[side] + prior.stds[side] * rng.standard_normal((n, prior.dim))


def _sample_prior_rows(prior: LatentPrior, sides: Tensor, rng: np.random.Generator) -> Tensor:
    noise = rng.standard_normal((len(sides), prior.dim))
    return prior.means[sides] + prior.stds[sides] * noise


@dataclass
class ValidationVerdict:
    real_fake_accuracy: float
    class_accuracy: float
    accepted: bool


@dataclass
class RaaeModel:
    pair: ClassPair
    autoencoder: models.AutoencoderModel
    discriminator: list[nx.DenseLayer]
    prior: LatentPrior
    verdict: ValidationVerdict | None = None

    def encode(self, images: Tensor) -> Tensor:
        return self.autoencoder.encode(images)

    def decode(self, zs: Tensor) -> Tensor:
        return self.autoencoder.decode(zs)

    def disc_scores(self, zs: Tensor, side: int) -> Tensor:
        """Sigmoid scores of latent points under one class condition.

        The discriminator is trained with prior draws as the positive class,
        so its sigmoid output approximates the imposed density p(z|class) and
        is directly usable for labelling.
        """
        zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        cond = np.zeros((zs.shape[0], 2))
        cond[:, side] = 1.0
        logits = nx.forward_stack(self.discriminator, np.concatenate([zs, cond], axis=1))
        return nx.sigmoid(logits[:, 0])


@dataclass(frozen=True)
class ProbabilisticLabel:
    """Two-class probability pair; embeds into a C-vector with zeros elsewhere."""

    p_c1: float
    p_c2: float
    pair: ClassPair

    def embed(self, class_count: int) -> Tensor:
        if self.pair.c2 >= class_count:
            raise DimensionError(f"pair {self.pair} does not fit into {class_count} classes")
        row = np.zeros(class_count)
        row[self.pair.c1] = self.p_c1
        row[self.pair.c2] = self.p_c2
        return row

    @property
    def truly_ambiguous(self) -> bool:
        return self.p_c1 > 0 and self.p_c2 > 0

    @property
    def difference(self) -> float:
        return abs(self.p_c1 - self.p_c2)


def normalize_score_pair(s1: float, s2: float) -> tuple[float, float]:
    """Scale two nonnegative scores so they sum to 1."""
    total = s1 + s2
    if total < 1e-12:
        raise UnlabelablePointError("both discriminator scores below 1e-12")
    return s1 / total, s2 / total


def probabilistic_label(model: RaaeModel, z: Tensor) -> ProbabilisticLabel:
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    s1 = float(model.disc_scores(z, 0)[0])
    s2 = float(model.disc_scores(z, 1)[0])
    p1, p2 = normalize_score_pair(s1, s2)
    return ProbabilisticLabel(p1, p2, model.pair)


def probabilistic_label_rows(model: RaaeModel, zs: Tensor) -> tuple[Tensor, Tensor]:
    """Batch labelling: [n x 2] probability rows plus a labelable mask.

    Points whose raw scores both vanish get a False mask entry instead of an
    exception, so callers can zero them out (plan building treats them as
    invalid regions).
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    s1 = model.disc_scores(zs, 0)
    s2 = model.disc_scores(zs, 1)
    total = s1 + s2
    ok = total >= 1e-12
    safe = np.where(ok, total, 1.0)
    return np.stack([s1 / safe, s2 / safe], axis=1), ok


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaaeTrainConfig:
    epochs: int = 80
    batch_size: int = 128
    recon_lr: float = 1e-3
    disc_lr: float = 5e-4
    gen_lr: float = 1e-3
    adversarial: bool = True
    autoencoder: models.AutoencoderConfig = models.AutoencoderConfig()
    disc_hidden: tuple[int, ...] = (64, 64)


def _balance_pair(local_y: Tensor, rng: np.random.Generator) -> Tensor:
    """Indices subsampling the larger class so p(c1) = p(c2) = 0.5 holds."""
    idx0 = np.flatnonzero(local_y == 0)
    idx1 = np.flatnonzero(local_y == 1)
    count = min(len(idx0), len(idx1))
    keep0 = rng.permutation(idx0)[:count]
    keep1 = rng.permutation(idx1)[:count]
    return np.sort(np.concatenate([keep0, keep1]))


def train_raae(images: Tensor, labels: Tensor, pair: ClassPair,
               prior: LatentPrior | None = None,
               config: RaaeTrainConfig = RaaeTrainConfig(),
               seed: int = 0) -> RaaeModel:
    """Three interleaved objectives per mini-batch, in fixed order:

    1. encoder+decoder minimize reconstruction error,
    2. the discriminator separates encoded (real-image, label) pairs from
       class-conditional prior draws,
    3. the encoder is updated to make its encodings pass for prior draws.

    Returns a model whose validation verdict is still unset.
    """
    x = models.flatten_images(images)
    labels = np.asarray(labels)
    if np.any((labels != pair.c1) & (labels != pair.c2)):
        raise ConfigError("pair data contains classes outside the pair")
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ConfigError("pixel values must lie in [0, 1]")
    prior = prior if prior is not None else default_prior(config.autoencoder.latent_dim)
    if prior.dim != config.autoencoder.latent_dim:
        raise ConfigError("prior dimension does not match the latent dimension")

    local_y = (labels == pair.c2).astype(np.int64)
    keep = _balance_pair(local_y, nx.seeded_rng(seed, 5))
    x, local_y = x[keep], local_y[keep]

    rng_shuffle = nx.seeded_rng(seed, 3)
    rng_prior = nx.seeded_rng(seed, 4)
    ae = models.build_autoencoder(config.autoencoder, nx.seeded_rng(seed, 0))
    disc = models.build_discriminator(
        models.DiscriminatorConfig(latent_dim=config.autoencoder.latent_dim,
                                   hidden=config.disc_hidden),
        nx.seeded_rng(seed, 2))

    ae_layers = ae.encoder + ae.decoder
    ae_params = nx.layer_params(ae_layers)
    enc_params = nx.layer_params(ae.encoder)
    disc_params = nx.layer_params(disc)
    adam_ae = nx.AdamState(lr=config.recon_lr)
    adam_disc = nx.AdamState(lr=config.disc_lr)
    adam_gen = nx.AdamState(lr=config.gen_lr)

    n = x.shape[0]
    one_hot = np.eye(2)
    for epoch in range(config.epochs):
        perm = rng_shuffle.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            xb, yb = x[idx], local_y[idx]
            cond = one_hot[yb]
            try:
                # 1. reconstruction
                _, grads = nx.loss_and_gradients(ae_layers, xb, xb, "mse")
                nx.adam_update(adam_ae, ae_params, nx.flatten_grads(grads))
                if not config.adversarial:
                    continue

                # 2. discriminator: prior draws (1) vs encoded pairs (0), so its
                #    sigmoid approximates the prior density under the condition
                z_real = ae.encode(xb)
                z_prior = _sample_prior_rows(prior, yb, rng_prior)
                disc_in = np.concatenate([
                    np.concatenate([z_prior, cond], axis=1),
                    np.concatenate([z_real, cond], axis=1),
                ])
                targets = np.concatenate([np.ones(len(idx)), np.zeros(len(idx))])[:, None]
                _, grads = nx.loss_and_gradients(disc, disc_in, targets, "binary-cross-entropy")
                nx.adam_update(adam_disc, disc_params, nx.flatten_grads(grads))

                # 3. encoder fools the discriminator: encodings should pass for
                #    prior draws (non-saturating generator objective)
                tape = nx.GradientTape()
                x_node = tape.leaf(xb, "input")
                z_node, enc_nodes = nx.stack_on_tape(tape, ae.encoder, x_node, prefix="enc")
                zc = tape.concat(z_node, tape.leaf(cond, "cond"))
                logit, _ = nx.stack_on_tape(tape, disc, zc, prefix="disc")
                loss = tape.bce_logits_loss(logit, np.ones((len(idx), 1)), "fool")
                if not np.isfinite(loss.value):
                    raise NumericError("non-finite adversarial loss")
                flat = tape.gradients(loss, [p for pair_ in enc_nodes for p in pair_])
                nx.adam_update(adam_gen, enc_params, flat)
            except NumericError as err:
                raise NumericError(f"rAAE training diverged at epoch {epoch}: {err}") from err

    return RaaeModel(pair, ae, disc, prior)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _real_fake_accuracy(encoded_scores: Tensor, prior_scores: Tensor) -> float:
    """Threshold-0.5 accuracy at telling prior draws (high) from encoded points."""
    hits = np.count_nonzero(prior_scores > 0.5) + np.count_nonzero(encoded_scores <= 0.5)
    return hits / (len(encoded_scores) + len(prior_scores))


def _class_accuracy(p_c1: Tensor, p_c2: Tensor, local_y: Tensor) -> float:
    """Fraction of points whose true class gets the strictly higher probability."""
    p_true = np.where(local_y == 0, p_c1, p_c2)
    p_other = np.where(local_y == 0, p_c2, p_c1)
    return float(np.mean(p_true > p_other))


def validate_raae(model: RaaeModel, images: Tensor, labels: Tensor, seed: int = 0) -> ValidationVerdict:
    """Acceptance gate: real-vs-prior accuracy in [0.4, 0.6], class accuracy > 0.9."""
    x = models.flatten_images(images)
    labels = np.asarray(labels)
    local_y = (labels == model.pair.c2).astype(np.int64)
    z = model.encode(x)

    sides = np.concatenate([np.zeros(np.count_nonzero(local_y == 0), dtype=np.int64),
                            np.ones(np.count_nonzero(local_y == 1), dtype=np.int64)])
    z_prior = _sample_prior_rows(model.prior, sides, nx.seeded_rng(seed, 0))
    real_scores = np.empty(len(x))
    for side in (0, 1):
        mask = local_y == side
        real_scores[mask] = model.disc_scores(z[mask], side)
    prior_scores = np.empty(len(sides))
    for side in (0, 1):
        mask = sides == side
        prior_scores[mask] = model.disc_scores(z_prior[mask], side)
    rf = _real_fake_accuracy(real_scores, prior_scores)

    rows, ok = probabilistic_label_rows(model, z)
    ca = _class_accuracy(np.where(ok, rows[:, 0], 0.5), np.where(ok, rows[:, 1], 0.5), local_y)

    verdict = ValidationVerdict(float(rf), float(ca),
                                bool(0.4 <= rf <= 0.6 and ca > 0.9))
    model.verdict = verdict
    return verdict


# ---------------------------------------------------------------------------
# Checkpoints (models-module container + JSON metadata sidecar)
# ---------------------------------------------------------------------------

def save_raae(path, model: RaaeModel) -> None:
    ae = model.autoencoder
    layers = ae.encoder + ae.decoder + model.discriminator
    models.save_layer_container(path, layers)
    meta = {
        "kind": "raae",
        "pair": {"c1": model.pair.c1, "c2": model.pair.c2, "dataset": model.pair.dataset},
        "prior": {"means": model.prior.means.tolist(), "stds": model.prior.stds.tolist()},
        "latent_dim": ae.latent_dim,
        "encoder_layers": len(ae.encoder),
        "decoder_layers": len(ae.decoder),
        "verdict": asdict(model.verdict) if model.verdict else None,
    }
    models._write_sidecar(path, meta)


def load_raae(path) -> RaaeModel:
    meta = models._read_sidecar(path)
    if meta.get("kind") != "raae":
        raise ConfigError(f"sidecar kind {meta.get('kind')!r} is not an rAAE")
    layers = models.load_layer_container(path)
    n_enc, n_dec = int(meta["encoder_layers"]), int(meta["decoder_layers"])
    ae = models.AutoencoderModel(layers[:n_enc], layers[n_enc:n_enc + n_dec],
                                 int(meta["latent_dim"]))
    disc = layers[n_enc + n_dec:]
    pair = ClassPair(**meta["pair"])
    prior = LatentPrior(np.array(meta["prior"]["means"]), np.array(meta["prior"]["stds"]))
    verdict = ValidationVerdict(**meta["verdict"]) if meta.get("verdict") else None
    return RaaeModel(pair, ae, disc, prior, verdict)

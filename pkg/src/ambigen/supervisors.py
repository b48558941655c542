"""Misclassification-detection supervisors.

Every scorer produces one finite score per input under a single orientation:
higher score means more suspicious input.  Confidence-style quantities are
therefore complemented (e.g. max-softmax confidence c becomes score 1 - c).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import ConfigError, FitError
from . import models
from . import numerics as nx
from .metrics import row_entropy
from .models import BatchTrace, ClassifierModel, DropoutSampleSet
from .numerics import Tensor

SUPERVISOR_NAMES = (
    "max_softmax", "pcs", "softmax_entropy", "deepgini",
    "mc_vr", "mc_ms", "mc_mi", "mc_pe",
    "ens_ms", "ens_mi", "ens_pe",
    "dissector", "dsa", "lsa", "mdsa", "autoencoder",
)


@dataclass
class ScoreVector:
    supervisor: str
    scores: Tensor
    orientation: str = "higher = suspicious"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise ConfigError(f"non-finite scores from {self.supervisor}")


# ---------------------------------------------------------------------------
# Plain softmax supervisors
# ---------------------------------------------------------------------------

def _rows(softmax_rows: Tensor) -> Tensor:
    rows = np.atleast_2d(np.asarray(softmax_rows, dtype=np.float64))
    return rows


def max_softmax(softmax_rows: Tensor) -> Tensor:
    """1 - max(p): the complement of the top confidence."""
    return 1.0 - _rows(softmax_rows).max(axis=-1)


def pcs(softmax_rows: Tensor) -> Tensor:
    """1 - (p(1) - p(2)): complement of the gap between the two best classes."""
    rows = np.sort(_rows(softmax_rows), axis=-1)
    return 1.0 - (rows[:, -1] - rows[:, -2])


def softmax_entropy(softmax_rows: Tensor) -> Tensor:
    """Natural-log entropy of the softmax row."""
    return row_entropy(_rows(softmax_rows))


def deepgini(softmax_rows: Tensor) -> Tensor:
    """1 - sum(p^2): complement of the squared norm."""
    rows = _rows(softmax_rows)
    return 1.0 - np.sum(rows * rows, axis=-1)


# ---------------------------------------------------------------------------
# Sample-based quantifiers (MC-Dropout, ensembles)
# ---------------------------------------------------------------------------

@dataclass
class SampleScores:
    vr: float | Tensor | None
    ms: float | Tensor
    mi: float | Tensor
    pe: float | Tensor


def _sample_quantifiers(sample_rows: Tensor, with_vr: bool) -> SampleScores:
    """Quantifiers over [N x T x C] sample rows."""
    mean_rows = sample_rows.mean(axis=1)
    pe = row_entropy(mean_rows)
    mi = pe - row_entropy(sample_rows).mean(axis=1)
    ms = 1.0 - mean_rows.max(axis=-1)
    vr = None
    if with_vr:
        t = sample_rows.shape[1]
        votes = sample_rows.argmax(axis=-1)  # ties toward the lowest class index
        counts = np.apply_along_axis(np.bincount, 1, votes, minlength=sample_rows.shape[2])
        vr = 1.0 - counts.max(axis=1) / t
    return SampleScores(vr, ms, mi, pe)


def mc_scores(sample_set: DropoutSampleSet) -> SampleScores:
    """VR, MS, MI, PE for one input's dropout sample set."""
    if sample_set.sample_count < 2:
        raise ConfigError("mc_scores needs T >= 2 sample rows")
    s = _sample_quantifiers(sample_set.rows[None, :, :], with_vr=True)
    return SampleScores(float(s.vr[0]), float(s.ms[0]), float(s.mi[0]), float(s.pe[0]))


def mc_scores_rows(sample_rows: Tensor) -> SampleScores:
    """Batch variant over [N x T x C] dropout sample rows."""
    sample_rows = np.asarray(sample_rows, dtype=np.float64)
    if sample_rows.ndim != 3 or sample_rows.shape[1] < 2:
        raise ConfigError("expect [N x T x C] rows with T >= 2")
    return _sample_quantifiers(sample_rows, with_vr=True)


def ensemble_scores(member_models: list[ClassifierModel], images: Tensor) -> SampleScores:
    """MS, MI, PE over per-member softmax rows (same formulas as MC-Dropout)."""
    if len(member_models) < 2:
        raise ConfigError("an ensemble needs at least 2 models")
    rows = np.stack([m.predict(images) for m in member_models], axis=1)
    return _sample_quantifiers(rows, with_vr=False)


# ---------------------------------------------------------------------------
# Dissector
# ---------------------------------------------------------------------------

@dataclass
class DissectorState:
    """One linear-softmax submodel per hidden layer plus linear layer weights."""

    submodels: list[list[nx.DenseLayer]]
    layer_weights: Tensor


def fit_dissector(model: ClassifierModel, images: Tensor, hard_labels: Tensor,
                  seed: int = 0, epochs: int = 8, batch_size: int = 256,
                  lr: float = 1e-3) -> DissectorState:
    """Train a label-predicting perceptron on each hidden layer's activations."""
    trace = model.trace(images)
    hard_labels = np.asarray(hard_labels, dtype=np.int64)
    targets = np.eye(model.class_count)[hard_labels]
    submodels = []
    for li, acts in enumerate(trace.layer_activations):
        rng = nx.seeded_rng(seed, li)
        layer = [nx.init_dense(rng, acts.shape[1], model.class_count, "identity")]
        params = nx.layer_params(layer)
        adam = nx.AdamState(lr=lr)
        n = acts.shape[0]
        shuffle = nx.seeded_rng(seed, li, 1)
        for _ in range(epochs):
            perm = shuffle.permutation(n)
            for lo in range(0, n, batch_size):
                idx = perm[lo:lo + batch_size]
                _, grads = nx.loss_and_gradients(layer, acts[idx], targets[idx],
                                                 "soft-cross-entropy")
                nx.adam_update(adam, params, nx.flatten_grads(grads))
        submodels.append(layer)
    depth = len(submodels)
    weights = np.arange(1, depth + 1, dtype=np.float64) / depth
    return DissectorState(submodels, weights)


def dissector_support(submodel_rows: Tensor, predicted: Tensor) -> Tensor:
    """Support of one submodel for the final prediction.

    The submodel's probability of the predicted class, renormalized against
    the strongest competing class: p / (p + max_other).
    """
    n = len(predicted)
    p_pred = submodel_rows[np.arange(n), predicted]
    masked = submodel_rows.copy()
    masked[np.arange(n), predicted] = -np.inf
    p_best_other = masked.max(axis=1)
    return p_pred / (p_pred + p_best_other)


def dissector_score(state: DissectorState, trace: BatchTrace) -> Tensor:
    """1 - weighted mean of per-layer support values (weights grow with depth)."""
    if len(state.submodels) != len(trace.layer_activations):
        raise ConfigError("trace depth does not match the fitted submodels")
    supports = []
    for layer, acts in zip(state.submodels, trace.layer_activations):
        rows = nx.softmax(nx.forward_stack(layer, acts))
        supports.append(dissector_support(rows, trace.predicted))
    stacked = np.stack(supports, axis=0)
    validity = (state.layer_weights[:, None] * stacked).sum(axis=0) / state.layer_weights.sum()
    return 1.0 - validity


# ---------------------------------------------------------------------------
# Surprise adequacy (LSA, MDSA, DSA) on the last hidden layer
# ---------------------------------------------------------------------------

SURPRISE_VARIANTS = ("LSA", "MDSA", "DSA")
_VAR_FLOOR = 1e-6          # activation dimensions below this std are dropped
_COV_RIDGE = 1e-6          # trace-scaled identity added to covariances
DSA_SAMPLE_FRACTION = 0.3  # retained share of training activations for DSA


@dataclass
class SurpriseFitState:
    variant: str
    kept_dims: Tensor
    class_count: int
    # LSA: per-class (whitened pool, log normalization constant, Cholesky factor)
    kde: list[tuple[Tensor, float, Tensor] | None] | None = None
    # MDSA: per-class (mean, inverse-covariance Cholesky factor)
    mahalanobis: list[tuple[Tensor, Tensor] | None] | None = None
    # DSA: retained activations, their labels, per-point nearest-other distance
    pool: Tensor | None = None
    pool_labels: Tensor | None = None
    pool_other_dist: Tensor | None = None


def _surprise_layer(trace: BatchTrace) -> Tensor:
    return trace.layer_activations[-1]


def _ridge_cov(acts: Tensor) -> Tensor:
    cov = np.cov(acts, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    scale = np.trace(cov) / cov.shape[0]
    return cov + _COV_RIDGE * (scale if scale > 0 else 1.0) * np.eye(cov.shape[0])


def fit_surprise(model: ClassifierModel, images: Tensor, hard_labels: Tensor,
                 variant: str, seed: int = 0) -> SurpriseFitState:
    """Collect per-class training activations at the last hidden layer."""
    if variant not in SURPRISE_VARIANTS:
        raise ConfigError(f"unknown surprise variant {variant!r}")
    hard_labels = np.asarray(hard_labels, dtype=np.int64)
    acts = _surprise_layer(model.trace(images))
    kept = np.flatnonzero(acts.std(axis=0) > _VAR_FLOOR)
    if kept.size == 0:
        raise FitError("all activation dimensions are (near-)constant")
    acts = acts[:, kept]
    state = SurpriseFitState(variant, kept, model.class_count)

    if variant == "DSA":
        rng = nx.seeded_rng(seed)
        n_keep = max(2, int(round(DSA_SAMPLE_FRACTION * len(acts))))
        idx = np.sort(rng.permutation(len(acts))[:n_keep])
        pool, pool_labels = acts[idx], hard_labels[idx]
        if len(np.unique(pool_labels)) < 2:
            raise FitError("DSA needs activations from at least 2 classes")
        other = np.full(len(pool), np.inf)
        for lo in range(0, len(pool), 512):
            dists = cdist(pool[lo:lo + 512], pool)
            same = pool_labels[lo:lo + 512, None] == pool_labels[None, :]
            dists[same] = np.inf
            other[lo:lo + 512] = dists.min(axis=1)
        state.pool, state.pool_labels, state.pool_other_dist = pool, pool_labels, other
        return state

    per_class: list = [None] * model.class_count
    for c in range(model.class_count):
        pool = acts[hard_labels == c]
        if len(pool) < 2:
            raise FitError(f"class {c} pool has fewer than 2 activations")
        per_class[c] = pool
    if variant == "MDSA":
        state.mahalanobis = []
        for pool in per_class:
            cov = _ridge_cov(pool)
            chol = np.linalg.cholesky(np.linalg.inv(cov))
            state.mahalanobis.append((pool.mean(axis=0), chol))
        return state

    # LSA: Gaussian KDE with Scott's-rule bandwidth over the class pool
    state.kde = []
    for pool in per_class:
        n, d = pool.shape
        factor = n ** (-1.0 / (d + 4))
        kernel_cov = _ridge_cov(pool) * factor**2
        chol = np.linalg.cholesky(kernel_cov)
        white = _tri_solve(chol, pool)
        log_norm = -np.log(n) - 0.5 * d * np.log(2 * np.pi) - np.sum(np.log(np.diag(chol)))
        state.kde.append((white, float(log_norm), chol))
    return state


def _tri_solve(chol: Tensor, rows: Tensor) -> Tensor:
    """Whiten rows against a lower-triangular Cholesky factor."""
    return solve_triangular(chol, rows.T, lower=True).T


def surprise_score(state: SurpriseFitState, trace: BatchTrace) -> Tensor:
    acts = _surprise_layer(trace)[:, state.kept_dims]
    predicted = trace.predicted
    scores = np.empty(len(acts))

    if state.variant == "DSA":
        for c in np.unique(predicted):
            mask = predicted == c
            same = state.pool_labels == c
            if not np.any(same):
                raise FitError(f"no pool activations for predicted class {c}")
            dists = cdist(acts[mask], state.pool[same])
            nearest = dists.argmin(axis=1)
            dist_a = dists[np.arange(len(nearest)), nearest]
            dist_b = state.pool_other_dist[np.flatnonzero(same)[nearest]]
            scores[mask] = dist_a / np.maximum(dist_b, 1e-12)
        return scores

    if state.variant == "MDSA":
        for c in np.unique(predicted):
            mask = predicted == c
            mean, chol = state.mahalanobis[c]
            diff = (acts[mask] - mean) @ chol
            scores[mask] = np.sqrt(np.sum(diff * diff, axis=1))
        return scores

    for c in np.unique(predicted):
        mask = predicted == c
        white, log_norm, chol = state.kde[c]
        test_white = _tri_solve(chol, acts[mask])
        sq = cdist(test_white, white, metric="sqeuclidean")
        log_density = logsumexp(-0.5 * sq, axis=1) + log_norm
        scores[mask] = -log_density
    return scores


# ---------------------------------------------------------------------------
# Autoencoder reconstruction error
# ---------------------------------------------------------------------------

def autoencoder_score(ae: models.AutoencoderModel, images: Tensor, batch: int = 1024) -> Tensor:
    """Mean per-pixel squared reconstruction error."""
    x = models.flatten_images(images)
    scores = np.empty(len(x))
    for lo in range(0, len(x), batch):
        xb = x[lo:lo + batch]
        diff = ae.reconstruct(xb) - xb
        scores[lo:lo + batch] = np.mean(diff * diff, axis=1)
    return scores

"""End-to-end pipeline: train rAAEs, generate ambiguous datasets, train
classifiers, score the four test-set families with every supervisor, and
render report tables.

Everything is a pure function of (config, input files): seeds are explicit,
machine outputs carry no timestamps, and every artifact embeds the config
digest so reports refuse to mix runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AmbigenError, ConfigError, EmptyPlanError, SampleBudgetError
from . import datasets, metrics, models, raae, sampler, supervisors, synth
from . import numerics as nx
from .numerics import Tensor, derive_seed

log = logging.getLogger("ambigen")

CONFIG_VERSION = 1

FAMILIES = ("ambiguous", "adversarial", "corrupted", "invalid")

# seed-path tags; every task derives its stream from (seed, tag, *indices)
_T_RAAE, _T_HOLDOUT, _T_DRAW, _T_CLS, _T_ENS, _T_AE = 1, 2, 3, 4, 5, 6
_T_MC, _T_MIX, _T_DISSECTOR, _T_SURPRISE, _T_CAP, _T_VALIDATE, _T_CORRUPT = 7, 8, 9, 10, 11, 12, 13


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class DatasetPaths:
    name: str
    class_count: int
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    foreign_test_images: str | None = None


@dataclass
class GenerationConfig:
    models_per_pair: int = 5
    epochs: int = 80
    batch_size: int = 128
    latent_dim: int = 2
    prior_means: list = field(default_factory=lambda: [[-3.0, 0.0], [3.0, 0.0]])
    prior_stds: list = field(default_factory=lambda: [[1.0, 1.0], [1.0, 1.0]])
    grid: tuple[int, int] = (40, 40)
    delta_max_train: float = 0.4
    delta_max_test: float = 0.25
    train_rows: int = 5000
    test_rows: int = 1000
    holdout_fraction: float = 0.2
    max_pair_images: int = 3000
    recon_lr: float = 1e-3
    disc_lr: float = 5e-4
    gen_lr: float = 1e-3


@dataclass
class ClassifierBenchConfig:
    architectures: list = field(default_factory=lambda: [
        {"name": "dense-256-128", "hidden": [256, 128]},
        {"name": "dense-128-64", "hidden": [128, 64]},
    ])
    repetitions: int = 3
    epochs: int = 30
    batch_size: int = 128
    dropout_rate: float = 0.5
    lr: float = 1e-3


@dataclass
class AttackConfig:
    fgsm_eps: float = 0.2
    pgd_eps: float = 0.2
    pgd_step: float = 0.02
    pgd_iters: int = 20


@dataclass
class SupervisorAeConfig:
    latent_dim: int = 32
    epochs: int = 15
    batch_size: int = 128


@dataclass
class BenchConfig:
    seed: int
    output_dir: str
    dataset: DatasetPaths
    pairs: list[raae.ClassPair]
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    classifier: ClassifierBenchConfig = field(default_factory=ClassifierBenchConfig)
    supervisors: tuple[str, ...] = supervisors.SUPERVISOR_NAMES
    ensemble_size: int = 5
    mc_samples: int = 32
    attacks: AttackConfig = field(default_factory=AttackConfig)
    corruptions: list = field(default_factory=lambda: [
        {"kind": k, "severity": 3} for k in datasets.CORRUPTION_KINDS])
    supervisor_ae: SupervisorAeConfig = field(default_factory=SupervisorAeConfig)
    jobs: int = 1
    raw: dict = field(default_factory=dict, repr=False)

    def digest(self) -> str:
        """Identity of the run; excludes output location and worker count."""
        payload = {k: v for k, v in self.raw.items() if k not in ("output_dir", "jobs")}
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _take(section: dict, context: str, required: tuple = (), optional: dict | None = None) -> dict:
    """Strict key extraction: unknown keys are configuration errors."""
    optional = optional or {}
    unknown = set(section) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    missing = [k for k in required if k not in section]
    if missing:
        raise ConfigError(f"missing {context} keys: {missing}")
    out = dict(optional)
    out.update(section)
    return out


def load_config(path_or_dict, overrides: dict | None = None) -> BenchConfig:
    """Parse and validate a JSON config; referenced paths must already exist."""
    if isinstance(path_or_dict, dict):
        raw = dict(path_or_dict)
    else:
        with open(path_or_dict) as f:
            raw = json.load(f)
    raw.update(overrides or {})

    top = _take(raw, "config",
                required=("version", "seed", "output_dir", "dataset", "pairs"),
                optional={"generation": {}, "classifier": {}, "supervisors": None,
                          "ensemble_size": 5, "mc_samples": 32, "attacks": {},
                          "corruptions": None, "supervisor_ae": {}, "jobs": 1})
    if top["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {top['version']}")

    ds = _take(top["dataset"], "dataset",
               required=("name", "class_count", "train_images", "train_labels",
                         "test_images", "test_labels"),
               optional={"foreign_test_images": None})
    dataset = DatasetPaths(**ds)
    for key in ("train_images", "train_labels", "test_images", "test_labels",
                "foreign_test_images"):
        p = getattr(dataset, key)
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"dataset.{key} path does not exist: {p}")

    pairs = []
    for entry in top["pairs"]:
        if len(entry) != 2:
            raise ConfigError(f"pair {entry} must have exactly 2 classes")
        c1, c2 = int(entry[0]), int(entry[1])
        if c1 == c2:
            raise ConfigError(f"pair classes must differ, got {entry}")
        if not (0 <= c1 < dataset.class_count and 0 <= c2 < dataset.class_count):
            raise ConfigError(f"pair {entry} outside class range")
        pairs.append(raae.ClassPair(min(c1, c2), max(c1, c2), dataset.name))
    if not pairs:
        raise ConfigError("at least one class pair is required")

    gen = GenerationConfig(**_take(top["generation"], "generation", optional={
        f.name: getattr(GenerationConfig(), f.name)
        for f in GenerationConfig.__dataclass_fields__.values()}))
    gen.grid = tuple(gen.grid)
    cls = ClassifierBenchConfig(**_take(top["classifier"], "classifier", optional={
        f.name: getattr(ClassifierBenchConfig(), f.name)
        for f in ClassifierBenchConfig.__dataclass_fields__.values()}))
    atk = AttackConfig(**_take(top["attacks"], "attacks", optional={
        f.name: getattr(AttackConfig(), f.name)
        for f in AttackConfig.__dataclass_fields__.values()}))
    sae = SupervisorAeConfig(**_take(top["supervisor_ae"], "supervisor_ae", optional={
        f.name: getattr(SupervisorAeConfig(), f.name)
        for f in SupervisorAeConfig.__dataclass_fields__.values()}))

    sup = tuple(top["supervisors"]) if top["supervisors"] else supervisors.SUPERVISOR_NAMES
    unknown = set(sup) - set(supervisors.SUPERVISOR_NAMES)
    if unknown:
        raise ConfigError(f"unknown supervisors: {sorted(unknown)}")

    corr = top["corruptions"]
    if corr is None:
        corr = [{"kind": k, "severity": 3} for k in datasets.CORRUPTION_KINDS]
    for c in corr:
        _take(c, "corruption", required=("kind", "severity"))
        if c["kind"] not in datasets.CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {c['kind']!r}")

    return BenchConfig(
        seed=int(top["seed"]), output_dir=str(top["output_dir"]), dataset=dataset,
        pairs=pairs, generation=gen, classifier=cls, supervisors=sup,
        ensemble_size=int(top["ensemble_size"]), mc_samples=int(top["mc_samples"]),
        attacks=atk, corruptions=corr, supervisor_ae=sae, jobs=int(top["jobs"]),
        raw=raw)


def default_config_dict(dataset_paths: dict, output_dir: str, seed: int = 20260810,
                        pairs=((3, 8), (4, 9), (0, 6))) -> dict:
    return {
        "version": CONFIG_VERSION,
        "seed": seed,
        "output_dir": output_dir,
        "dataset": {"name": "digits", "class_count": 10, **dataset_paths},
        "pairs": [list(p) for p in pairs],
    }


# ---------------------------------------------------------------------------
# Task pool: bounded workers, deterministic merge by task key
# ---------------------------------------------------------------------------

def run_tasks(tasks: dict, jobs: int = 1) -> dict:
    """Run keyed thunks on a bounded pool; results come back in key order."""
    if jobs <= 1 or len(tasks) <= 1:
        return {key: tasks[key]() for key in sorted(tasks)}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {key: pool.submit(fn) for key, fn in tasks.items()}
        return {key: futures[key].result() for key in sorted(futures)}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _out(config: BenchConfig, *parts: str) -> str:
    path = os.path.join(config.output_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_nominal(config: BenchConfig):
    ds = config.dataset
    return (datasets.load_idx(ds.train_images), datasets.load_idx(ds.train_labels),
            datasets.load_idx(ds.test_images), datasets.load_idx(ds.test_labels))


def _check_digest(config: BenchConfig, meta_path: str) -> bool:
    if not os.path.exists(meta_path):
        return False
    with open(meta_path) as f:
        return json.load(f).get("config_digest") == config.digest()


def _mark_digest(config: BenchConfig, meta_path: str) -> None:
    _write_json(meta_path, {"config_digest": config.digest()})


# ---------------------------------------------------------------------------
# generate: rAAEs -> sampling plans -> ambiguous IDX datasets
# ---------------------------------------------------------------------------

def _train_one_raae(config: BenchConfig, pair_idx: int, model_idx: int,
                    images: Tensor, labels: Tensor, holdout: tuple) -> raae.RaaeModel:
    gen = config.generation
    pair = config.pairs[pair_idx]
    path = _out(config, "raae", f"{pair.name}-seed{model_idx}.ambg")
    if os.path.exists(path) and _check_digest(config, path + ".meta.json"):
        return raae.load_raae(path)
    prior = raae.LatentPrior(np.array(gen.prior_means), np.array(gen.prior_stds))
    cfg = raae.RaaeTrainConfig(
        epochs=gen.epochs, batch_size=gen.batch_size,
        recon_lr=gen.recon_lr, disc_lr=gen.disc_lr, gen_lr=gen.gen_lr,
        autoencoder=models.AutoencoderConfig(latent_dim=gen.latent_dim))
    model = raae.train_raae(images, labels, pair, prior, cfg,
                            seed=derive_seed(config.seed, _T_RAAE, pair_idx, model_idx))
    raae.validate_raae(model, holdout[0], holdout[1],
                       seed=derive_seed(config.seed, _T_VALIDATE, pair_idx, model_idx))
    raae.save_raae(path, model)
    _mark_digest(config, path + ".meta.json")
    return model


def _pair_split(config: BenchConfig, pair_idx: int, train_images, train_labels):
    """Pair-filtered training data, capped and split into fit/holdout parts."""
    gen = config.generation
    pair = config.pairs[pair_idx]
    mask = (train_labels == pair.c1) | (train_labels == pair.c2)
    images, labels = train_images[mask], train_labels[mask]
    if len(images) > gen.max_pair_images:
        keep = np.sort(nx.seeded_rng(derive_seed(config.seed, _T_CAP, pair_idx))
                       .permutation(len(images))[:gen.max_pair_images])
        images, labels = images[keep], labels[keep]
    n_hold = max(1, int(round(gen.holdout_fraction * len(images))))
    perm = nx.seeded_rng(derive_seed(config.seed, _T_HOLDOUT, pair_idx)).permutation(len(images))
    hold, fit = perm[:n_hold], perm[n_hold:]
    return (images[fit], labels[fit]), (images[hold], labels[hold])


def _allocate(total: int, buckets: int) -> list[int]:
    base, extra = divmod(total, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def cmd_generate(config: BenchConfig) -> dict:
    """Train rAAEs per pair, keep the accepted ones, and write the ambiguous sets."""
    train_images, train_labels, _, _ = _load_nominal(config)
    gen = config.generation
    summary: dict = {"config_digest": config.digest(), "pairs": {}, "skipped_pairs": []}

    accepted_by_pair: list[list[tuple[int, raae.RaaeModel]]] = []
    for pair_idx, pair in enumerate(config.pairs):
        (fit_x, fit_y), (hold_x, hold_y) = _pair_split(config, pair_idx, train_images, train_labels)
        tasks = {
            k: (lambda k=k: _train_one_raae(config, pair_idx, k, fit_x, fit_y, (hold_x, hold_y)))
            for k in range(gen.models_per_pair)
        }
        trained = run_tasks(tasks, config.jobs)
        accepted = [(k, m) for k, m in trained.items() if m.verdict and m.verdict.accepted]
        summary["pairs"][pair.name] = {
            "models": {
                str(k): {"real_fake_accuracy": m.verdict.real_fake_accuracy,
                         "class_accuracy": m.verdict.class_accuracy,
                         "accepted": m.verdict.accepted}
                for k, m in trained.items()
            },
            "accepted_count": len(accepted),
        }
        if not accepted:
            log.warning("pair %s: no rAAE passed the validation gate; pair skipped", pair.name)
            summary["skipped_pairs"].append(pair.name)
        accepted_by_pair.append(accepted)

    produced = {}
    for kind, rows_total, delta in (("train", gen.train_rows, gen.delta_max_train),
                                    ("test", gen.test_rows, gen.delta_max_test)):
        # usable sampling units: accepted models whose plan has positive weight
        units_by_pair: dict[int, list] = {}
        for pair_idx, accepted in enumerate(accepted_by_pair):
            for model_idx, model in accepted:
                plan = sampler.build_plan(model, gen.grid[0], gen.grid[1], delta)
                if plan.empty:
                    log.warning("pair %s seed %d: empty plan for %s set",
                                config.pairs[pair_idx].name, model_idx, kind)
                    continue
                units_by_pair.setdefault(pair_idx, []).append((model_idx, model, plan))
        if not units_by_pair:
            raise AmbigenError("no pair produced an accepted rAAE with a usable plan")
        images, rows, row_pairs = [], [], []
        live = sorted(units_by_pair)
        per_pair = _allocate(rows_total, len(live))
        for slot, pair_idx in enumerate(live):
            pair = config.pairs[pair_idx]
            units = units_by_pair[pair_idx]
            per_model = _allocate(per_pair[slot], len(units))
            for m_slot, (model_idx, model, plan) in enumerate(units):
                want = per_model[m_slot]
                if want == 0:
                    continue
                seed = derive_seed(config.seed, _T_DRAW, pair_idx, model_idx,
                                   0 if kind == "train" else 1)
                drawn = sampler.draw_samples(model, plan, want, delta, seed)
                for s in drawn:
                    images.append(s.image.reshape(28, 28))
                    rows.append(s.label.embed(config.dataset.class_count))
                    row_pairs.append([pair.c1, pair.c2])
        name = f"{config.dataset.name}-ambiguous-{kind}"
        img_path = _out(config, "generated", f"{name}-images.idx")
        lbl_path = _out(config, "generated", f"{name}-labels.idx")
        datasets.save_idx(np.asarray(images), img_path)
        datasets.save_idx(np.asarray(rows, dtype=np.float32), lbl_path)
        _write_json(_out(config, "generated", f"{name}.provenance.json"), {
            "config_digest": config.digest(),
            "dataset": config.dataset.name,
            "kind": f"ambiguous-{kind}",
            "delta_max": delta,
            "rows": len(rows),
            "row_pairs": row_pairs,
            "seed": config.seed,
        })
        # relative names keep summaries byte-identical across output locations
        produced[kind] = {"images": f"generated/{name}-images.idx",
                          "labels": f"generated/{name}-labels.idx", "rows": len(rows)}

    summary["produced"] = produced
    _write_json(_out(config, "generated", "summary.json"), summary)
    return summary


def load_generated(config: BenchConfig, kind: str) -> datasets.ProbabilisticDataset:
    name = f"{config.dataset.name}-ambiguous-{kind}"
    img_path = _out(config, "generated", f"{name}-images.idx")
    lbl_path = _out(config, "generated", f"{name}-labels.idx")
    prov_path = _out(config, "generated", f"{name}.provenance.json")
    if not (os.path.exists(img_path) and os.path.exists(lbl_path)):
        raise ConfigError(f"generated {kind} set missing; run `generate` first")
    with open(prov_path) as f:
        prov = json.load(f)
    rows = datasets.load_idx(lbl_path).astype(np.float64)
    rows = rows / rows.sum(axis=1, keepdims=True)  # undo float32 quantization drift
    pairs = [tuple(p) for p in prov.get("row_pairs", [])] or None
    return datasets.ProbabilisticDataset(
        datasets.ImageSet(datasets.load_idx(img_path), source="ambiguous"),
        datasets.LabelSet(rows, pairs), prov)


# ---------------------------------------------------------------------------
# Classifier training (shared by evaluate-ambiguity and bench-supervisors)
# ---------------------------------------------------------------------------

def _arch_config(config: BenchConfig, arch: dict) -> models.ClassifierConfig:
    return models.ClassifierConfig(
        input_dim=28 * 28, hidden=tuple(arch["hidden"]),
        class_count=config.dataset.class_count,
        dropout_rate=config.classifier.dropout_rate)


def _train_classifier_cached(config: BenchConfig, name: str, cls_cfg, images, rows, seed):
    path = _out(config, "models", f"{name}.ambg")
    if os.path.exists(path) and _check_digest(config, path + ".meta.json"):
        return models.load_classifier(path)
    tr = models.TrainConfig(epochs=config.classifier.epochs,
                            batch_size=config.classifier.batch_size,
                            lr=config.classifier.lr)
    result = models.train_classifier(images, rows, cls_cfg, tr, seed)
    models.save_classifier(path, result.model)
    _mark_digest(config, path + ".meta.json")
    return result.model


def _mixed_train_set(config: BenchConfig, train_images, train_labels):
    ambiguous = load_generated(config, "train")
    return datasets.assemble_mixed_training(
        train_images, train_labels, ambiguous, config.dataset.class_count,
        seed=derive_seed(config.seed, _T_MIX))


# ---------------------------------------------------------------------------
# evaluate-ambiguity: Top-1 / Top-2 / Top-Pair / entropy table
# ---------------------------------------------------------------------------

AMBIGUITY_COLUMNS = ("training_set", "test_set", "top1", "top2", "top_pair", "entropy")


def _eval_model(model: models.ClassifierModel, images, label_rows, ambiguous: bool) -> dict:
    pred = model.predict(images)
    hard = np.asarray(label_rows).argmax(axis=1)
    out = {
        "top1": metrics.top_k_accuracy(pred, hard, 1),
        "top2": metrics.top_k_accuracy(pred, hard, 2),
        "top_pair": metrics.top_pair_accuracy(label_rows, pred) if ambiguous else None,
        "entropy": metrics.mean_entropy(pred),
    }
    return out


def cmd_evaluate_ambiguity(config: BenchConfig) -> dict:
    """Train clean/mixed classifiers and tabulate ambiguity metrics."""
    train_images, train_labels, test_images, test_labels = _load_nominal(config)
    mixed = _mixed_train_set(config, train_images, train_labels)
    amb_test = load_generated(config, "test")
    one_hot = np.eye(config.dataset.class_count)[train_labels]

    records = []
    for a_idx, arch in enumerate(config.classifier.architectures):
        cls_cfg = _arch_config(config, arch)
        for rep in range(config.classifier.repetitions):
            trainings = {
                "clean": (train_images, one_hot, 0),
                "mixed-ambiguous": (mixed.images.images, mixed.labels.rows, 1),
            }
            for train_kind, (imgs, rows, tag) in trainings.items():
                name = f"{arch['name']}-rep{rep}-{'mixed' if tag else 'clean'}"
                model = _train_classifier_cached(
                    config, name, cls_cfg, imgs, rows,
                    derive_seed(config.seed, _T_CLS, a_idx, rep, tag))
                for test_kind, (ti, tl, amb) in {
                    "ambiguous": (amb_test.images.images, amb_test.labels.rows, True),
                    "nominal": (test_images,
                                np.eye(config.dataset.class_count)[test_labels], False),
                }.items():
                    row = _eval_model(model, ti, tl, amb)
                    records.append({"architecture": arch["name"], "repetition": rep,
                                    "training_set": train_kind, "test_set": test_kind, **row})

    table = _aggregate_ambiguity(records)
    _write_ambiguity_outputs(config, records, table)
    return {"records": records, "table": table, "config_digest": config.digest()}


def _aggregate_ambiguity(records: list[dict]) -> list[dict]:
    table = []
    for train_kind in ("mixed-ambiguous", "clean"):
        for test_kind in ("ambiguous", "nominal"):
            rows = [r for r in records
                    if r["training_set"] == train_kind and r["test_set"] == test_kind]
            if not rows:
                continue
            entry = {"training_set": train_kind, "test_set": test_kind,
                     "repetitions": len(rows)}
            for m in ("top1", "top2", "top_pair", "entropy"):
                vals = [r[m] for r in rows if r[m] is not None]
                entry[m] = float(np.mean(vals)) if vals else None
                entry[m + "_std"] = float(np.std(vals)) if vals else None
            table.append(entry)
    return table


def _write_ambiguity_outputs(config: BenchConfig, records, table) -> None:
    path = _out(config, "report", "ambiguity_records.csv")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("architecture", "repetition") + AMBIGUITY_COLUMNS[:2]
                        + AMBIGUITY_COLUMNS[2:])
        for r in records:
            writer.writerow([r["architecture"], r["repetition"], r["training_set"],
                             r["test_set"]] +
                            [_fmt(r[m], 6) for m in ("top1", "top2", "top_pair", "entropy")])
    md = ["| Training Set | Test Set | Top-1 | Top-2 | Top-Pair | Entropy |",
          "|---|---|---|---|---|---|"]
    for e in table:
        md.append("| {} | {} | {} | {} | {} | {} |".format(
            e["training_set"], e["test_set"], _fmt(e["top1"], 2), _fmt(e["top2"], 2),
            _fmt(e["top_pair"], 2), _fmt(e["entropy"], 2)))
    with open(_out(config, "report", "ambiguity_table.md"), "w") as f:
        f.write(f"config digest: {config.digest()}\n\n")
        f.write("\n".join(md) + "\n")
    _write_json(_out(config, "report", "ambiguity_table.json"),
                {"config_digest": config.digest(), "table": table})


def _fmt(value, decimals: int) -> str:
    if value is None:
        return "n.a."
    return f"{value:.{decimals}f}"


# ---------------------------------------------------------------------------
# bench-supervisors
# ---------------------------------------------------------------------------

def _build_families(config: BenchConfig, model, test_images, test_labels,
                    amb_images) -> dict[str, Tensor]:
    families = {"nominal": test_images, "ambiguous": amb_images}
    atk = config.attacks
    fgsm = datasets.fgsm_attack(model, test_images, test_labels, atk.fgsm_eps)
    pgd = datasets.pgd_attack(model, test_images, test_labels, atk.pgd_eps,
                              atk.pgd_step, atk.pgd_iters)
    families["adversarial"] = np.concatenate([fgsm.images.images, pgd.images.images])
    corrupted = [datasets.corrupt(test_images, c["kind"], c["severity"],
                                  seed=derive_seed(config.seed, _T_CORRUPT, i)).images
                 for i, c in enumerate(config.corruptions)]
    families["corrupted"] = np.concatenate(corrupted)
    if config.dataset.foreign_test_images:
        foreign = datasets.load_idx(config.dataset.foreign_test_images)
        families["invalid"] = datasets.make_invalid_set(foreign).images
    return families


def _score_all(config: BenchConfig, arch_idx: int, rep: int,
               model: models.ClassifierModel, fits: dict,
               families: dict[str, Tensor]) -> dict[tuple[str, str], Tensor]:
    """Scores per (supervisor, family); families include 'nominal'."""
    wanted = config.supervisors
    scores: dict[tuple[str, str], Tensor] = {}
    for f_idx, (family, images) in enumerate(sorted(families.items())):
        rows = model.predict(images)
        trace = model.trace(images)
        softmax_family = {
            "max_softmax": supervisors.max_softmax, "pcs": supervisors.pcs,
            "softmax_entropy": supervisors.softmax_entropy, "deepgini": supervisors.deepgini,
        }
        for name, fn in softmax_family.items():
            if name in wanted:
                scores[(name, family)] = fn(rows)
        if {"mc_vr", "mc_ms", "mc_mi", "mc_pe"} & set(wanted):
            mc_rows = models.mc_dropout_rows(
                model, images, config.mc_samples,
                derive_seed(config.seed, _T_MC, arch_idx, rep, f_idx))
            mc = supervisors.mc_scores_rows(mc_rows)
            for name, vals in (("mc_vr", mc.vr), ("mc_ms", mc.ms),
                               ("mc_mi", mc.mi), ("mc_pe", mc.pe)):
                if name in wanted:
                    scores[(name, family)] = vals
        if {"ens_ms", "ens_mi", "ens_pe"} & set(wanted) and family != "adversarial":
            ens = supervisors.ensemble_scores(fits["ensemble"], images)
            for name, vals in (("ens_ms", ens.ms), ("ens_mi", ens.mi), ("ens_pe", ens.pe)):
                if name in wanted:
                    scores[(name, family)] = vals
        if "dissector" in wanted:
            scores[("dissector", family)] = supervisors.dissector_score(fits["dissector"], trace)
        for variant in ("dsa", "lsa", "mdsa"):
            if variant in wanted and fits.get(variant) is not None:
                scores[(variant, family)] = supervisors.surprise_score(fits[variant], trace)
        if "autoencoder" in wanted:
            scores[("autoencoder", family)] = supervisors.autoencoder_score(fits["ae"], images)
    return scores


def cmd_bench_supervisors(config: BenchConfig) -> dict:
    """Score nominal + four families with every configured supervisor per model."""
    train_images, train_labels, test_images, test_labels = _load_nominal(config)
    mixed = _mixed_train_set(config, train_images, train_labels)
    amb_test = load_generated(config, "test")
    mixed_hard = mixed.labels.hard()

    ae_path_name = f"{config.dataset.name}-supervisor-ae"
    ae_path = _out(config, "models", f"{ae_path_name}.ambg")
    if os.path.exists(ae_path) and _check_digest(config, ae_path + ".meta.json"):
        sup_ae = models.load_autoencoder(ae_path)
    else:
        sup_ae = models.train_autoencoder(
            train_images,
            models.AutoencoderConfig(latent_dim=config.supervisor_ae.latent_dim),
            models.TrainConfig(epochs=config.supervisor_ae.epochs,
                               batch_size=config.supervisor_ae.batch_size),
            seed=derive_seed(config.seed, _T_AE))
        models.save_autoencoder(ae_path, sup_ae)
        _mark_digest(config, ae_path + ".meta.json")

    all_rows = []
    for a_idx, arch in enumerate(config.classifier.architectures):
        cls_cfg = _arch_config(config, arch)
        for rep in range(config.classifier.repetitions):
            model = _train_classifier_cached(
                config, f"{arch['name']}-rep{rep}-mixed", cls_cfg,
                mixed.images.images, mixed.labels.rows,
                derive_seed(config.seed, _T_CLS, a_idx, rep, 1))
            member_tasks = {
                i: (lambda i=i: _train_classifier_cached(
                    config, f"{arch['name']}-rep{rep}-ens{i}", cls_cfg,
                    mixed.images.images, mixed.labels.rows,
                    derive_seed(config.seed, _T_ENS, a_idx, rep, i)))
                for i in range(config.ensemble_size)
            }
            fits = {"ensemble": list(run_tasks(member_tasks, config.jobs).values()),
                    "ae": sup_ae}
            if "dissector" in config.supervisors:
                fits["dissector"] = supervisors.fit_dissector(
                    model, mixed.images.images, mixed_hard,
                    seed=derive_seed(config.seed, _T_DISSECTOR, a_idx, rep))
            for variant in ("dsa", "lsa", "mdsa"):
                if variant in config.supervisors:
                    fits[variant] = supervisors.fit_surprise(
                        model, mixed.images.images, mixed_hard, variant.upper(),
                        seed=derive_seed(config.seed, _T_SURPRISE, a_idx, rep))

            families = _build_families(config, model, test_images, test_labels,
                                       amb_test.images.images)
            scores = _score_all(config, a_idx, rep, model, fits, families)
            _write_scores_csv(config, arch["name"], rep, scores)
            all_rows.extend(_auc_rows(arch["name"], rep, config, scores))

    report = render_report(all_rows, config.digest())
    _write_report(config, report)
    return {"rows": all_rows, "report": report, "config_digest": config.digest()}


def _auc_rows(arch: str, rep: int, config: BenchConfig, scores) -> list[dict]:
    rows = []
    for name in config.supervisors:
        neg = scores.get((name, "nominal"))
        for family in FAMILIES:
            pos = scores.get((name, family))
            if pos is None or neg is None:
                value = None  # n.a. (e.g. ensembles on adversarial data)
            else:
                value = metrics.auc_roc(pos, neg)
            rows.append({"architecture": arch, "repetition": rep,
                         "supervisor": name, "family": family, "auc": value})
    return rows


def _write_scores_csv(config: BenchConfig, arch: str, rep: int, scores) -> None:
    path = _out(config, "scores", f"{arch}-rep{rep}.csv")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("supervisor", "input_index", "score", "test_set_tag"))
        for name in config.supervisors:
            for family in ("nominal",) + FAMILIES:
                vals = scores.get((name, family))
                if vals is None:
                    continue
                for i, v in enumerate(np.asarray(vals)):
                    writer.writerow((name, i, repr(float(v)), family))
    _write_json(path + ".meta.json",
                {"config_digest": config.digest(), "architecture": arch, "repetition": rep})


# ---------------------------------------------------------------------------
# report rendering (pure post-processing of score rows)
# ---------------------------------------------------------------------------

def render_report(auc_rows: list[dict], digest: str) -> dict:
    """Mean/std AUC matrix per supervisor and family, plus per-architecture views."""
    supervisors_order = [s for s in supervisors.SUPERVISOR_NAMES
                         if any(r["supervisor"] == s for r in auc_rows)]
    architectures = sorted({r["architecture"] for r in auc_rows})

    def cell(rows):
        vals = [r["auc"] for r in rows if r["auc"] is not None]
        if not vals:
            return None
        return {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                "repetitions": len(vals)}

    matrix = {}
    for sup in supervisors_order:
        matrix[sup] = {}
        for family in FAMILIES:
            rows = [r for r in auc_rows
                    if r["supervisor"] == sup and r["family"] == family]
            matrix[sup][family] = cell(rows)
    per_arch = {
        arch: {
            sup: {
                family: cell([r for r in auc_rows
                              if r["supervisor"] == sup and r["family"] == family
                              and r["architecture"] == arch])
                for family in FAMILIES
            }
            for sup in supervisors_order
        }
        for arch in architectures
    }
    return {"config_digest": digest, "supervisor_order": supervisors_order,
            "families": list(FAMILIES), "matrix": matrix, "per_architecture": per_arch}


def report_markdown(report: dict) -> str:
    lines = [f"config digest: {report['config_digest']}", "",
             "| Supervisor | " + " | ".join(report["families"]) + " |",
             "|---" * (len(report["families"]) + 1) + "|"]
    for sup in report["supervisor_order"]:
        cells = []
        for family in report["families"]:
            c = report["matrix"][sup][family]
            cells.append("n.a." if c is None else f"{c['mean']:.2f} ± {c['std']:.2f}")
        lines.append(f"| {sup} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _write_report(config: BenchConfig, report: dict) -> None:
    _write_json(_out(config, "report", "supervisor_auc.json"), report)
    with open(_out(config, "report", "supervisor_auc.md"), "w") as f:
        f.write(report_markdown(report))
    path = _out(config, "report", "supervisor_auc.csv")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("supervisor", "family", "auc_mean", "auc_std", "repetitions"))
        for sup in report["supervisor_order"]:
            for family in report["families"]:
                c = report["matrix"][sup][family]
                if c is None:
                    writer.writerow((sup, family, "n.a.", "n.a.", 0))
                else:
                    writer.writerow((sup, family, f"{c['mean']:.6f}", f"{c['std']:.6f}",
                                     c["repetitions"]))


def cmd_report(config: BenchConfig, score_dir: str | None = None, force: bool = False,
               svg: bool = False) -> dict:
    """Re-render the AUC report from stored score CSVs (pure post-processing)."""
    score_dir = score_dir or os.path.join(config.output_dir, "scores")
    auc_rows = []
    digests = set()
    if os.path.isdir(score_dir):
        for fname in sorted(os.listdir(score_dir)):
            if not fname.endswith(".csv"):
                continue
            meta_path = os.path.join(score_dir, fname + ".meta.json")
            with open(meta_path) as f:
                meta = json.load(f)
            digests.add(meta["config_digest"])
            by_key: dict[tuple[str, str], list[float]] = {}
            with open(os.path.join(score_dir, fname), newline="") as f:
                for row in csv.DictReader(f):
                    by_key.setdefault((row["supervisor"], row["test_set_tag"]), []).append(
                        float(row["score"]))
            scores = {k: np.array(v) for k, v in by_key.items()}
            names = sorted({k[0] for k in scores})
            present = tuple(s for s in supervisors.SUPERVISOR_NAMES if s in names)
            for name in present:
                neg = scores.get((name, "nominal"))
                for family in FAMILIES:
                    pos = scores.get((name, family))
                    value = metrics.auc_roc(pos, neg) if pos is not None and neg is not None else None
                    auc_rows.append({"architecture": meta["architecture"],
                                     "repetition": meta["repetition"],
                                     "supervisor": name, "family": family, "auc": value})
    if len(digests) > 1 and not force:
        raise ConfigError(f"score directory mixes config digests {sorted(digests)}; "
                          "pass force to override")
    digest = digests.pop() if len(digests) == 1 else config.digest()
    report = render_report(auc_rows, digest)
    _write_report(config, report)
    if svg:
        _emit_latent_svgs(config)
    return report


def _emit_latent_svgs(config: BenchConfig) -> None:
    raae_dir = os.path.join(config.output_dir, "raae")
    if not os.path.isdir(raae_dir):
        return
    train_images, train_labels, _, _ = _load_nominal(config)
    for fname in sorted(os.listdir(raae_dir)):
        if not fname.endswith(".ambg"):
            continue
        model = raae.load_raae(os.path.join(raae_dir, fname))
        if not (model.verdict and model.verdict.accepted):
            continue
        plan = sampler.build_plan(model, config.generation.grid[0],
                                  config.generation.grid[1],
                                  config.generation.delta_max_test)
        encoded = {}
        for side, cls in (("c1", model.pair.c1), ("c2", model.pair.c2)):
            mask = train_labels == cls
            pts = model.encode(train_images[mask][:300])
            encoded[f"class {cls}"] = pts
        svg = sampler.plan_svg(plan, encoded)
        with open(_out(config, "report", fname.replace(".ambg", ".svg")), "w") as f:
            f.write(svg)


# ---------------------------------------------------------------------------
# attack / corrupt convenience commands
# ---------------------------------------------------------------------------

def cmd_corrupt(config: BenchConfig) -> dict:
    """Write corrupted copies of the nominal test set as IDX files."""
    _, _, test_images, _ = _load_nominal(config)
    written = {}
    for i, c in enumerate(config.corruptions):
        out = datasets.corrupt(test_images, c["kind"], c["severity"],
                               seed=derive_seed(config.seed, _T_CORRUPT, i))
        fname = f"{config.dataset.name}-{c['kind']}-s{c['severity']}.idx"
        datasets.save_idx(out.images, _out(config, "corrupted", fname))
        written[f"{c['kind']}-s{c['severity']}"] = f"corrupted/{fname}"
    _write_json(_out(config, "corrupted", "summary.json"),
                {"config_digest": config.digest(), "files": written})
    return written


def cmd_attack(config: BenchConfig, model_path: str | None = None) -> dict:
    """Write FGSM/PGD attacked copies of the nominal test set as IDX files."""
    train_images, train_labels, test_images, test_labels = _load_nominal(config)
    if model_path:
        model = models.load_classifier(model_path)
    else:
        arch = config.classifier.architectures[0]
        model = _train_classifier_cached(
            config, f"{arch['name']}-rep0-clean", _arch_config(config, arch),
            train_images, np.eye(config.dataset.class_count)[train_labels],
            derive_seed(config.seed, _T_CLS, 0, 0, 0))
    atk = config.attacks
    results = {
        "fgsm": datasets.fgsm_attack(model, test_images, test_labels, atk.fgsm_eps),
        "pgd": datasets.pgd_attack(model, test_images, test_labels, atk.pgd_eps,
                                   atk.pgd_step, atk.pgd_iters),
    }
    summary = {"config_digest": config.digest(), "attacks": {}}
    for name, res in results.items():
        fname = f"{config.dataset.name}-{name}.idx"
        datasets.save_idx(res.images.images, _out(config, "adversarial", fname))
        summary["attacks"][name] = {"file": f"adversarial/{fname}",
                                    "success_rate": res.success_rate}
    _write_json(_out(config, "adversarial", "summary.json"), summary)
    return summary

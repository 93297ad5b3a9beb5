"""Training/evaluation sweep over (training dropout x inference dropout).

For each training dropout value a model is trained once; each inference
dropout cell then generates one caption per validation image per seed, pools
the captions, computes the metric suite and writes one CSV row plus a
first-10-captions sample dump.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    CaptionRecord,
    FeatureStore,
    Vocabulary,
    load_captions,
    load_features,
)
from .decoder import CaptionModel, GenerationResult, greedy_generate
from .errors import DataError, FormatError, UsageError
from .metrics import (
    MetricsReport,
    bleu4,
    corpus_meteor,
    diversity_stats,
    kl_divergence,
    word_distribution,
)
from .rng import RngStream
from .trainer import TrainConfig, train, vocab_hash, save_checkpoint


@dataclass
class SweepConfig:
    captions_path: str
    features_path: str
    vocab_path: str
    val_captions_path: str | None = None     # defaults to the training captions
    d_t_list: list[float] = field(default_factory=lambda: [0.0, 0.2])
    d_e_list: list[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    seeds_per_cell: int = 3
    gen_seed_base: int = 1000
    train: TrainConfig = field(default_factory=TrainConfig)
    sample_count: int = 10
    max_len: int = 20

    def __post_init__(self):
        if not self.d_t_list or not self.d_e_list:
            raise UsageError("SweepConfig: dropout grids must be non-empty")
        for p in list(self.d_t_list) + list(self.d_e_list):
            if not (0.0 <= p <= 0.95):
                raise UsageError(f"SweepConfig: dropout value {p} outside [0, 0.95]")


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(v) for v in inner.split(",")]
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"sweep config: cannot parse value {text!r}")


def load_sweep_config(path) -> SweepConfig:
    """Parse a flat key = value config file (TOML-style scalars and lists)."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"sweep config: line {lineno} is not 'key = value'")
            key, _, raw = line.partition("=")
            values[key.strip()] = _parse_value(raw)
    try:
        train_cfg = TrainConfig(
            d_t=0.0,
            batch_size=int(values.get("batch", 32)),
            epochs=int(values.get("epochs", 10)),
            lr=float(values.get("lr", 1e-3)),
            seed=int(values.get("train_seed", 0)),
            hidden_dim=int(values.get("hidden", 256)),
            embed_dim=int(values.get("embed_dim", 300)),
            freeze_embeddings=bool(values.get("freeze_embeddings", False)),
        )
        return SweepConfig(
            captions_path=values["captions"],
            features_path=values["features"],
            vocab_path=values["vocab"],
            val_captions_path=values.get("val_captions"),
            d_t_list=[float(v) for v in values.get("d_t", [0.0, 0.2])],
            d_e_list=[float(v) for v in values.get("d_e", [0.0, 0.2, 0.4, 0.6, 0.8])],
            seeds_per_cell=int(values.get("seeds_per_cell", 3)),
            gen_seed_base=int(values.get("gen_seed_base", 1000)),
            train=train_cfg,
        )
    except KeyError as e:
        raise FormatError(f"sweep config: missing required key {e.args[0]!r}")


def generate_for_images(
    model: CaptionModel,
    image_ids: list[str],
    features: FeatureStore,
    d_e: float,
    base_rng: RngStream,
    d_t: float,
    repeat: int,
    max_len: int = 20,
) -> list[GenerationResult]:
    """One caption per image; each image gets a stream derived from
    (base seed, d_t, d_e, repeat, image id) so schedules don't matter."""
    results = []
    for image_id in image_ids:
        stream = base_rng.derive(f"{d_t:g}", f"{d_e:g}", repeat, image_id)
        feat = features.get(image_id).astype(np.float64)
        results.append(greedy_generate(model, feat, d_e, stream, max_len=max_len))
    return results


def evaluate_cell(
    model: CaptionModel,
    val_records: list[CaptionRecord],
    features: FeatureStore,
    vocab: Vocabulary,
    d_t: float,
    d_e: float,
    seeds_per_cell: int,
    base_rng: RngStream,
    max_len: int = 20,
) -> tuple[MetricsReport, list[GenerationResult]]:
    """Metrics for one (d_t, d_e) cell, pooled over the generation seeds."""
    if not val_records:
        raise DataError("evaluate_cell: empty validation set")
    refs_by_image: dict[str, list[list[str]]] = {}
    image_ids: list[str] = []
    for rec in val_records:
        if rec.image_id not in refs_by_image:
            refs_by_image[rec.image_id] = []
            image_ids.append(rec.image_id)
        refs_by_image[rec.image_id].append(rec.tokens)

    all_results: list[GenerationResult] = []
    candidates: list[list[str]] = []
    references: list[list[list[str]]] = []
    for repeat in range(seeds_per_cell):
        results = generate_for_images(
            model, image_ids, features, d_e, base_rng, d_t, repeat, max_len=max_len
        )
        for image_id, res in zip(image_ids, results):
            all_results.append(res)
            candidates.append(vocab.decode(res.token_ids))
            references.append(refs_by_image[image_id])

    gt_captions = [rec.tokens for rec in val_records]
    p_dist = word_distribution(candidates, vocab)
    q_dist = word_distribution(gt_captions, vocab)
    v_size, p_exceed = diversity_stats(
        candidates, [r.exceeded_limit for r in all_results]
    )
    report = MetricsReport(
        d_t=d_t,
        d_e=d_e,
        bleu4=bleu4(candidates, references),
        meteor=corpus_meteor(candidates, references),
        d_kl=kl_divergence(p_dist, q_dist),
        v_size=v_size,
        p_len_gt_20=p_exceed,
    )
    return report, all_results


def run_sweep(config: SweepConfig, out_dir) -> list[MetricsReport]:
    """Full sweep; writes report.csv and samples/<d_t>_<d_e>.txt under out_dir."""
    records = load_captions(config.captions_path)
    val_records = (
        load_captions(config.val_captions_path)
        if config.val_captions_path
        else records
    )
    features = load_features(config.features_path)
    vocab = Vocabulary.load(config.vocab_path)
    vhash = vocab_hash(vocab)

    os.makedirs(out_dir, exist_ok=True)
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    base_rng = RngStream(config.gen_seed_base)

    rows: list[MetricsReport] = []
    for d_t in config.d_t_list:
        train_cfg = TrainConfig(
            d_t=d_t,
            batch_size=config.train.batch_size,
            epochs=config.train.epochs,
            lr=config.train.lr,
            seed=config.train.seed,
            hidden_dim=config.train.hidden_dim,
            embed_dim=config.train.embed_dim,
            freeze_embeddings=config.train.freeze_embeddings,
        )
        model = CaptionModel.init(
            vocab_size=vocab.size,
            embed_dim=train_cfg.embed_dim,
            feature_dim=features.feature_dim,
            hidden_dim=train_cfg.hidden_dim,
            rng=RngStream(train_cfg.seed).derive("init"),
            embeddings_frozen=train_cfg.freeze_embeddings,
        )
        try:
            train(model, records, features, vocab, train_cfg)
        except Exception as e:
            raise DataError(f"sweep: training failed at d_t={d_t:g}: {e}") from e
        save_checkpoint(model, d_t, vhash, os.path.join(out_dir, f"model_dt{d_t:g}.ckpt"))
        for d_e in config.d_e_list:
            try:
                report, results = evaluate_cell(
                    model, val_records, features, vocab,
                    d_t, d_e, config.seeds_per_cell, base_rng,
                    max_len=config.max_len,
                )
            except Exception as e:
                raise DataError(
                    f"sweep: evaluation failed at cell d_t={d_t:g}, d_e={d_e:g}: {e}"
                ) from e
            rows.append(report)
            _dump_samples(
                os.path.join(samples_dir, f"{d_t:g}_{d_e:g}.txt"),
                results[: config.sample_count],
                vocab,
            )

    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(MetricsReport.CSV_HEADER + "\n")
        for row in rows:
            f.write(row.csv_row() + "\n")
    return rows


def _dump_samples(path, results: list[GenerationResult], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for res in results:
            line = " ".join(vocab.decode(res.token_ids))
            if res.exceeded_limit:
                line += " ..."
            f.write(line + "\n")

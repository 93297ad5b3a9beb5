"""Command-line surface.

Subcommands: build-vocab, synth, train, generate, evaluate, sweep, gradcheck.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from .corpus import Vocabulary, build_vocab, load_captions, load_features, save_captions, save_features
from .decoder import CaptionModel, greedy_generate, teacher_forced_loss
from .errors import DataError, NumericalError, UsageError
from .harness import evaluate_cell, load_sweep_config, run_sweep
from .metrics import (
    MetricsReport,
    bleu4,
    corpus_meteor,
    diversity_stats,
    kl_divergence,
    word_distribution,
)
from .neural import dropout_mask, grad_check
from .rng import RngStream
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, vocab_hash


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dropcap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", parents=[], add_help=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=10000)

    p = sub.add_parser("synth")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train")
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--d-t", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--embed-dim", type=int, default=300)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.add_argument("--freeze-embeddings", action="store_true", default=None,
                   help="freeze the embedding table (default: frozen iff --embeddings given)")
    p.add_argument("--train-embeddings", dest="freeze_embeddings", action="store_false")

    p = sub.add_parser("generate")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--d-e", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-len", type=int, default=20)

    p = sub.add_parser("evaluate")
    p.add_argument("--generated", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--vocab", required=True)

    p = sub.add_parser("sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("gradcheck")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_build_vocab(args) -> int:
    records = load_captions(args.captions)
    vocab = build_vocab(records, size=args.size)
    vocab.save(args.out)
    print(f"vocabulary: {vocab.size} entries ({len(vocab.content_words())} content words)")
    return 0


def _cmd_synth(args) -> int:
    records, store = corpus_mod.synth_corpus(args.seed, args.images)
    os.makedirs(args.out_dir, exist_ok=True)
    save_captions(records, os.path.join(args.out_dir, "captions.jsonl"))
    save_features(store, os.path.join(args.out_dir, "features.imft"))
    print(f"wrote {len(records)} captions for {args.images} images to {args.out_dir}")
    return 0


def _cmd_train(args) -> int:
    records = load_captions(args.captions)
    features = load_features(args.features)
    vocab = Vocabulary.load(args.vocab)
    freeze = args.freeze_embeddings
    if freeze is None:
        freeze = args.embeddings is not None
    config = TrainConfig(
        d_t=args.d_t, batch_size=args.batch, epochs=args.epochs, lr=args.lr,
        seed=args.seed, hidden_dim=args.hidden, embed_dim=args.embed_dim,
        freeze_embeddings=freeze,
    )
    embeddings = None
    if args.embeddings:
        embeddings, coverage = corpus_mod.load_embeddings(
            args.embeddings, vocab, seed=config.seed, default_dim=config.embed_dim
        )
        if embeddings.shape[1] != config.embed_dim:
            raise DataError(
                f"embedding file dim {embeddings.shape[1]} != --embed-dim {config.embed_dim}"
            )
        print(f"embedding coverage: {coverage:.3f}")
    model = CaptionModel.init(
        vocab_size=vocab.size, embed_dim=config.embed_dim,
        feature_dim=features.feature_dim, hidden_dim=config.hidden_dim,
        rng=RngStream(config.seed).derive("init"),
        embeddings=embeddings, embeddings_frozen=freeze,
    )
    loss_log = train(model, records, features, vocab, config)
    for epoch, loss in enumerate(loss_log, start=1):
        print(f"epoch {epoch}: loss/token {loss:.4f}")
    save_checkpoint(model, config.d_t, vocab_hash(vocab), args.out)
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_generate(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    model, _ = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab_hash(vocab))
    features = load_features(args.features)
    base = RngStream(args.seed)
    for image_id in features.features:
        stream = base.derive(image_id)
        feat = features.get(image_id).astype(np.float64)
        res = greedy_generate(model, feat, args.d_e, stream, max_len=args.max_len)
        print(json.dumps({
            "image_id": image_id,
            "caption": " ".join(vocab.decode(res.token_ids)),
            "exceeded": res.exceeded_limit,
        }))
    return 0


def _cmd_evaluate(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    refs = load_captions(args.captions)
    refs_by_image: dict[str, list[list[str]]] = {}
    for rec in refs:
        refs_by_image.setdefault(rec.image_id, []).append(rec.tokens)
    candidates, references, exceeded = [], [], []
    with open(args.generated, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            image_id = obj["image_id"]
            if image_id not in refs_by_image:
                raise DataError(f"evaluate: no references for image id '{image_id}'")
            candidates.append(corpus_mod.tokenize(obj["caption"]))
            references.append(refs_by_image[image_id])
            exceeded.append(bool(obj.get("exceeded", False)))
    if not candidates:
        raise DataError("evaluate: no generated captions")
    p_dist = word_distribution(candidates, vocab)
    q_dist = word_distribution([r.tokens for r in refs], vocab)
    v_size, p_exceed = diversity_stats(candidates, exceeded)
    print("bleu4,meteor,d_kl,v_size,p_len_gt_20")
    print(
        f"{bleu4(candidates, references):.6f},{corpus_meteor(candidates, references):.6f},"
        f"{kl_divergence(p_dist, q_dist):.6f},{v_size},{p_exceed:.6f}"
    )
    return 0


def _cmd_sweep(args) -> int:
    config = load_sweep_config(args.config)
    rows = run_sweep(config, args.out_dir)
    print(f"wrote {len(rows)} rows to {os.path.join(args.out_dir, 'report.csv')}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .corpus import END_ID
    rng = RngStream(args.seed)
    worst = 0.0
    for d_t in (0.0, 0.5):
        model = CaptionModel.init(
            vocab_size=args.vocab, embed_dim=6, feature_dim=5, hidden_dim=args.hidden,
            rng=rng.derive("init", f"{d_t:g}"), embeddings_frozen=False,
        )
        feature = rng.derive("feature", f"{d_t:g}").uniform_range(-1, 1, 5)
        caption = [int(i) for i in rng.derive("caption", f"{d_t:g}").integers(4, args.vocab, 5)]
        caption.append(END_ID)
        masks = [dropout_mask(d_t, args.hidden, rng.derive("mask", f"{d_t:g}", t))
                 for t in range(len(caption))]
        params = model.named_params()

        def loss_fn():
            return teacher_forced_loss(model, feature, caption, d_t, None, masks=masks)

        # larger step than the module default: cancellation noise on near-zero
        # gradient coordinates dominates below ~1e-4
        err = grad_check(loss_fn, params, eps=5e-4)
        print(f"d_t={d_t:g}: max relative error {err:.3e}")
        worst = max(worst, err)
    if worst >= 1e-4:
        print(f"FAIL: max relative error {worst:.3e} >= 1e-4")
        return 3
    print(f"OK: max relative error {worst:.3e}")
    return 0


_COMMANDS = {
    "build-vocab": _cmd_build_vocab,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import math
import random
import time

import mpmath
import numpy as np
import pytest

from dropcap.cli import main as cli_main
from dropcap.corpus import (
    END_ID,
    FeatureStore,
    build_vocab,
    save_captions,
    save_features,
    synth_corpus,
)
from dropcap.decoder import CaptionModel, greedy_generate, teacher_forced_loss
from dropcap.harness import load_sweep_config, run_sweep
from dropcap.metrics import WordDistribution, bleu4, kl_divergence, meteor
from dropcap.neural import dropout_mask, grad_check
from dropcap.rng import RngStream
from dropcap.trainer import TrainConfig, load_checkpoint, save_checkpoint, train


def _report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# --- 1. gradient exactness ------------------------------------------------------

def test_acceptance_gradient_exactness():
    start = time.monotonic()
    rng = RngStream(0)
    worst = 0.0
    for d_t in (0.0, 0.5):
        model = CaptionModel.init(20, 6, 5, 8, rng.derive("init", f"{d_t:g}"),
                                  embeddings_frozen=False)
        feature = rng.derive("feature", f"{d_t:g}").uniform_range(-1, 1, 5)
        caption = [int(i) for i in rng.derive("caption", f"{d_t:g}").integers(4, 20, 5)]
        caption.append(END_ID)
        masks = [dropout_mask(d_t, 8, rng.derive("mask", f"{d_t:g}", t))
                 for t in range(len(caption))]

        def fn():
            return teacher_forced_loss(model, feature, caption, d_t, None, masks=masks)

        worst = max(worst, grad_check(fn, model.named_params(), eps=5e-4))
    elapsed = time.monotonic() - start
    _report("gradient exactness < 1e-4 in < 10 s", worst < 1e-4 and elapsed < 10.0,
            f"max rel err {worst:.3e}, {elapsed:.1f} s")


# --- shared overfit toy model -----------------------------------------------------

@pytest.fixture(scope="module")
def overfit_toy():
    records, store = synth_corpus(7, 16)
    vocab = build_vocab(records)
    cfg = TrainConfig(d_t=0.0, batch_size=16, epochs=100, lr=5e-3,
                      seed=0, hidden_dim=32, embed_dim=24)
    model = CaptionModel.init(vocab.size, cfg.embed_dim, store.feature_dim,
                              cfg.hidden_dim, RngStream(0).derive("init"))
    start = time.monotonic()
    train(model, records, store, vocab, cfg, max_steps=500)
    return records, store, vocab, model, time.monotonic() - start


# --- 2. memorization oracle --------------------------------------------------------

def test_acceptance_memorization(overfit_toy):
    records, store, vocab, model, train_time = overfit_toy
    refs = {}
    for rec in records:
        refs.setdefault(rec.image_id, []).append(rec.tokens)
    exact = 0
    candidates, references = [], []
    for image_id in store.features:
        res = greedy_generate(model, store.get(image_id).astype(np.float64), 0.0, None)
        tokens = vocab.decode(res.token_ids)
        if tokens in refs[image_id]:
            exact += 1
        candidates.append(tokens)
        references.append(refs[image_id])
    bleu = bleu4(candidates, references)
    ok = exact >= 14 and bleu > 90.0 and train_time < 120.0
    _report("memorization: >= 14/16 exact, BLEU-4 > 90, train < 2 min", ok,
            f"{exact}/16 exact, BLEU {bleu:.2f}, train {train_time:.1f} s")


# --- 3. dropout identity -------------------------------------------------------------

def test_acceptance_dropout_identity():
    records, store = synth_corpus(11, 100)
    vocab = build_vocab(records)
    model = CaptionModel.init(vocab.size, 16, store.feature_dim, 24,
                              RngStream(3).derive("init"))
    mismatches = 0
    for image_id in store.features:
        feat = store.get(image_id).astype(np.float64)
        with_path = greedy_generate(model, feat, 0.0, RngStream(1))
        without = greedy_generate(model, feat, 0.0, None, apply_dropout=False)
        same = (with_path.token_ids == without.token_ids
                and np.array(with_path.per_step_log_probs).tobytes()
                == np.array(without.per_step_log_probs).tobytes()
                and with_path.exceeded_limit == without.exceeded_limit)
        mismatches += 0 if same else 1
    _report("d_e=0 bit-identical to dropout-free path over 100 images",
            mismatches == 0, f"{mismatches} mismatches")


# --- 4. mask statistics ---------------------------------------------------------------

def test_acceptance_mask_statistics():
    n = 10**6
    worst_frac, worst_mean = 0.0, 0.0
    ok = True
    for i, p in enumerate((0.2, 0.4, 0.6, 0.8)):
        mask = dropout_mask(p, n, RngStream(100 + i))
        frac_err = abs(float(np.mean(mask == 0.0)) - p)
        mean_err = abs(float(np.mean(mask)) - 1.0)
        worst_frac = max(worst_frac, frac_err)
        worst_mean = max(worst_mean, mean_err)
        ok = ok and frac_err < 0.002 and mean_err < 0.005
    _report("mask statistics: zero-fraction within 0.002, mean within 0.005",
            ok, f"worst frac err {worst_frac:.4f}, worst mean err {worst_mean:.4f}")


# --- 5. metric oracles ------------------------------------------------------------------

def test_acceptance_metric_oracles():
    ok = True
    details = []

    cand = "a red cat sits on the mat".split()
    ok &= abs(bleu4([cand], [[cand]]) - 100.0) < 1e-6
    ok &= bleu4(["the the the the".split()], [["the cat sat on the mat".split()]]) == 0.0

    toks = "the cat sat".split()
    ok &= abs(meteor(toks, [toks]) - 100.0 * (1 - 0.5 / 27)) < 1e-6
    ok &= abs(meteor(["cat"], [["cat"]]) - 50.0) < 1e-6
    ok &= meteor("a b c".split(), ["x y z".split()]) == 0.0

    words = [f"w{i}" for i in range(50)]
    rnd = random.Random(0)

    def rand_dist():
        raw = [rnd.random() + 1e-3 for _ in words]
        s = sum(raw)
        return WordDistribution(probs={w: v / s for w, v in zip(words, raw)})

    worst_kl = 0.0
    with mpmath.workdps(50):
        for _ in range(20):
            p, q = rand_dist(), rand_dist()
            exact = float(mpmath.fsum(
                mpmath.mpf(p.probs[w]) * mpmath.log(mpmath.mpf(p.probs[w]) / mpmath.mpf(q.probs[w]))
                for w in words))
            worst_kl = max(worst_kl, abs(kl_divergence(p, q) - exact))
            ok &= abs(kl_divergence(p, q) - exact) < 1e-9
            ok &= kl_divergence(p, p) == 0.0
    _report("metric oracles: BLEU/METEOR hand values 1e-6, KL brute force 1e-9",
            bool(ok), f"worst KL deviation {worst_kl:.2e}")


# --- 6 & 7. directional sweep + reproducibility -----------------------------------------

@pytest.fixture(scope="module")
def sweep_setup(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    records, store = synth_corpus(7, 16)
    vocab = build_vocab(records)
    save_captions(records, tmp / "caps.jsonl")
    save_features(store, tmp / "feats.imft")
    vocab.save(tmp / "vocab.tsv")
    cfg_path = tmp / "sweep.cfg"
    cfg_path.write_text(
        f'captions = "{tmp / "caps.jsonl"}"\n'
        f'features = "{tmp / "feats.imft"}"\n'
        f'vocab = "{tmp / "vocab.tsv"}"\n'
        "d_t = [0.0, 0.2]\n"
        "d_e = [0.0, 0.2, 0.4, 0.6, 0.8]\n"
        "seeds_per_cell = 3\n"
        "hidden = 32\n"
        "embed_dim = 24\n"
        "batch = 16\n"
        "epochs = 100\n"  # 80 records / batch 16 -> 5 steps per epoch, 500 total
        "lr = 5e-3\n"
        "train_seed = 0\n"
        "gen_seed_base = 1000\n"
    )
    start = time.monotonic()
    rows = run_sweep(load_sweep_config(cfg_path), tmp / "out1")
    elapsed = time.monotonic() - start
    return tmp, cfg_path, rows, elapsed


def test_acceptance_directional_trends(sweep_setup):
    _, _, rows, elapsed = sweep_setup
    by_cell = {(r.d_t, r.d_e): r for r in rows}
    ok = True
    details = []
    for d_t in (0.0, 0.2):
        grid = [by_cell[(d_t, d_e)] for d_e in (0.0, 0.2, 0.4, 0.6, 0.8)]
        v_grow = grid[-1].v_size > grid[0].v_size
        p_jump = grid[-1].p_len_gt_20 >= grid[0].p_len_gt_20 + 0.2
        bleu_strict = all(a.bleu4 > b.bleu4 for a, b in zip(grid, grid[1:]))
        ok = ok and v_grow and p_jump and bleu_strict
        details.append(
            f"d_t={d_t:g}: |V| {grid[0].v_size}->{grid[-1].v_size}, "
            f"p> {grid[0].p_len_gt_20:.2f}->{grid[-1].p_len_gt_20:.2f}, "
            f"BLEU {[round(g.bleu4, 1) for g in grid]}"
        )
    ok = ok and elapsed < 600.0
    _report("directional trends: |V| up, p(len>20) +0.2, BLEU strictly down, < 10 min",
            ok, "; ".join(details) + f"; sweep {elapsed:.0f} s")


def test_acceptance_sweep_reproducibility(sweep_setup):
    tmp, cfg_path, _, _ = sweep_setup
    run_sweep(load_sweep_config(cfg_path), tmp / "out2")
    a = (tmp / "out1/report.csv").read_bytes()
    b = (tmp / "out2/report.csv").read_bytes()
    _report("sweep reproducibility: byte-identical report.csv", a == b,
            f"{len(a)} bytes")


# --- 8. format round trips ----------------------------------------------------------------

def test_acceptance_format_round_trips(tmp_path, capsys):
    ok = True
    details = []

    store = FeatureStore(feature_dim=7)
    gen = np.random.default_rng(5)
    for i in range(5):
        store.features[f"img{i}"] = gen.normal(size=7).astype(np.float32)
    fpath = tmp_path / "f.imft"
    save_features(store, fpath)
    from dropcap.corpus import load_features
    again = load_features(fpath)
    feat_ok = all(store.features[k].tobytes() == again.features[k].tobytes()
                  for k in store.features)
    ok &= feat_ok
    details.append(f"feature round trip {'bit-exact' if feat_ok else 'MISMATCH'}")

    model = CaptionModel.init(12, 5, 7, 6, RngStream(8).derive("init"))
    cpath = tmp_path / "m.ckpt"
    save_checkpoint(model, 0.2, 42, cpath)
    loaded, _ = load_checkpoint(cpath)
    ckpt_ok = all(v.tobytes() == loaded.named_params()[k].tobytes()
                  for k, v in model.named_params().items())
    ok &= ckpt_ok
    details.append(f"checkpoint round trip {'bit-exact' if ckpt_ok else 'MISMATCH'}")

    # corrupted headers through the CLI must exit with the data/format code (2)
    bad_feat = tmp_path / "bad.imft"
    bad_feat.write_bytes(b"NOPE" + b"\x00" * 12)
    caps = tmp_path / "caps.jsonl"
    caps.write_text('{"image_id": "a", "caption": "a cat"}\n')
    vocab_path = tmp_path / "v.tsv"
    cli_main(["build-vocab", "--captions", str(caps), "--out", str(vocab_path)])
    code_feat = cli_main(["train", "--captions", str(caps), "--features", str(bad_feat),
                          "--vocab", str(vocab_path), "--d-t", "0", "--seed", "0",
                          "--epochs", "1", "--out", str(tmp_path / "x.ckpt")])
    bad_ckpt = tmp_path / "bad.ckpt"
    bad_ckpt.write_bytes(b"ZZZZ" + b"\x00" * 64)
    code_ckpt = cli_main(["generate", "--checkpoint", str(bad_ckpt),
                          "--features", str(fpath), "--vocab", str(vocab_path),
                          "--d-e", "0", "--seed", "0"])
    capsys.readouterr()
    ok &= code_feat == 2 and code_ckpt == 2
    details.append(f"corrupted-header exit codes {code_feat}/{code_ckpt}")
    _report("format round trips bit-exact; corrupted headers exit 2", bool(ok),
            ", ".join(details))

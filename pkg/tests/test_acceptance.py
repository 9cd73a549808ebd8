"""Acceptance gate.  One test per criterion, each at its stated tolerance and
runtime budget.  A PASS/FAIL/SKIP line per criterion is printed in the
pytest terminal summary (and to stdout when run with ``-s``)."""
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import read_golden_prep
from gradcheck import REL_TOL, check_instance
from hateclf.cli import main as cli_main
from hateclf.corpus import DAVIDSON, SPLITS, WASEEM, SplitSpec, class_counts, compare_to_published_splits, stratified_split, synthetic_corpus
from hateclf.eval_report import confusion, metrics
from hateclf.heads import KINDS, HeadConfig, forward, init_params
from hateclf.text_prep import normalize
from hateclf.trainer import Classifier, encode_corpus, predict_probs, train
from oracles import confusion_bruteforce, metrics_bruteforce
from separable import OVERFIT_CONFIG, mini_model, separable_corpus, write_waseem_csv


def report(criterion, text):
    criterion["detail"] = text
    print(text)


# 1 ------------------------------------------------------------------------

def test_criterion_1_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst = {}
    componentwise = True
    for kind in KINDS:
        reports = [check_instance(kind, seed) for seed in range(20)]
        worst[kind] = max(r.max_rel_error for r in reports)
        componentwise &= all(r.componentwise_ok for r in reports)
    elapsed = time.perf_counter() - t0
    report(criterion, "grad rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f" (tol {REL_TOL:g}, 20 instances each, componentwise {'ok' if componentwise else 'FAIL'}); {elapsed:.1f}s < 120s")
    assert all(v <= REL_TOL for v in worst.values())
    assert componentwise
    assert elapsed < 120


# 2 ------------------------------------------------------------------------

def test_criterion_2_normalization_suite(criterion):
    t0 = time.perf_counter()
    n, chunk = 10_000, 1_000
    worst = {}
    for kind in KINDS:
        cfg = HeadConfig(kind, hidden=16, num_layers=2, mlp_hidden=32, cnn_filters=8)
        err = 0.0
        for c in range(n // chunk):
            g = torch.Generator().manual_seed(c)
            scale = float(10 ** torch.empty(1).uniform_(-1, 1, generator=g))
            params = {k: torch.randn(v.shape, generator=g, dtype=torch.float64) * scale for k, v in init_params(cfg).items()}
            states = torch.randn(chunk, 2, 64, 16, generator=g, dtype=torch.float64) * scale
            lengths = torch.randint(2, 65, (chunk,), generator=g)
            mask = torch.arange(64)[None, :] < lengths[:, None]
            probs = forward(cfg, states, params, mask)
            assert ((probs >= 0) & (probs <= 1)).all()
            err = max(err, float((probs.sum(-1) - 1).abs().max()))
        worst[kind] = err
    elapsed = time.perf_counter() - t0
    report(criterion, "max |sum-1| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f" over {n} instances each (tol 1e-6); {elapsed:.1f}s < 60s")
    assert all(v <= 1e-6 for v in worst.values())
    assert elapsed < 60


# 3 ------------------------------------------------------------------------

def test_criterion_3_overfit_oracle(criterion):
    t0 = time.perf_counter()
    corpus = separable_corpus()
    assert len(corpus) == 32
    results = {}
    for kind in KINDS:
        encoder, head, vocab = mini_model(kind, corpus)
        _, history = train(encoder, head, corpus, corpus, vocab, OVERFIT_CONFIG)
        ids, mask, labels = encode_corpus(corpus, vocab)
        acc = float((predict_probs(Classifier(encoder, head), ids, mask).argmax(1) == labels).double().mean())
        first = next((r.epoch for r in history.epochs if r.val_f1 == 1.0), None)
        results[kind] = (acc, first)
    elapsed = time.perf_counter() - t0
    report(criterion, "train acc " + ", ".join(f"{k} {a:.2f} (first perfect epoch {e})" for k, (a, e) in results.items())
           + f" within {OVERFIT_CONFIG.epochs} epochs; {elapsed:.1f}s < 300s")
    assert all(a == 1.0 for a, _ in results.values())
    assert elapsed < 300


# 4 ------------------------------------------------------------------------

def test_criterion_4_preprocessing_golden(criterion):
    pairs = [("yeeeessss", "yes"), ("#notsexist", "not sexist")] + read_golden_prep()
    normalize("warm up")  # lexicon load is a one-off, outside the timed region
    t0 = time.perf_counter()
    failures = [(raw, exp, got) for raw, exp in pairs if (got := normalize(raw).text) != exp]
    elapsed = time.perf_counter() - t0
    report(criterion, f"{len(pairs) - len(failures)}/{len(pairs)} exact matches (2 quoted examples + 50-line golden); {elapsed * 1000:.0f}ms < 1s")
    assert not failures, failures[:3]
    assert len(pairs) == 52
    assert elapsed < 1


# 5 ------------------------------------------------------------------------

def test_criterion_5_split_fidelity(criterion):
    t0 = time.perf_counter()
    lines, mismatches, flagged = [], [], []
    for scheme, totals in ((WASEEM, (2113, 4167, 13417)), (DAVIDSON, (1430, 19190, 4163))):
        parts = stratified_split(synthetic_corpus(scheme, totals), SplitSpec(seed=0))
        counts = {s: class_counts(p) for s, p in zip(SPLITS, parts)}
        checks = compare_to_published_splits(scheme, counts)
        mismatches += [c for c in checks if c.status == "mismatch"]
        flagged += [c for c in checks if c.status == "flagged"]
        lines.append(f"{scheme.name} max |delta| {max(abs(c.delta) for c in checks if c.status == 'match')}")
    elapsed = time.perf_counter() - t0
    flagged_txt = "; ".join(f"{c.split}/{c.label} {c.got} vs {c.expected}" for c in flagged)
    report(criterion, ", ".join(lines) + f" (tol 2); flagged: {flagged_txt}; {elapsed:.2f}s < 10s")
    assert not mismatches
    assert {(c.split, c.label) for c in flagged} == {(s, "neither") for s in SPLITS}
    assert all(c.delta != 0 for c in flagged)
    assert elapsed < 10


# 6 ------------------------------------------------------------------------

def test_criterion_6_metrics_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    cm_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        golds = rng.integers(0, 3, n).tolist()
        preds = rng.integers(0, 3, n).tolist()
        rep = metrics(preds, golds, WASEEM)
        per, weighted, acc = metrics_bruteforce(preds, golds, 3)
        got = [rep.weighted_precision, rep.weighted_recall, rep.weighted_f1, rep.accuracy]
        got += [*rep.precision, *rep.recall, *rep.f1]
        ref = [*weighted, acc] + [p[0] for p in per] + [p[1] for p in per] + [p[2] for p in per]
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref)))
        cm_ok &= confusion(preds, golds, WASEEM).counts.tolist() == confusion_bruteforce(preds, golds, 3)
    elapsed = time.perf_counter() - t0
    report(criterion, f"1000 instances: max |metric - oracle| {worst:.1e} (tol 1e-12), confusion {'equal' if cm_ok else 'DIFFERENT'}; {elapsed:.1f}s < 30s")
    assert worst <= 1e-12 and cm_ok
    assert elapsed < 30


# 7 ------------------------------------------------------------------------

def test_criterion_7_determinism(criterion, tmp_path, capsys):
    t0 = time.perf_counter()
    data = tmp_path / "waseem.csv"
    write_waseem_csv(data)
    config = tmp_path / "config.json"
    config.write_text('{"dataset": "waseem", "train": {"epochs": 3, "batch_size": 8, "learning_rate": 0.001}}')
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli_main(["train", "--config", str(config), "--data", str(data), "--backend", "mini",
                         "--head", "cnn", "--seed", "5", "--out", str(out)]) == 0
        assert cli_main(["eval", "--config", str(config), "--data", str(data), "--checkpoint", str(out / "checkpoint"),
                         "--manifest", str(out / "test.csv"), "--out", str(out / "eval")]) == 0
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    same = {rel: (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
            for rel in ("history.csv", "eval/metrics.json")}
    report(criterion, ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()) + f"; {elapsed:.1f}s < 120s")
    assert all(same.values())
    assert elapsed < 120


# 8 ------------------------------------------------------------------------

FULL_SCALE_ENV = ("HATECLF_WEIGHTS", "HATECLF_VOCAB", "HATECLF_WASEEM_DATA", "HATECLF_DAVIDSON_DATA")


def _full_scale_run(tmp_path, dataset, data_paths):
    import json

    out = tmp_path / dataset
    cfg = {
        "dataset": dataset,
        "backend": "pretrained",
        "paths": {"data": data_paths, "weights": os.environ["HATECLF_WEIGHTS"], "vocab": os.environ["HATECLF_VOCAB"]},
        "head": {"kind": "cnn"},
    }
    path = tmp_path / f"{dataset}.json"
    path.write_text(json.dumps(cfg))
    assert cli_main(["train", "--config", str(path), "--out", str(out)]) == 0
    assert cli_main(["eval", "--config", str(path), "--checkpoint", str(out / "checkpoint"),
                     "--manifest", str(out / "test.csv"), "--out", str(out / "eval")]) == 0
    metrics_json = json.loads((out / "eval" / "metrics.json").read_text())
    counts = np.loadtxt(out / "eval" / "confusion_counts.csv", delimiter=",", skiprows=1, usecols=(1, 2, 3))
    return metrics_json["weighted"]["f1"], counts


def test_criterion_8_full_scale_optional(criterion, tmp_path):
    missing = [v for v in FULL_SCALE_ENV if not os.environ.get(v)]
    if missing:
        report(criterion, "optional, not desk scale: needs pretrained base weights and both datasets (set " + ", ".join(missing) + ")")
        pytest.skip("full-scale data not available")
    waseem = [{"path": p.split("=")[0], "variant": p.split("=")[1]} if "=" in p else p
              for p in os.environ["HATECLF_WASEEM_DATA"].split(os.pathsep)]
    f1_w, _ = _full_scale_run(tmp_path, "waseem", waseem)
    f1_d, cm = _full_scale_run(tmp_path, "davidson", [os.environ["HATECLF_DAVIDSON_DATA"]])
    hate_as_offensive = cm[0, 1] / cm[0].sum()
    report(criterion, f"waseem F1 {f1_w:.3f} (>= 0.86), davidson F1 {f1_d:.3f} (>= 0.90), hate->offensive {hate_as_offensive:.0%} (>= 40%)")
    assert f1_w >= 0.86 and f1_d >= 0.90 and hate_as_offensive >= 0.40


if __name__ == "__main__":
    raise SystemExit(pytest.main([str(Path(__file__)), "-v", "-s"]))

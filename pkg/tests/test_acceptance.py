"""Acceptance suite: one test per release criterion.

Each test prints a single [ACCEPTANCE] pass line (visible with `pytest -s`
or `-rA`) and asserts both the criterion and its runtime budget.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from modq import classifiers, corpus, evaluation, moderation, synthetic, uncertainty
from modq.classifiers import TrainConfig, bbb_elbo_and_grad, mlp_loss_and_grad
from modq.cli import main as cli_main
from modq.moderation import ModerationCurve, SyntheticCurveSpec
from modq.service import ModerationService, ServiceConfig, replay_log
from modq.uncertainty import PredictiveSamples
from tests.conftest import csr_from_dense, make_records


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.monotonic()
    yield
    elapsed = time.monotonic() - start
    assert elapsed < budget_s, f"{name} took {elapsed:.1f}s, budget {budget_s}s"
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.1f}s)")


# 1. score functions vs brute force ------------------------------------

def brute_entropy(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def test_score_function_oracle():
    with criterion("score-function oracle (1000 matrices, tol 1e-9)", 5.0):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            t = int(rng.integers(1, 51))
            c = int(rng.integers(2, 21))
            probs = rng.dirichlet(np.ones(c) * rng.uniform(0.2, 4.0), size=t)
            samples = PredictiveSamples(probs, "mcd")
            rows = probs.tolist()
            mean = [sum(col) / t for col in zip(*rows)]

            lc = 1.0 - max(mean)
            top2 = sorted(mean, reverse=True)[:2]
            sm = 1.0 - (top2[0] - top2[1])
            mi = brute_entropy(mean) - sum(brute_entropy(r) for r in rows) / t

            assert abs(uncertainty.least_confidence(np.array(mean)).value - lc) <= 1e-9
            got_lc = uncertainty.score(samples, "lc")[2].value
            got_sm = uncertainty.score(samples, "sm")[2].value
            got_mi = uncertainty.score(samples, "mi")[2].value
            assert abs(got_lc - lc) <= 1e-9
            assert abs(got_sm - sm) <= 1e-9
            assert abs(got_mi - max(0.0, mi)) <= 1e-9
            assert 0.0 <= got_mi <= math.log(c) + 1e-9


# 2. AUC rank statistic vs pair counting --------------------------------

def test_auc_oracle_exact():
    with criterion("AUC oracle (500 record sets, exact equality)", 10.0):
        rng = np.random.default_rng(7)
        done = 0
        while done < 500:
            n = int(rng.integers(2, 201))
            wrong = rng.random(n) < rng.uniform(0.1, 0.9)
            if wrong.all() or not wrong.any():
                continue
            conf = np.round(rng.random(n), int(rng.integers(1, 4)))  # forces ties
            records = make_records([
                (i, 0, int(wrong[i]), float(conf[i]), 0.0) for i in range(n)
            ])
            pos = [r.confidence for r in records if r.correct]
            neg = [r.confidence for r in records if not r.correct]
            wins = sum(1.0 for p in pos for q in neg if p > q)
            ties = sum(1.0 for p in pos for q in neg if p == q)
            brute = (wins + 0.5 * ties) / (len(pos) * len(neg))
            assert evaluation.auc_roc_misclassification(records) == brute
            ranks = evaluation._midranks(np.concatenate([pos, neg]))
            u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2
            assert u / (len(pos) * len(neg)) == brute
            done += 1


# 3. gradient checks -----------------------------------------------------

def _fd_check(loss_fn, param_groups, grads_groups, h=1e-6):
    worst = 0.0
    for params, grads in zip(param_groups, grads_groups):
        for key, arr in params.items():
            flat = arr.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_fn()
                flat[i] = orig - h
                lm = loss_fn()
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                an = grads[key].ravel()[i]
                worst = max(worst, abs(an - fd) / max(abs(an) + abs(fd), 1e-8))
    return worst


def test_gradient_checks():
    with criterion("gradient checks (MLP < 1e-4, BBB < 1e-3)", 30.0):
        rng = np.random.default_rng(12)
        X = csr_from_dense(np.abs(rng.standard_normal((6, 3))) * (rng.random((6, 3)) < 0.8))
        y = rng.integers(0, 2, size=6)
        params = {
            "w1": rng.standard_normal((3, 4)) * 0.6,   # 26 weights total
            "b1": rng.standard_normal(4) * 0.1,
            "w2": rng.standard_normal((4, 2)) * 0.6,
            "b2": rng.standard_normal(2) * 0.1,
        }
        masks = (
            (rng.random(len(X.data)) >= 0.4).astype(np.float64),
            (rng.random((6, 4)) >= 0.4).astype(np.float64),
        )
        _, grads = mlp_loss_and_grad(params, X, y, 1e-3, 0.4, masks)
        worst_mlp = _fd_check(
            lambda: mlp_loss_and_grad(params, X, y, 1e-3, 0.4, masks)[0],
            [params], [grads],
        )
        assert worst_mlp < 1e-4

        mu = {
            "w1": rng.standard_normal((2, 2)) * 0.5,   # 12 weights total
            "b1": rng.standard_normal(2) * 0.1,
            "w2": rng.standard_normal((2, 2)) * 0.5,
            "b2": rng.standard_normal(2) * 0.1,
        }
        rho = {k: rng.normal(-1.2, 0.2, size=v.shape) for k, v in mu.items()}
        Xb = csr_from_dense(np.abs(rng.standard_normal((5, 2))))
        yb = rng.integers(0, 2, size=5)
        eps = [{k: rng.standard_normal(v.shape) for k, v in mu.items()} for _ in range(2)]
        _, gmu, grho = bbb_elbo_and_grad(mu, rho, Xb, yb, 0.9, 0.25, eps)
        worst_bbb = _fd_check(
            lambda: bbb_elbo_and_grad(mu, rho, Xb, yb, 0.9, 0.25, eps)[0],
            [mu, rho], [gmu, grho],
        )
        assert worst_bbb < 1e-3


# 4. moderation curve properties -----------------------------------------

def test_moderation_curve_properties():
    with criterion("moderation-curve properties (200 record sets)", 10.0):
        rng = np.random.default_rng(31)
        for _ in range(200):
            n = int(rng.integers(2, 150))
            distinct = rng.random() < 0.7
            if distinct:
                u = rng.permutation(n) / n
            else:
                u = np.round(rng.random(n), 1)
            correct = rng.random(n) < rng.uniform(0.3, 0.95)
            records = make_records([
                (i, 0, int(not correct[i]), 1.0 - u[i], float(u[i])) for i in range(n)
            ])
            curve = moderation.simulate_moderation_curve(records, grid_step=0.02)
            assert (np.diff(curve.f1) >= 0).all()
            assert curve.f1[0] == evaluation.micro_f1(records)
            assert curve.f1[-1] == 1.0

            m_star = float(rng.uniform(0.05, 0.95))
            ordered = moderation.moderation_order(records)
            k = math.ceil(m_star * n - 1e-9)
            if k >= n:
                continue
            boundary_tied = k > 0 and (
                ordered[k].uncertainty.value == ordered[k - 1].uncertainty.value
            )
            if boundary_tied:
                continue  # round-trip only promised for distinct boundaries
            theta = moderation.threshold_from_load(records, m_star)
            routed = {r.doc_id for r in records if r.uncertainty.value > theta}
            assert routed == {r.doc_id for r in ordered[:k]}


# 5. knee detection closed form -------------------------------------------

def test_knee_closed_form():
    with criterion("knee closed form (b in {3,5,10}, noise 0.003)", 5.0):
        loads = np.linspace(0, 1, 101)
        for b in (3.0, 5.0, 10.0):
            spec = SyntheticCurveSpec(1.0, b, 0.75)
            expected = math.log(b / (1.0 - math.exp(-b))) / b
            assert spec.knee_location() == pytest.approx(expected, abs=1e-12)
            for seed in range(10):
                rng = np.random.default_rng(seed)
                noisy = spec.normalized(loads) + rng.normal(0.0, 0.003, size=101)
                curve = moderation.smooth_curve(ModerationCurve(loads, noisy), degree=5)
                m_star = moderation.find_saturation(curve)
                assert abs(m_star - expected) <= 0.02, (b, seed, m_star, expected)


# 6. paper arithmetic -------------------------------------------------------

def test_paper_effort_savings_arithmetic():
    with criterion("paper arithmetic: effort savings 73.2% +/- 0.5pp", 5.0):
        savings = moderation.effort_savings(0.941, 0.9937, 0.239)
        assert savings * 100 == pytest.approx(73.2, abs=0.5)


# 7. end-to-end desk-scale run ----------------------------------------------

def test_end_to_end_desk_scale(tmp_path):
    with criterion("end-to-end desk-scale run (5 trials, MCD T=50, LC)", 180.0):
        ds = synthetic.generate_corpus(n=2000, ambiguity=0.15, seed=7)
        dominated = 0
        for trial in range(5):
            train, _test, ev = corpus.split_dataset(
                ds, (0.6, 0.2, 0.2), seed=trial, eval_seed=4242
            )
            vocab = corpus.build_vocabulary(train)
            X, y = corpus.feature_matrix(train, vocab)
            cfg = TrainConfig(seed=trial)
            model = classifiers.train_mlp(X, y, ds.num_classes, cfg)
            records = []
            for i, doc in enumerate(ev.documents):
                fv = corpus.vectorize(doc, vocab)
                samples = classifiers.predict_samples(
                    model, fv, "mcd", T=50, seed=1_000_000 * (trial + 1) + i
                )
                label, conf, unc = uncertainty.score(samples, "lc")
                records.append(
                    evaluation.EvaluationRecord(doc.doc_id, doc.label, label, conf, unc)
                )
            f1 = evaluation.micro_f1(records)
            assert 0.80 <= f1 <= 0.95, f"trial {trial}: baseline f1 {f1}"
            curve = moderation.simulate_moderation_curve(records)
            baseline = moderation.random_baseline(f1)(curve.loads)
            grid = curve.loads >= 0.05
            if np.all(curve.f1[grid] >= baseline[grid] - 1e-12):
                dominated += 1
        assert dominated >= math.ceil(0.95 * 5), f"dominance in {dominated}/5 trials"

        # calibration through the real CLI on the bundled corpus
        corpus_path = tmp_path / "bundled.jsonl"
        synthetic.write_jsonl(ds, corpus_path)
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps({
            "dataset": {"path": str(corpus_path)},
            "split": {"ratios": [0.6, 0.2, 0.2], "seed": 0, "eval_seed": 4242},
            "uncertainty": {"mode": "mcd", "passes": 50, "score_functions": ["lc"]},
            "output_dir": str(tmp_path / "out"),
        }))
        assert cli_main(["calibrate", "-c", str(cfg_path)]) == 0
        report = json.loads((tmp_path / "out" / "report_lc.json").read_text())
        assert 0.0 < report["m_star"] < 0.6
        assert report["effort_savings"] > 0.20


# 8. evaluate determinism ----------------------------------------------------

def test_evaluate_determinism(tmp_path):
    with criterion("evaluate determinism (byte-identical reruns)", 120.0):
        corpus_path = tmp_path / "corpus.jsonl"
        synthetic.write_jsonl(synthetic.generate_corpus(n=400, seed=5), corpus_path)
        out = tmp_path / "out"
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps({
            "dataset": {"path": str(corpus_path)},
            "trials": 2,
            "model": {"epochs": 8, "hidden_size": 32},
            "uncertainty": {"passes": 15, "score_functions": ["lc", "mi"]},
            "output_dir": str(out),
        }))
        assert cli_main(["evaluate", "-c", str(cfg_path)]) == 0
        manifest = out / "manifest_evaluate.json"
        first = {
            p.relative_to(out).as_posix(): p.read_bytes()
            for p in out.rglob("*.json") if p.is_file()
        }
        assert cli_main(["evaluate", "-c", str(manifest)]) == 0
        second = {
            p.relative_to(out).as_posix(): p.read_bytes()
            for p in out.rglob("*.json") if p.is_file()
        }
        assert first == second


# 9. service event sourcing ---------------------------------------------------

def test_service_event_sourcing(tmp_path):
    with criterion("service event sourcing (1000 interleavings)", 30.0):
        ds = synthetic.generate_corpus(n=300, seed=11)
        train, _t, _e = corpus.split_dataset(ds, (0.8, 0.1, 0.1), seed=0)
        vocab = corpus.build_vocabulary(train)
        X, y = corpus.feature_matrix(train, vocab)
        model = classifiers.train_mlp(
            X, y, 4, TrainConfig(epochs=5, hidden_size=32, seed=0)
        )
        from modq.cli import build_scorer
        from modq.classifiers import ModelBundle

        config = ServiceConfig(threshold=0.35, score_function="lc", mode="baseline",
                               passes=1, class_names=list(ds.class_names))
        scorer = build_scorer(ModelBundle("mlp", model, vocab, ds.class_names), config)
        svc = ModerationService(config, tmp_path / "events.jsonl", scorer)

        rng = np.random.default_rng(99)
        texts = [d.text for d in ds.documents]
        pending: list[int] = []
        decided: dict[int, int] = {}
        for step in range(1000):
            if pending and rng.random() < 0.45:
                item_id = pending.pop(int(rng.integers(len(pending))))
                label = int(rng.integers(4))
                svc.submit_decision(item_id, label, f"mod{step % 5}")
                decided[item_id] = label
            else:
                item = svc.classify_and_route(texts[int(rng.integers(len(texts)))])
                assert (item.status == "auto") == (item.uncertainty <= 0.35)
                if item.status == "pending":
                    pending.append(item.item_id)

        # boundary case: u == threshold routes to auto
        probe = svc.classify_and_route(texts[0])
        svc.set_threshold(probe.uncertainty)
        boundary = svc.classify_and_route(texts[0])  # baseline scoring is deterministic
        assert boundary.uncertainty == probe.uncertainty
        assert boundary.status == "auto"

        live = svc.snapshot()
        svc.close()
        _config, replayed, _ = replay_log(tmp_path / "events.jsonl")
        assert replayed == live
        for item_id, label in decided.items():
            assert replayed[item_id].status == "resolved"
            assert replayed[item_id].final_label == label
        resolved_ids = [i for i, it in replayed.items() if it.status == "resolved"]
        assert sorted(resolved_ids) == sorted(decided)  # none lost, none duplicated
        assert sorted(replayed) == list(range(len(replayed)))  # ids dense and unique

"""Command-line driver for the moderation pipeline.

Subcommands: synth (bundled corpus), train, evaluate, simulate, calibrate,
serve, report. Every run resolves one JSON config (flags override
individual fields), writes the artifacts for its stage plus a manifest
holding the fully resolved config and its hash, and is bit-reproducible:
re-running with the same manifest rewrites byte-identical files.

Exit codes: 0 success, 1 config or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from modq import classifiers, corpus, evaluation, moderation, synthetic, uncertainty
from modq.classifiers import ModelBundle, TrainConfig
from modq.service import ModerationService, ServiceConfig, serve_http

DEFAULT_CONFIG: dict = {
    "dataset": {"path": None, "format": None},
    "split": {"ratios": [0.6, 0.2, 0.2], "seed": 0, "eval_seed": 1234},
    "trials": 5,
    "model": {
        "kind": "mlp",
        "epochs": 30,
        "batch_size": 32,
        "learning_rate": 0.5,
        "hidden_size": 64,
        "dropout_rate": 0.4,
        "l2_penalty": 1e-5,
        "kl_weight": None,
        "prior_std": 1.0,
        "sigma_init": 0.05,
        "samples_per_step": 1,
        "ensemble_size": 5,
    },
    "uncertainty": {"mode": "mcd", "passes": 50, "score_functions": ["lc"]},
    "vocab": {"max_size": 20000, "min_df": 1},
    "moderation": {"grid_step": 0.01, "degree": 7, "min_knee_height": 0.005},
    "output_dir": "out",
}

_MODE_FOR_KIND = {"mlp": ("baseline", "mcd"), "bbb": ("bbb",), "ensemble": ("ensemble",)}


class ConfigError(ValueError):
    """Configuration problem; the message names the offending field path."""


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Resolve a config file (or a manifest wrapping one) over the defaults."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        if "config" in raw and "command" in raw:  # manifest round-trip
            raw = raw["config"]
    cfg = _merge(DEFAULT_CONFIG, raw)
    for dotted, value in (overrides or {}).items():
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    _validate(cfg)
    return cfg


def _require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{field}: {message}")


def _validate(cfg: dict) -> None:
    _require(cfg["trials"] >= 1, "trials", "must be >= 1")
    ratios = cfg["split"]["ratios"]
    _require(
        isinstance(ratios, list) and len(ratios) == 3 and all(r > 0 for r in ratios),
        "split.ratios", "must be three positive fractions",
    )
    _require(abs(sum(ratios) - 1.0) <= 1e-9, "split.ratios", "must sum to 1")
    kind = cfg["model"]["kind"]
    _require(kind in _MODE_FOR_KIND, "model.kind", "must be mlp, bbb, or ensemble")
    mode = cfg["uncertainty"]["mode"]
    _require(
        mode in _MODE_FOR_KIND[kind],
        "uncertainty.mode", f"{mode!r} is incompatible with model.kind {kind!r}",
    )
    _require(cfg["uncertainty"]["passes"] >= 1, "uncertainty.passes", "must be >= 1")
    fns = cfg["uncertainty"]["score_functions"]
    _require(
        isinstance(fns, list) and fns and all(f in uncertainty.SCORE_FUNCTIONS for f in fns),
        "uncertainty.score_functions", "must be a non-empty subset of lc, sm, mi",
    )
    _require(0 < cfg["moderation"]["grid_step"] <= 0.1, "moderation.grid_step", "must be in (0, 0.1]")
    _require(cfg["moderation"]["degree"] >= 1, "moderation.degree", "must be >= 1")
    _require(cfg["vocab"]["max_size"] >= 1, "vocab.max_size", "must be >= 1")
    _require(cfg["vocab"]["min_df"] >= 1, "vocab.min_df", "must be >= 1")
    try:
        _train_config(cfg, trial=0).validate()
    except ValueError as exc:
        raise ConfigError(f"model: {exc}")


def _train_config(cfg: dict, trial: int) -> TrainConfig:
    m = cfg["model"]
    return TrainConfig(
        epochs=m["epochs"],
        batch_size=m["batch_size"],
        learning_rate=m["learning_rate"],
        hidden_size=m["hidden_size"],
        dropout_rate=m["dropout_rate"],
        l2_penalty=m["l2_penalty"],
        seed=cfg["split"]["seed"] + trial,
        kl_weight=m["kl_weight"],
        prior_std=m["prior_std"],
        sigma_init=m["sigma_init"],
        samples_per_step=m["samples_per_step"],
    )


def _out_dir(cfg: dict) -> Path:
    out = Path(os.environ.get("MODQ_OUT") or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(cfg: dict, command: str, out: Path) -> Path:
    canonical = json.dumps(cfg, sort_keys=True)
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
    }
    path = out / f"manifest_{command}.json"
    _write_json(path, manifest)
    return path


def _load_split(cfg: dict, trial: int):
    ds = corpus.load_dataset(cfg["dataset"]["path"], cfg["dataset"]["format"])
    return ds, corpus.split_dataset(
        ds,
        tuple(cfg["split"]["ratios"]),
        seed=cfg["split"]["seed"] + trial,
        eval_seed=cfg["split"]["eval_seed"],
    )


def _train_for_trial(cfg: dict, trial: int) -> tuple[ModelBundle, "corpus.Dataset"]:
    ds, (train, _test, eval_ds) = _load_split(cfg, trial)
    vocab = corpus.build_vocabulary(train, cfg["vocab"]["max_size"], cfg["vocab"]["min_df"])
    X, y = corpus.feature_matrix(train, vocab)
    tc = _train_config(cfg, trial)
    kind = cfg["model"]["kind"]
    if kind == "mlp":
        model = classifiers.train_mlp(X, y, ds.num_classes, tc)
    elif kind == "bbb":
        model = classifiers.train_bbb(X, y, ds.num_classes, tc)
    else:
        model = classifiers.train_ensemble(X, y, ds.num_classes, tc, cfg["model"]["ensemble_size"])
    return ModelBundle(kind, model, vocab, ds.class_names), eval_ds


def score_eval_set(
    bundle: ModelBundle,
    eval_ds: "corpus.Dataset",
    mode: str,
    passes: int,
    score_functions: list[str],
    seed_base: int,
) -> dict[str, list[evaluation.EvaluationRecord]]:
    """One predictive-sample matrix per document, scored under every
    requested score function."""
    records: dict[str, list[evaluation.EvaluationRecord]] = {fn: [] for fn in score_functions}
    for i, doc in enumerate(eval_ds.documents):
        fv = corpus.vectorize(doc, bundle.vocab)
        samples = classifiers.predict_samples(bundle.model, fv, mode, passes, seed=seed_base + i)
        for fn in score_functions:
            label, confidence, unc = uncertainty.score(samples, fn)
            records[fn].append(
                evaluation.EvaluationRecord(doc.doc_id, doc.label, label, confidence, unc)
            )
    return records


def _trial_records(cfg: dict, trial: int) -> dict[str, list[evaluation.EvaluationRecord]]:
    bundle, eval_ds = _train_for_trial(cfg, trial)
    return score_eval_set(
        bundle, eval_ds,
        cfg["uncertainty"]["mode"], cfg["uncertainty"]["passes"],
        cfg["uncertainty"]["score_functions"], seed_base=1_000_000 * (trial + 1),
    )


def build_scorer(bundle: ModelBundle, config: ServiceConfig):
    """Adapt a model bundle to the service's text scorer interface."""
    if bundle.vocab is None:
        raise ConfigError("model bundle has no vocabulary; retrain with `modq train`")

    def scorer(text: str, seed: int):
        fv = corpus.vectorize(corpus.Document(seed, text, 0), bundle.vocab)
        samples = classifiers.predict_samples(
            bundle.model, fv, config.mode, config.passes, seed=seed
        )
        label, confidence, unc = uncertainty.score(samples, config.score_function)
        probs = uncertainty.mean_predictive(samples)
        return [float(p) for p in probs], label, confidence, unc.value

    return scorer


# -- subcommands -----------------------------------------------------

def cmd_synth(args) -> int:
    ds = synthetic.generate_corpus(args.n, args.ambiguity, args.seed)
    synthetic.write_jsonl(ds, args.out)
    print(f"wrote {len(ds)} documents to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _require_dataset(cfg)
    out = _out_dir(cfg)
    bundle, _ = _train_for_trial(cfg, trial=0)
    model_path = out / "model.json"
    classifiers.save_model(model_path, bundle)
    write_manifest(cfg, "train", out)
    print(f"trained {bundle.kind} model -> {model_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _require_dataset(cfg)
    out = _out_dir(cfg)
    per_fn: dict[str, list[dict]] = {fn: [] for fn in cfg["uncertainty"]["score_functions"]}
    for trial in range(cfg["trials"]):
        trial_dir = out / f"trial_{trial}"
        trial_dir.mkdir(exist_ok=True)
        for fn, records in _trial_records(cfg, trial).items():
            metrics = evaluation.metrics_report(records)
            _write_json(trial_dir / f"metrics_{fn}.json", {
                "trial": trial, "seed": cfg["split"]["seed"] + trial,
                "score_function": fn, "metrics": metrics,
            })
            per_fn[fn].append(metrics)
    for fn, rows in per_fn.items():
        summary = _summarize(fn, rows)
        _write_json(out / f"summary_{fn}.json", summary)
        print(f"[{fn}] " + "  ".join(f"{k}={v}" for k, v in summary["cells"].items()))
    write_manifest(cfg, "evaluate", out)
    return 0


def _summarize(fn: str, rows: list[dict]) -> dict:
    keys = ["f1", "auc_roc", "mean_conf_mis", "mean_conf_suc", "range"]
    cells = {}
    for key in keys:
        values = np.array([row[key] for row in rows])
        cells[key] = f"{values.mean():.2f}|{values.std():.2f}"
    return {"score_function": fn, "trials": len(rows), "cells": cells}


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _require_dataset(cfg)
    out = _out_dir(cfg)
    for fn, records in _trial_records(cfg, trial=0).items():
        curve = moderation.smooth_curve(
            moderation.simulate_moderation_curve(records, cfg["moderation"]["grid_step"]),
            cfg["moderation"]["degree"],
        )
        moderation.write_curve_csv(out / f"curve_{fn}.csv", curve)
        print(f"[{fn}] curve -> {out / f'curve_{fn}.csv'}")
    write_manifest(cfg, "simulate", out)
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    _require_dataset(cfg)
    out = _out_dir(cfg)
    bundle, eval_ds = _train_for_trial(cfg, trial=0)
    model_path = out / "model.json"
    classifiers.save_model(model_path, bundle)
    records = score_eval_set(
        bundle, eval_ds,
        cfg["uncertainty"]["mode"], cfg["uncertainty"]["passes"],
        cfg["uncertainty"]["score_functions"], seed_base=1_000_000,
    )
    for fn, recs in records.items():
        report, curve = moderation.build_report(
            recs, fn,
            cfg["moderation"]["grid_step"], cfg["moderation"]["degree"],
            cfg["moderation"]["min_knee_height"],
        )
        _write_json(out / f"report_{fn}.json", moderation.report_to_dict(report))
        moderation.write_curve_csv(out / f"curve_{fn}.csv", curve)
        print(
            f"[{fn}] threshold = {report.threshold:.6f}  m* = {report.m_star:.2f}  "
            f"f1 {report.f1_0:.4f} -> {report.f1_at_m_star:.4f}  "
            f"savings vs random = {100 * report.effort_savings:.1f}%"
        )
    write_manifest(cfg, "calibrate", out)
    return 0


def cmd_report(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _out_dir(cfg)
    merged_any = False
    for fn in cfg["uncertainty"]["score_functions"]:
        rows = []
        for trial_dir in sorted(out.glob("trial_*")):
            metrics_file = trial_dir / f"metrics_{fn}.json"
            if metrics_file.exists():
                rows.append(json.loads(metrics_file.read_text())["metrics"])
        if not rows:
            continue
        merged_any = True
        summary = _summarize(fn, rows)
        _write_json(out / f"summary_{fn}.json", summary)
        print(f"[{fn}] trials={summary['trials']} " + "  ".join(
            f"{k}={v}" for k, v in summary["cells"].items()
        ))
    if not merged_any:
        raise ConfigError(f"output_dir: no trial metrics found under {out}")
    write_manifest(cfg, "report", out)
    return 0


def prepare_service(args):
    """Build the configured service and HTTP server without starting it."""
    bundle = classifiers.load_model(args.model)
    if args.report:
        report = json.loads(Path(args.report).read_text())
        threshold = moderation.decode_threshold(report["threshold"])
        score_function = report.get("score_function", "lc")
    elif args.threshold is not None:
        threshold = moderation.decode_threshold(args.threshold)
        score_function = args.score_function
    else:
        raise ConfigError("serve: need --report or --threshold")
    config = ServiceConfig(
        threshold=threshold,
        score_function=score_function,
        mode=args.mode,
        passes=args.passes,
        model_ref=str(args.model),
        class_names=bundle.class_names or [],
    )
    service = ModerationService(config, args.log, build_scorer(bundle, config))
    server = serve_http(service, args.host, args.port, args.static)
    return service, server


def cmd_serve(args) -> int:
    service, server = prepare_service(args)
    print(f"serving on http://{args.host}:{server.server_address[1]}  "
          f"(threshold={service.config.to_dict()['threshold']}, log={args.log})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.close()
    return 0


def _require_dataset(cfg: dict) -> None:
    if not cfg["dataset"]["path"]:
        raise ConfigError("dataset.path: required")


def _overrides(args) -> dict:
    mapping = {
        "out": "output_dir",
        "trials": "trials",
        "seed": "split.seed",
        "grid_step": "moderation.grid_step",
        "degree": "moderation.degree",
        "mode": "uncertainty.mode",
        "kind": "model.kind",
        "epochs": "model.epochs",
    }
    out = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[dotted] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modq", description="uncertainty-moderated text classification"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name: str, handler, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="experiment config or manifest JSON")
        p.add_argument("-o", "--out", help="output directory (or env MODQ_OUT)")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--grid-step", dest="grid_step", type=float)
        p.add_argument("--degree", type=int)
        p.add_argument("--mode", choices=["baseline", "mcd", "bbb", "ensemble"])
        p.add_argument("--kind", choices=["mlp", "bbb", "ensemble"])
        p.add_argument("--epochs", type=int)
        p.set_defaults(func=handler)
        return p

    p = sub.add_parser("synth", help="write the bundled synthetic corpus")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--ambiguity", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    experiment("train", cmd_train, "train a model and save the bundle")
    experiment("evaluate", cmd_evaluate, "per-trial metrics plus mean|std summary")
    experiment("simulate", cmd_simulate, "moderation curves as CSV")
    experiment("calibrate", cmd_calibrate, "saturation report and threshold")
    experiment("report", cmd_report, "merge per-trial metrics into summaries")

    p = sub.add_parser("serve", help="run the live moderation service")
    p.add_argument("-m", "--model", required=True, help="model bundle JSON")
    p.add_argument("-r", "--report", help="saturation report JSON (threshold source)")
    p.add_argument("--threshold", help="explicit threshold (number or '-inf')")
    p.add_argument("--score-function", dest="score_function", default="lc",
                   choices=list(uncertainty.SCORE_FUNCTIONS))
    p.add_argument("--mode", default="mcd", choices=["baseline", "mcd", "bbb", "ensemble"])
    p.add_argument("--passes", type=int, default=50)
    p.add_argument("--log", default="moderation_events.jsonl")
    p.add_argument("--static", help="directory with the built moderator UI")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

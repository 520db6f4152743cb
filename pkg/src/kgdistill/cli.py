"""Command-line pipeline: gen-synth, pretrain, train-student, eval, report.

Set KGDISTILL_THREADS to cap the BLAS thread pool; it must take effect before
numpy loads, which is why this module configures the environment first.
"""
from __future__ import annotations

import os


def _configure_threads() -> None:
    count = os.environ.get("KGDISTILL_THREADS")
    if count:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, count)


_configure_threads()

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .artifacts import (
    RunManifest,
    fingerprint_paths,
    prepare_run_dir,
    render_report,
    write_loss_trace,
    write_manifest,
    write_metrics_json,
    write_pretrain_losses,
    write_rank_dump,
    write_reward_curve,
    write_strategy_stats,
)
from .checkpoint import (
    EnsembleManifest,
    load_ensemble,
    load_model,
    save_ensemble,
    save_logit_cache,
    save_model,
    save_policy,
)
from .config import KdVariant, Strategy, TrainConfig, load_config
from .evaluation import evaluate
from .features import apply_missing_mask, read_feature_file, synth_features, write_feature_file
from .kg import dataset_filter_index, load_dataset, write_triples, write_vocab
from .synth import generate_kg
from .teachers import MODALITIES, TeacherLogitCache, build_ensemble, pretrain
from .training import student_scorer, train_student

log = logging.getLogger(__name__)

DATA_FILES = {
    "train": "train.tsv",
    "valid": "valid.tsv",
    "test": "test.tsv",
    "visual": "visual.feat",
    "textual": "textual.feat",
}


def _data_paths(args, need_features: bool) -> dict[str, Path]:
    paths = {}
    for key in ("train", "valid", "test"):
        override = getattr(args, key, None)
        if override:
            paths[key] = Path(override)
        elif args.data_dir:
            paths[key] = Path(args.data_dir) / DATA_FILES[key]
        else:
            raise SystemExit(f"either --data-dir or --{key} is required")
        if not paths[key].exists():
            raise SystemExit(f"{key} split file not found: {paths[key]}")
    if need_features:
        for key in ("visual", "textual"):
            override = getattr(args, f"{key}_features", None)
            if override:
                paths[key] = Path(override)
            elif args.data_dir:
                paths[key] = Path(args.data_dir) / DATA_FILES[key]
            else:
                raise SystemExit(f"either --data-dir or --{key}-features is required")
            if not paths[key].exists():
                raise SystemExit(f"{key} feature file not found: {paths[key]}")
    return paths


_CONFIG_FLAGS = (
    "dim", "learning_rate", "batch_size", "epochs", "seed", "gamma", "tau", "alpha", "beta",
    "policy_hidden", "policy_lr", "strategy", "kd_variant", "missing_rate", "eval_every",
    "l2_weight",
)


def _build_config(args) -> TrainConfig:
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    if getattr(args, "temperature_sq_scale", False):
        overrides["temperature_sq_scale"] = True
    if getattr(args, "no_standardize_state", False):
        overrides["standardize_state"] = False
    if getattr(args, "cache_teacher_logits", False):
        overrides["cache_teacher_logits"] = True
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--dim", type=int, help="complex embedding dimension")
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float, help="distillation weight")
    p.add_argument("--tau", type=float, help="distillation temperature")
    p.add_argument("--alpha", type=float, help="neighbor-KD weight")
    p.add_argument("--beta", type=float, help="non-neighbor-KD weight")
    p.add_argument("--policy-hidden", type=int)
    p.add_argument("--policy-lr", type=float)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--kd-variant", choices=[v.value for v in KdVariant])
    p.add_argument("--missing-rate", type=float, help="fraction of masked feature rows")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--l2-weight", type=float)
    p.add_argument("--temperature-sq-scale", action="store_true",
                   help="rescale KD terms by tau^2 (off by default)")
    p.add_argument("--no-standardize-state", action="store_true",
                   help="feed raw teacher scores to the policy")


def _add_data_flags(p: argparse.ArgumentParser, need_features: bool) -> None:
    p.add_argument("--data-dir", help="directory with train.tsv/valid.tsv/test.tsv")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    if need_features:
        p.add_argument("--visual-features")
        p.add_argument("--textual-features")


def cmd_gen_synth(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    synth = generate_kg(
        num_entities=args.entities,
        num_relations=args.relations,
        num_triples=args.triples,
        num_clusters=args.clusters,
        seed=args.seed,
        window=args.window,
    )
    for split in ("train", "valid", "test"):
        write_triples(out / DATA_FILES[split], synth.splits_named[split])
    visual, textual = synth_features(
        synth.dataset,
        args.feature_dim,
        args.signal_modalities,
        noise_seed=args.seed,
        structure=synth.structure,
    )
    write_feature_file(visual, out / DATA_FILES["visual"])
    write_feature_file(textual, out / DATA_FILES["textual"])
    write_vocab(out / "entities.tsv", synth.dataset.entities)
    write_vocab(out / "relations.tsv", synth.dataset.relations)
    with open(out / "clusters.tsv", "w", encoding="utf-8") as f:
        for name, cluster in zip(synth.dataset.entities.names, synth.clusters):
            f.write(f"{name}\t{cluster}\n")
    summary = {
        "entities": synth.dataset.num_entities,
        "relations": synth.dataset.num_relations,
        "triples": {k: len(v) for k, v in synth.splits_named.items()},
        "clusters": args.clusters,
        "feature_dim": args.feature_dim,
        "signal_modalities": args.signal_modalities,
        "seed": args.seed,
        "fingerprint": fingerprint_paths(
            out / DATA_FILES[k] for k in ("train", "valid", "test", "visual", "textual")
        ),
    }
    (out / "synth.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    log.info("wrote synthetic dataset to %s", out)
    return out


def cmd_pretrain(args) -> Path:
    config = _build_config(args)
    paths = _data_paths(args, need_features=True)
    fingerprint = fingerprint_paths(paths[k] for k in ("train", "valid", "test", "visual", "textual"))
    manifest = RunManifest(config=config.to_dict(), dataset_fingerprint=fingerprint, seed=config.seed)
    run_dir = prepare_run_dir(args.out_dir, manifest)

    t0 = time.monotonic()
    dataset = load_dataset(paths["train"], paths["valid"], paths["test"])
    visual = read_feature_file(paths["visual"])
    textual = read_feature_file(paths["textual"])
    if visual.modality != "visual" or textual.modality != "textual":
        raise SystemExit("feature files carry the wrong modality tags")
    if config.missing_rate > 0.0:
        visual = apply_missing_mask(visual, config.missing_rate, seed=config.seed * 2 + 1)
        textual = apply_missing_mask(textual, config.missing_rate, seed=config.seed * 2 + 2)
    filter_index = dataset_filter_index(dataset)
    manifest.timings["load"] = time.monotonic() - t0

    t0 = time.monotonic()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    ensemble = build_ensemble(dataset, visual, textual, config.dim, rng)
    best, history = pretrain(ensemble, dataset, filter_index, config, rng)
    manifest.timings["pretrain"] = time.monotonic() - t0

    save_ensemble(
        run_dir / "teachers.ckpt",
        best,
        EnsembleManifest(
            modalities=MODALITIES,
            dim=config.dim,
            num_entities=dataset.num_entities,
            num_rels_aug=2 * dataset.num_relations,
            feature_dims={"visual": visual.dim, "textual": textual.dim},
            best_epoch=history.best_epoch,
            best_val_mrr=history.best_val_mrr,
            standardize_state=config.standardize_state,
        ),
    )
    write_pretrain_losses(run_dir / "pretrain_loss.csv", history.epoch_losses, MODALITIES, manifest.hash)
    val_payload = {
        "best_epoch": history.best_epoch,
        "best_val_mrr": history.best_val_mrr,
        "manifest": manifest.hash,
    }
    (run_dir / "teacher_valid_metrics.json").write_text(
        json.dumps(val_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(run_dir, manifest)
    log.info("teachers saved under %s", run_dir)
    return run_dir


def cmd_train_student(args) -> Path:
    config = _build_config(args)
    paths = _data_paths(args, need_features=False)
    teachers_path = Path(args.teachers)
    if not teachers_path.exists():
        raise SystemExit(f"teacher checkpoint not found: {teachers_path}")
    fingerprint = fingerprint_paths([paths["train"], paths["valid"], paths["test"], teachers_path])
    manifest = RunManifest(config=config.to_dict(), dataset_fingerprint=fingerprint, seed=config.seed)
    run_dir = prepare_run_dir(args.out_dir, manifest)

    t0 = time.monotonic()
    dataset = load_dataset(paths["train"], paths["valid"], paths["test"])
    ensemble, ens_manifest = load_ensemble(teachers_path)
    if ens_manifest.num_entities != dataset.num_entities:
        raise SystemExit(
            f"teacher checkpoint covers {ens_manifest.num_entities} entities, dataset has {dataset.num_entities}"
        )
    if ens_manifest.standardize_state != config.standardize_state:
        log.warning(
            "state standardization differs from the teachers' record (%s)",
            ens_manifest.standardize_state,
        )
    filter_index = dataset_filter_index(dataset)
    manifest.timings["load"] = time.monotonic() - t0

    t0 = time.monotonic()
    result = train_student(dataset, ensemble, config, filter_index)
    manifest.timings["train"] = time.monotonic() - t0

    save_model(run_dir / "student.ckpt", result.student)
    save_model(run_dir / "student_final.ckpt", result.final_student)
    save_policy(run_dir / "policy.ckpt", result.policy)
    if config.cache_teacher_logits:
        cache = TeacherLogitCache.build(ensemble, dataset.train_aug)
        save_logit_cache(run_dir / "teacher_logits.cache", cache.queries, cache.logits)
    write_loss_trace(run_dir / "loss_trace.csv", result.loss_trace, manifest.hash)
    write_reward_curve(run_dir / "reward_curve.csv", result.reward_curve, manifest.hash)
    write_strategy_stats(run_dir / "strategy_stats.csv", result.strategy_stats, manifest.hash)
    summary = {
        "best_epoch": result.best_epoch,
        "best_val_mrr": result.best_val_mrr,
        "manifest": manifest.hash,
    }
    (run_dir / "student_valid.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(run_dir, manifest)
    log.info("student saved under %s", run_dir)
    return run_dir


def cmd_eval(args) -> Path:
    paths = _data_paths(args, need_features=False)
    student_path = Path(args.student)
    if not student_path.exists():
        raise SystemExit(f"student checkpoint not found: {student_path}")
    config = {"split": args.split}
    fingerprint = fingerprint_paths([paths["train"], paths["valid"], paths["test"], student_path])
    manifest = RunManifest(config=config, dataset_fingerprint=fingerprint, seed=0)
    run_dir = prepare_run_dir(args.out_dir, manifest)

    t0 = time.monotonic()
    dataset = load_dataset(paths["train"], paths["valid"], paths["test"])
    student = load_model(student_path)
    if student.entities.count != dataset.num_entities:
        raise SystemExit(
            f"student checkpoint covers {student.entities.count} entities, dataset has {dataset.num_entities}"
        )
    filter_index = dataset_filter_index(dataset)
    split = getattr(dataset, args.split)
    metrics, records = evaluate(
        student_scorer(student), split, filter_index, dataset.num_relations, collect_ranks=True
    )
    manifest.timings["eval"] = time.monotonic() - t0

    write_metrics_json(run_dir / f"metrics_{args.split}.json", metrics, manifest.hash)
    write_rank_dump(run_dir / f"ranks_{args.split}.csv", records, manifest.hash)
    write_manifest(run_dir, manifest)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return run_dir


def cmd_report(args) -> None:
    text = render_report(Path(args.run_dir))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgdistill",
        description="Train and evaluate a distilled knowledge-graph reasoning student",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a clustered synthetic MKG with features")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--relations", type=int, default=10)
    p.add_argument("--triples", type=int, default=1800)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--window", type=int, default=4, help="true tails per query")
    p.add_argument("--feature-dim", type=int, default=48)
    p.add_argument("--signal-modalities", type=int, default=1, choices=(0, 1, 2))
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("pretrain", help="pre-train the three modality teachers")
    _add_data_flags(p, need_features=True)
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-student", help="train the distilled student and policy")
    _add_data_flags(p, need_features=False)
    _add_config_flags(p)
    p.add_argument("--teachers", required=True, help="teacher ensemble checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cache-teacher-logits", action="store_true",
                   help="precompute per-query teacher logits (compute-light mode)")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("eval", help="filtered link-prediction metrics for a student checkpoint")
    _add_data_flags(p, need_features=False)
    p.add_argument("--student", required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge a run directory's artifacts into Markdown")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())

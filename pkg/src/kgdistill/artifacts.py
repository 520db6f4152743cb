"""Run manifests and artifact writers.

A run directory is named by the manifest hash: the SHA-256 of the config
snapshot, dataset fingerprint, seed, and engine version (wall-clock timings
are recorded in the manifest but excluded from the hash so identical seeded
runs stay byte-identical).  Every CSV starts with a ``# manifest: <hash>``
line and every JSON artifact carries a ``manifest`` field.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .evaluation import Metrics, RankRecord
from .policy import NUM_ACTIONS, Action
from .training import EpochTrace, RewardPoint, StrategyStats

_LETTERS = ("s", "v", "d")


def action_label(index: int) -> str:
    return "".join(_LETTERS[m] for m in Action(index).subset)


ACTION_LABELS = tuple(action_label(i) for i in range(NUM_ACTIONS))


def fingerprint_paths(paths: Iterable[str | Path]) -> str:
    digest = hashlib.sha256()
    for path in paths:
        path = Path(path)
        digest.update(path.name.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(path.read_bytes())
        digest.update(b"\x01")
    return digest.hexdigest()


@dataclass
class RunManifest:
    config: dict
    dataset_fingerprint: str
    seed: int
    version: str = __version__
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        stable = {
            "config": self.config,
            "dataset_fingerprint": self.dataset_fingerprint,
            "seed": self.seed,
            "version": self.version,
        }
        blob = json.dumps(stable, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "hash": self.hash,
            "config": self.config,
            "dataset_fingerprint": self.dataset_fingerprint,
            "seed": self.seed,
            "version": self.version,
            "timings": self.timings,
        }


def prepare_run_dir(out_dir: str | Path, manifest: RunManifest) -> Path:
    run_dir = Path(out_dir) / manifest.hash
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_manifest(run_dir: Path, manifest: RunManifest) -> Path:
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _open_csv(path: Path, manifest_hash: str, header: Sequence[str]):
    f = open(path, "w", encoding="utf-8", newline="")
    f.write(f"# manifest: {manifest_hash}\n")
    writer = csv.writer(f)
    writer.writerow(header)
    return f, writer


def write_metrics_json(path: Path, metrics: Metrics, manifest_hash: str) -> None:
    payload = dict(metrics.to_dict())
    payload["manifest"] = manifest_hash
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_rank_dump(path: Path, records: Iterable[RankRecord], manifest_hash: str) -> None:
    f, writer = _open_csv(path, manifest_hash, ["head", "rel", "tail", "direction", "rank"])
    with f:
        for rec in records:
            writer.writerow([rec.head, rec.rel, rec.tail, rec.direction, rec.rank])


def write_loss_trace(path: Path, trace: Iterable[EpochTrace], manifest_hash: str) -> None:
    f, writer = _open_csv(path, manifest_hash, ["epoch", "ce", "rc", "nekd", "nnkd", "kd_total"])
    with f:
        for row in trace:
            writer.writerow(
                [row.epoch, f"{row.ce:.6f}", f"{row.rc:.6f}", f"{row.nekd:.6f}",
                 f"{row.nnkd:.6f}", f"{row.kd_total:.6f}"]
            )


def write_reward_curve(path: Path, curve: Iterable[RewardPoint], manifest_hash: str) -> None:
    f, writer = _open_csv(path, manifest_hash, ["step", "mean_delta"])
    with f:
        for point in curve:
            writer.writerow([point.step, f"{point.mean_delta:.6f}"])


def write_strategy_stats(path: Path, stats: Iterable[StrategyStats], manifest_hash: str) -> None:
    f, writer = _open_csv(path, manifest_hash, ["epoch", *ACTION_LABELS])
    with f:
        for row in stats:
            writer.writerow([row.epoch, *(f"{x:.6f}" for x in row.fractions)])


def write_pretrain_losses(
    path: Path, losses: Iterable[Sequence[float]], modalities: Sequence[str], manifest_hash: str
) -> None:
    f, writer = _open_csv(path, manifest_hash, ["epoch", *(f"ce_{m}" for m in modalities)])
    with f:
        for epoch, row in enumerate(losses, start=1):
            writer.writerow([epoch, *(f"{x:.6f}" for x in row)])


def read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    """Read an artifact CSV, skipping the manifest comment line."""
    with open(path, encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def render_report(run_dir: Path) -> str:
    """Merge a run directory's artifacts into a Markdown summary."""
    run_dir = Path(run_dir)
    parts: list[str] = []
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        parts.append(f"# Run {manifest['hash']}")
        parts.append("")
        parts.append(f"* engine version: {manifest['version']}")
        parts.append(f"* seed: {manifest['seed']}")
        parts.append(f"* dataset fingerprint: `{manifest['dataset_fingerprint'][:16]}...`")
        timings = manifest.get("timings", {})
        for phase, secs in timings.items():
            parts.append(f"* {phase}: {secs:.2f}s")
        parts.append("")
        config = manifest.get("config", {})
        if config:
            parts.append("## Config")
            parts.append("")
            parts.append("| key | value |")
            parts.append("| --- | --- |")
            for key in sorted(config):
                parts.append(f"| {key} | {config[key]} |")
            parts.append("")

    for name in sorted(run_dir.glob("*.json")):
        if name.name == "manifest.json":
            continue
        payload = json.loads(name.read_text(encoding="utf-8"))
        if "mrr" in payload:
            parts.append(f"## Metrics: {name.stem}")
            parts.append("")
            parts.append("| metric | value |")
            parts.append("| --- | --- |")
            for key in ("mrr", "mr", "hits1", "hits3", "hits10", "count"):
                if key in payload:
                    parts.append(f"| {key} | {payload[key]} |")
            parts.append("")

    for csv_name, title in (
        ("pretrain_loss.csv", "Teacher pre-training loss (last 5 epochs)"),
        ("loss_trace.csv", "Student loss trace (last 5 epochs)"),
        ("strategy_stats.csv", "Strategy fractions (last 5 epochs)"),
    ):
        path = run_dir / csv_name
        if not path.exists():
            continue
        header, rows = read_csv_rows(path)
        parts.append(f"## {title}")
        parts.append("")
        parts.append("| " + " | ".join(header) + " |")
        parts.append("| " + " | ".join("---" for _ in header) + " |")
        for row in rows[-5:]:
            parts.append("| " + " | ".join(row) + " |")
        parts.append("")

    reward_path = run_dir / "reward_curve.csv"
    if reward_path.exists():
        _, rows = read_csv_rows(reward_path)
        if rows:
            deltas = [float(r[1]) for r in rows]
            q = max(1, len(deltas) // 4)
            parts.append("## Reward curve")
            parts.append("")
            parts.append(f"* steps: {len(deltas)}")
            parts.append(f"* first-quartile mean delta: {sum(deltas[:q]) / q:.4f}")
            parts.append(f"* last-quartile mean delta: {sum(deltas[-q:]) / q:.4f}")
            parts.append("")
    return "\n".join(parts) + "\n"

"""End-to-end K-stage pipeline: data, training strategies, evaluation, artifacts.

A run directory holds, per stage: model checkpoints, the replay memories, the
prototype store, a pseudo-label audit log, training curves, predictions on the
accumulated test set, and a metrics report. Runs resume from the last
completed stage; `sweep` repeats a run over several type-partition
permutations and aggregates mean/std per metric.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import arguments as arguments_mod
from . import corpus as corpus_mod
from . import detection as detection_mod
from . import evaluation
from .arguments import ArgumentModel, ArgumentTrainConfig, load_argument_model, save_argument_model
from .config import RunConfig
from .corpus import TaskStream, TaskView, TokenizedSentence
from .detection import (
    DetectionModel,
    DetectionTrainConfig,
    DistillationConfig,
    PseudoLabelConfig,
    PseudoLabelRecord,
    load_detection_model,
    predict_mentions,
    prototype_store_to_json,
    save_detection_model,
)
from .encoder import EncoderConfig, ToyTokenEncoder, Vocabulary
from .evaluation import F1Matrix, PRF, bwt
from .memory import MemoryStore

logger = logging.getLogger(__name__)


class CheckpointError(RuntimeError):
    """A run directory exists but its state cannot be loaded or does not match."""


# ---------------------------------------------------------------------------
# Strategy plumbing.
# ---------------------------------------------------------------------------


def _detection_cfg(config: RunConfig, continual: bool) -> DetectionTrainConfig:
    return DetectionTrainConfig(
        epochs=config.epochs,
        warmup_epochs=config.warmup_epochs,
        batch_size=config.batch_size,
        lr_encoder=config.lr_encoder,
        lr_classifier=config.lr_classifier,
        pseudo=PseudoLabelConfig(tau=config.tau),
        distill=DistillationConfig(alpha=config.alpha, beta=config.beta, L=config.attention_depth),
        long_tail_fraction=config.long_tail_fraction,
        memory_size=config.memory_size if continual else 0,
        enable_da=config.da and continual,
        enable_afd=config.afd and config.pkd and continual,
        enable_spd=config.spd and config.pkd and continual,
        enable_pkt=config.pkt and continual,
        seed=config.model_seed,
    )


def _argument_cfg(config: RunConfig, continual: bool) -> ArgumentTrainConfig:
    return ArgumentTrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr_arguments=config.lr_arguments,
        lr_entities=config.lr_entities,
        memory_size=config.memory_size if continual else 0,
        seed=config.model_seed,
    )


def _build_detection_model(config: RunConfig, vocab: Vocabulary) -> DetectionModel:
    encoder_cfg = EncoderConfig(
        n_layers=config.encoder_layers,
        n_heads=config.encoder_heads,
        d=config.encoder_dim,
        L=min(config.attention_depth, config.encoder_layers),
        dropout_rate=config.dropout,
        seed=config.model_seed,
        max_len=config.max_len,
    )
    encoder = ToyTokenEncoder(vocab, encoder_cfg)
    return DetectionModel(encoder, config.feature_dim, config.dropout, seed=config.model_seed)


def _build_argument_model(config: RunConfig, vocab: Vocabulary, schema) -> ArgumentModel:
    def enc(seed_offset: int) -> ToyTokenEncoder:
        return ToyTokenEncoder(
            vocab,
            EncoderConfig(
                n_layers=config.encoder_layers,
                n_heads=config.encoder_heads,
                d=config.encoder_dim,
                L=min(config.attention_depth, config.encoder_layers),
                dropout_rate=config.dropout,
                seed=config.model_seed + seed_offset,
                max_len=config.max_len,
            ),
        )

    return ArgumentModel(
        enc(101), enc(202), config.feature_dim, schema.roles_of,
        config.dropout, seed=config.model_seed,
    )


def merged_train_view(stream: TaskStream, stage: int) -> list[TokenizedSentence]:
    """Union of train views 1..stage with visible annotations merged per
    sentence, simulating re-training on everything seen so far."""
    merged: dict[str, list] = {}
    order: list[str] = []
    for g in range(stage):
        for sentence in stream.tasks[g].train:
            if sentence.sentence_id not in merged:
                merged[sentence.sentence_id] = list(sentence.events)
                order.append(sentence.sentence_id)
            else:
                known = {(ev.trigger_span(), ev.event_type) for ev in merged[sentence.sentence_id]}
                merged[sentence.sentence_id].extend(
                    ev for ev in sentence.events
                    if (ev.trigger_span(), ev.event_type) not in known
                )
    out = []
    for sid in order:
        base = stream.gold_by_id[sid]
        out.append(base.with_events(tuple(merged[sid])))
    return out


def joint_stream(stream: TaskStream, stage: int) -> TaskStream:
    """Single-task stream over everything seen through `stage`, so the joint
    baseline can reuse the stage trainer as plain supervised training."""
    seen = stream.seen_types(stage)
    view = TaskView(
        task_types=seen,
        train=merged_train_view(stream, stage),
        dev=stream.accumulated_dev(stage),
        test=stream.accumulated_test(stage),
    )
    return TaskStream(
        schema=stream.schema,
        n_tasks=1,
        type_partition=(seen,),
        tasks=[view],
        permutation_seed=stream.permutation_seed,
        train_type_counts=dict(stream.train_type_counts),
        gold_by_id=stream.gold_by_id,
    )


# ---------------------------------------------------------------------------
# Stage evaluation.
# ---------------------------------------------------------------------------


def _pseudo_stats(records: Sequence[PseudoLabelRecord], stream: TaskStream) -> dict:
    """Score pseudo labels against the withheld (masked) gold annotations."""
    correct = 0
    for rec in records:
        gold = stream.gold_by_id.get(rec.sentence_id)
        if gold is None:
            continue
        if any(
            rec.token in ev.trigger_tokens() and ev.event_type == rec.event_type
            for ev in gold.events
        ):
            correct += 1
    total = len(records)
    return {
        "count": total,
        "correct": correct,
        "precision": correct / total if total else None,
    }


def evaluate_detection_stage(
    model: DetectionModel, stream: TaskStream, stage: int, long_tail_fraction: float
) -> tuple[evaluation.StageReport, dict[int, float], dict]:
    """Returns (stage report, per-task F1 row, accumulated-test predictions)."""
    seen = set(stream.seen_types(stage))
    acc_test = stream.accumulated_test(stage)
    preds = predict_mentions(model, acc_test)
    gold = evaluation.gold_trigger_mentions(acc_test, types=seen)
    det = evaluation.detection_f1(preds, gold)

    counts = {t: stream.train_type_counts.get(t, 0) for t in sorted(seen)}
    tail = set(detection_mod.long_tail_types(counts, long_tail_fraction))
    tail_prf = evaluation.long_tail_slice(preds, gold, tail)

    per_type = Counter(etype for mentions in gold.values() for (_, etype) in mentions)

    f1_row: dict[int, float] = {}
    for j in range(1, stage + 1):
        task_types = set(stream.type_partition[j - 1])
        test_j = stream.tasks[j - 1].test
        gold_j = evaluation.gold_trigger_mentions(test_j, types=task_types)
        preds_j = {
            s.sentence_id: [m for m in preds[s.sentence_id] if m[1] in task_types]
            for s in test_j
        }
        f1_row[j] = evaluation.detection_f1(preds_j, gold_j).f1

    report = evaluation.StageReport(
        stage=stage,
        detection=det,
        long_tail=tail_prf,
        per_type_gold_counts=dict(per_type),
    )
    return report, f1_row, preds


def evaluate_argument_stage(
    arg_model: ArgumentModel,
    det_preds: dict,
    stream: TaskStream,
    stage: int,
) -> tuple[PRF, dict[str, list]]:
    """Argument triples extracted for the detected event types, scored against
    gold triples of the seen types."""
    seen = set(stream.seen_types(stage))
    acc_test = stream.accumulated_test(stage)
    gold = evaluation.gold_argument_triples(acc_test, types=seen)
    preds: dict[str, list] = {}
    for sentence in acc_test:
        detected = sorted({etype for (_, etype) in det_preds[sentence.sentence_id]})
        detected = [t for t in detected if t in arg_model.heads]
        found = arg_model.extract_arguments(sentence, detected)
        preds[sentence.sentence_id] = [
            (etype, (span.start, span.end), role) for etype, span, role in found
        ]
    return evaluation.argument_f1(preds, gold), preds


def _predictions_jsonl(
    acc_test: Sequence[TokenizedSentence],
    det_preds: dict,
    arg_preds: dict | None,
) -> list[dict]:
    rows = []
    for sentence in acc_test:
        sid = sentence.sentence_id
        by_type: dict[str, list] = {}
        if arg_preds is not None:
            for etype, span, role in arg_preds.get(sid, []):
                by_type.setdefault(etype, []).append({"span": list(span), "role": role})
        events = [
            {"type": etype, "trigger": list(span), "args": by_type.get(etype, [])}
            for span, etype in det_preds.get(sid, [])
        ]
        rows.append({"id": sid, "events": events})
    return rows


# ---------------------------------------------------------------------------
# Run directory layout and state.
# ---------------------------------------------------------------------------


def _stage_dir(out: Path, stage: int) -> Path:
    return out / f"stage_{stage}"


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _prf_json(prf: PRF | None) -> list | None:
    return None if prf is None else [prf.precision, prf.recall, prf.f1]


def _load_stage_state(out: Path, stage: int, has_args: bool):
    """Reload models and memories from a completed stage's artifacts."""
    stage_dir = _stage_dir(out, stage)
    try:
        model = load_detection_model(stage_dir / "detection.pt")
        memory = None
        if (stage_dir / "memory.json").exists():
            memory = MemoryStore.load(stage_dir / "memory.json")
        arg_model = None
        arg_memory = None
        if has_args and (stage_dir / "argument.pt").exists():
            arg_model = load_argument_model(stage_dir / "argument.pt")
            if (stage_dir / "arg_memory.json").exists():
                arg_memory = MemoryStore.load(stage_dir / "arg_memory.json")
    except Exception as exc:
        raise CheckpointError(f"corrupted checkpoint in {stage_dir}: {exc}") from exc
    return model, memory, arg_model, arg_memory


def run(config: RunConfig) -> Path:
    """Execute (or resume) the K-stage pipeline; returns the run directory."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / "run_state.json"
    config_identity = config.comparable_dict()

    completed = 0
    if state_path.exists():
        state = _read_json(state_path)
        if state.get("config") != config_identity:
            raise CheckpointError(
                f"run directory {out} holds a different configuration; "
                "use a fresh output_dir or matching settings"
            )
        completed = int(state.get("completed_stage", 0))
        logger.info("resuming run in %s from stage %d", out, completed + 1)
    else:
        _write_json(state_path, {"completed_stage": 0, "config": config_identity})

    if config.corpus is not None:
        schema, sentences = corpus_mod.load_corpus(config.corpus)
    else:
        schema, sentences = corpus_mod.generate_synthetic(
            config.synth_types,
            corpus_mod.power_law_counts(
                config.synth_types, config.synth_max_count, config.synth_min_count
            ),
            config.synth_vocab,
            config.synth_seed,
            multi_type_prob=config.synth_multi_type_prob,
            negative_ratio=config.synth_negative_ratio,
            include_arguments=config.synth_arguments,
        )
        if not (out / "data" / corpus_mod.CORPUS_FILENAME).exists():
            corpus_mod.save_corpus(schema, sentences, out / "data")

    n_tasks = config.num_tasks
    stream = corpus_mod.partition_tasks(
        schema, sentences, n_tasks, config.permutation_seed,
        train_frac=config.train_frac, dev_frac=config.dev_frac,
    )
    vocab = Vocabulary.from_sentences(sentences)
    has_args = config.run_arguments and corpus_mod.has_argument_annotations(sentences)
    continual = config.strategy == "full"

    if completed > 0:
        model, memory, arg_model, arg_memory = _load_stage_state(out, completed, has_args)
    else:
        model = _build_detection_model(config, vocab)
        memory = MemoryStore(config.memory_size) if continual and config.memory_size > 0 else None
        arg_model = _build_argument_model(config, vocab, schema) if has_args else None
        arg_memory = (
            MemoryStore(config.memory_size) if has_args and continual and config.memory_size > 0 else None
        )

    for stage in range(completed + 1, n_tasks + 1):
        logger.info("stage %d/%d (%s)", stage, n_tasks, config.strategy)
        stage_dir = _stage_dir(out, stage)
        stage_dir.mkdir(parents=True, exist_ok=True)

        if config.strategy == "joint-training":
            model = _build_detection_model(config, vocab)
            det_cfg = _detection_cfg(config, continual=False)
            logs = detection_mod.train_task(model, None, joint_stream(stream, stage), 1, None, det_cfg)
        elif config.strategy == "fine-tuning":
            det_cfg = _detection_cfg(config, continual=False)
            logs = detection_mod.train_task(model, None, stream, stage, None, det_cfg)
        else:
            det_cfg = _detection_cfg(config, continual=True)
            needs_teacher = stage >= 2 and (
                det_cfg.enable_da or det_cfg.enable_afd or det_cfg.enable_spd
            )
            teacher = model.snapshot() if needs_teacher else None
            logs = detection_mod.train_task(model, teacher, stream, stage, memory, det_cfg)

        report, f1_row, det_preds = evaluate_detection_stage(
            model, stream, stage, config.long_tail_fraction
        )

        arg_prf = None
        arg_preds = None
        if arg_model is not None:
            arg_cfg = _argument_cfg(config, continual)
            if config.strategy == "joint-training":
                arg_model = _build_argument_model(config, vocab, schema)
                arguments_mod.train_argument_task(arg_model, joint_stream(stream, stage), 1, None, arg_cfg)
            elif config.strategy == "fine-tuning":
                arguments_mod.train_argument_task(arg_model, stream, stage, None, arg_cfg)
            else:
                arguments_mod.train_argument_task(arg_model, stream, stage, arg_memory, arg_cfg)
            arg_prf, arg_preds = evaluate_argument_stage(arg_model, det_preds, stream, stage)
            report.argument = arg_prf

        # Stage artifacts.
        save_detection_model(model, stage_dir / "detection.pt")
        if memory is not None:
            memory.save(stage_dir / "memory.json")
        if arg_model is not None:
            save_argument_model(arg_model, stage_dir / "argument.pt")
        if arg_memory is not None:
            arg_memory.save(stage_dir / "arg_memory.json")
        _write_json(stage_dir / "prototypes.json", prototype_store_to_json(logs.prototypes))
        with open(stage_dir / "augmentation_audit.jsonl", "w", encoding="utf-8") as fh:
            for rec in list(logs.train_audit) + list(logs.memory_audit):
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        with open(stage_dir / "training_curve.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "phase", "epoch", "loss_cls", "loss_afd", "loss_spd", "loss_total", "dev_f1"])
            for pt in logs.curve:
                writer.writerow([pt.stage, pt.phase, pt.epoch, pt.loss_cls, pt.loss_afd, pt.loss_spd, pt.loss_total, pt.dev_f1])
        with open(stage_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
            for row in _predictions_jsonl(stream.accumulated_test(stage), det_preds, arg_preds):
                fh.write(json.dumps(row, sort_keys=True) + "\n")

        stage_report = {
            "stage": stage,
            "detection": _prf_json(report.detection),
            "argument": _prf_json(arg_prf),
            "long_tail": _prf_json(report.long_tail),
            "per_type_gold_counts": dict(sorted(report.per_type_gold_counts.items())),
            "f1_row": {str(j): v for j, v in f1_row.items()},
            "pseudo_train": _pseudo_stats(logs.train_audit, stream),
            "pseudo_memory": _pseudo_stats(logs.memory_audit, stream),
            "best_epoch": logs.best_epoch,
            "best_dev_f1": logs.best_dev_f1,
        }
        _write_json(stage_dir / "report.json", stage_report)
        _write_json(state_path, {"completed_stage": stage, "config": config_identity})

    return finalize(out, config, n_tasks)


def finalize(out: Path, config: RunConfig, n_tasks: int) -> Path:
    """Assemble summary.json and metrics.csv from the per-stage reports."""
    reports = [_read_json(_stage_dir(out, stage) / "report.json") for stage in range(1, n_tasks + 1)]
    matrix = F1Matrix(n_tasks)
    for report in reports:
        for j, value in report["f1_row"].items():
            matrix.set(report["stage"], int(j), value)

    final_row = [matrix.get(n_tasks, j) for j in range(1, n_tasks + 1)]
    summary = {
        "config": config.comparable_dict(),
        "n_tasks": n_tasks,
        "stages": reports,
        "f1_matrix": matrix.to_lists(),
        "stage_detection_f1": [r["detection"][2] for r in reports],
        "stage_argument_f1": [
            r["argument"][2] if r["argument"] is not None else None for r in reports
        ],
        "stage_long_tail_f1": [
            r["long_tail"][2] if r["long_tail"] is not None else None for r in reports
        ],
        "final_average_f1": sum(final_row) / len(final_row),
        "final_detection_f1": reports[-1]["detection"][2],
        "bwt": bwt(matrix) if n_tasks >= 2 else None,
    }
    _write_json(out / "summary.json", summary)

    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "metric", "value"])
        for report in reports:
            stage = report["stage"]
            writer.writerow([stage, "detection_precision", report["detection"][0]])
            writer.writerow([stage, "detection_recall", report["detection"][1]])
            writer.writerow([stage, "detection_f1", report["detection"][2]])
            if report["argument"] is not None:
                writer.writerow([stage, "argument_f1", report["argument"][2]])
            if report["long_tail"] is not None:
                writer.writerow([stage, "long_tail_f1", report["long_tail"][2]])
        if summary["bwt"] is not None:
            writer.writerow(["final", "bwt", summary["bwt"]])
        writer.writerow(["final", "final_average_f1", summary["final_average_f1"]])
    return out


def load_summary(run_dir: str | Path) -> dict:
    return _read_json(Path(run_dir) / "summary.json")


# ---------------------------------------------------------------------------
# Permutation sweep.
# ---------------------------------------------------------------------------


def _flat_metrics(summary: dict) -> dict[str, float]:
    flat: dict[str, float] = {}
    for i, value in enumerate(summary["stage_detection_f1"], start=1):
        flat[f"stage{i}_detection_f1"] = value
    for i, value in enumerate(summary["stage_argument_f1"], start=1):
        if value is not None:
            flat[f"stage{i}_argument_f1"] = value
    for i, value in enumerate(summary["stage_long_tail_f1"], start=1):
        if value is not None:
            flat[f"stage{i}_long_tail_f1"] = value
    flat["final_average_f1"] = summary["final_average_f1"]
    flat["final_detection_f1"] = summary["final_detection_f1"]
    if summary["bwt"] is not None:
        flat["bwt"] = summary["bwt"]
    return flat


def sweep(config: RunConfig, permutations: int) -> dict:
    """Run `permutations` times with distinct permutation seeds and aggregate.

    Failed permutations are recorded but do not discard completed ones.
    """
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    base = Path(config.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    per_run: dict[str, dict[str, float]] = {}
    failures: dict[str, str] = {}
    for k in range(permutations):
        run_config = RunConfig(
            **{
                **config.to_dict(),
                "output_dir": str(base / f"perm_{k}"),
                "permutation_seed": config.permutation_seed + k,
            }
        )
        name = f"perm_{k}"
        try:
            run_dir = run(run_config)
            per_run[name] = _flat_metrics(load_summary(run_dir))
        except Exception as exc:  # keep partial sweep results
            logger.exception("permutation %d failed", k)
            failures[name] = f"{type(exc).__name__}: {exc}"

    metric_names = sorted({name for flat in per_run.values() for name in flat})
    aggregate_metrics = {}
    for name in metric_names:
        values = [flat[name] for flat in per_run.values() if name in flat]
        mean = sum(values) / len(values)
        std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
        aggregate_metrics[name] = {"mean": mean, "std": std, "n": len(values)}

    aggregate = {
        "permutations": permutations,
        "completed": sorted(per_run),
        "failures": failures,
        "metrics": aggregate_metrics,
        "per_run": per_run,
    }
    _write_json(base / "aggregate.json", aggregate)
    with open(base / "aggregate.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std", "n"])
        for name in metric_names:
            entry = aggregate_metrics[name]
            writer.writerow([name, entry["mean"], entry["std"], entry["n"]])
    return aggregate


# ---------------------------------------------------------------------------
# Standalone scoring of a predictions file.
# ---------------------------------------------------------------------------


def evaluate_predictions(gold_path: str | Path, predictions_path: str | Path) -> dict:
    """Score a predictions JSON-lines file against a gold corpus."""
    schema, sentences = corpus_mod.load_corpus(gold_path)
    det_preds: dict[str, list] = {}
    arg_preds: dict[str, list] = {}
    with open(predictions_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                sid = row["id"]
                mentions = []
                triples = []
                for ev in row.get("events", []):
                    span = (int(ev["trigger"][0]), int(ev["trigger"][1]))
                    mentions.append((span, str(ev["type"])))
                    for arg in ev.get("args", []):
                        triples.append(
                            (str(ev["type"]), (int(arg["span"][0]), int(arg["span"][1])), str(arg["role"]))
                        )
            except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                raise corpus_mod.CorpusError(
                    f"{predictions_path}: line {lineno}: {exc}"
                ) from exc
            det_preds[sid] = mentions
            arg_preds[sid] = triples
    gold_mentions = evaluation.gold_trigger_mentions(sentences)
    gold_triples = evaluation.gold_argument_triples(sentences)
    det = evaluation.detection_f1(det_preds, gold_mentions)
    has_gold_args = any(gold_triples.values())
    arg = evaluation.argument_f1(arg_preds, gold_triples) if has_gold_args else None
    return {
        "detection": _prf_json(det),
        "argument": _prf_json(arg),
    }

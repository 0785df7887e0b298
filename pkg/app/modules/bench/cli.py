from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigurationError, InputError, LabError, RecordValidationError
from app.core.logging import get_logger, setup_logging
from app.core.task_queue import ShardQueue
from app.modules.bench.metrics import EvalResult, eval_exact_match, eval_rec
from app.modules.dialog_data import convert_task, read_records, synth_shapes_dataset, write_records
from app.modules.moe_transformer import MoEConfig
from app.modules.moe_transformer.checkpoint import read_config
from app.modules.mov_encoder import MoVConfig
from app.modules.ocr_forge import cli as ocr_cli
from app.modules.ocr_forge.models import SynthParams
from app.modules.ocr_forge.synth import render_page, synth_page
from app.modules.routing_lab import (
    ALL_MODALITIES,
    SweepRow,
    entropy_profile,
    plot_sweep,
    plot_usage,
    prune_sweep,
    read_csv,
    sweep_active_experts,
    trace_model,
    write_sweep_csv,
    write_usage_csv,
)
from app.modules.routing_lab.report import USAGE_COLUMNS, format_tag
from app.modules.train_engine import (
    MixerConfig,
    MultimodalLM,
    TrainConfig,
    load_record_samples,
    run_training,
    seed_everything,
)

logger = get_logger(__name__)


def _parse_ints(text: str) -> list[int]:
    """Comma-separated integers; each item may also be an inclusive range ``a..b``."""
    values: list[int] = []
    try:
        for part in (p.strip() for p in text.split(",")):
            if not part:
                continue
            if ".." in part:
                lo, hi = (int(v) for v in part.split("..", 1))
                if lo > hi:
                    raise ConfigurationError(f"empty range {part!r}")
                values.extend(range(lo, hi + 1))
            else:
                values.append(int(part))
    except ConfigurationError:
        raise
    except ValueError as e:
        raise ConfigurationError(f"expected comma-separated integers or a..b ranges, got {text!r}") from e
    if not values:
        raise ConfigurationError("empty integer list")
    return values


def _read_jsonl(path: Path) -> list[dict]:
    rows: list[dict] = []
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise RecordValidationError(f"{path}:{lineno}: {e.msg}") from e
    return rows


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_model(
    checkpoint: Optional[str], model_preset: str = "moe-nano", vision_preset: str = "mov-nano"
) -> MultimodalLM:
    """Model from a checkpoint directory, or a freshly seeded one from presets."""
    if not checkpoint:
        return MultimodalLM.from_presets(model_preset, vision_preset)
    directory = Path(checkpoint)
    cfg = read_config(directory)
    model = MultimodalLM(MoEConfig.model_validate(cfg["lm"]), MoVConfig.model_validate(cfg["vision"]))
    model.load_arrays(directory)
    logger.info("loaded checkpoint %s", directory)
    return model


def _load_samples(path: str):
    items = load_record_samples(Path(path))
    if not items:
        raise InputError(f"{path} contains no records")
    return items


# -- commands ---------------------------------------------------------------


def cmd_convert(args: argparse.Namespace) -> dict:
    rows = _read_jsonl(Path(args.inp))
    queue = ShardQueue(concurrency=args.workers)
    results = queue.map_ordered(convert_task, rows)
    records = [r for r in results if r is not None]
    skipped = len(rows) - len(records)
    if skipped:
        logger.warning("%d rows produced no record", skipped)
    write_records(Path(args.out), records)
    return {"command": "convert", "rows": len(rows), "records": len(records), "skipped": skipped, "out": args.out}


def cmd_ocr(args: argparse.Namespace) -> dict:
    return ocr_cli.run(args)


def cmd_synth(args: argparse.Namespace) -> dict:
    out = Path(args.out) if args.out else settings.paths.synth_dir / args.kind
    if args.kind == "shapes":
        records = synth_shapes_dataset(out, n=args.n, seed=args.seed)
        return {"command": "synth", "kind": "shapes", "records": len(records), "out": str(out / "records.jsonl")}

    params = SynthParams(
        n_lines=args.lines, n_cols=args.cols, split_prob=args.split_prob, noise_prob=args.noise_prob
    )
    pages, truths = [], []
    for i in range(args.n):
        page, truth = synth_page(args.seed + i, params)
        if args.render:
            image = f"pages/{page.page_id}.png"
            render_page(page, out / image)
            page = page.model_copy(update={"image": image})
        pages.append(json.loads(page.model_dump_json()))
        truths.append({"page_id": page.page_id, "text": truth.text, "noise_indices": truth.noise_indices})
    _write_jsonl(out / "pages.jsonl", pages)
    _write_jsonl(out / "truth.jsonl", truths)
    return {"command": "synth", "kind": "pages", "pages": len(pages), "out": str(out / "pages.jsonl")}


def cmd_train(args: argparse.Namespace) -> dict:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed_given:
        config = config.model_copy(update={"seed": args.seed})
    mixer_path = Path(args.mixer)
    mixer = MixerConfig.model_validate_json(mixer_path.read_text(encoding="utf-8"))
    run_dir = Path(args.run_dir) if args.run_dir else settings.paths.runs_dir / "default"
    result = run_training(config, mixer, run_dir=run_dir, resume=args.resume, base_dir=mixer_path.parent)
    return {
        "command": "train",
        "steps": result.step,
        "run_dir": str(result.run_dir),
        "checkpoint": str(result.checkpoint) if result.checkpoint else None,
        "loss": result.last.loss if result.last else None,
    }


def cmd_generate(args: argparse.Namespace) -> dict:
    model = load_model(args.checkpoint, args.model_preset, args.vision_preset)
    model.eval()
    items = _load_samples(args.records)

    def answer(item):
        generated, reference = model.generate_answer(
            item, assistant_index=args.assistant_index, max_new_tokens=args.max_new_tokens, k=args.k
        )
        return {"id": item.record.id, "answer": generated, "reference": reference}

    rows = ShardQueue(concurrency=args.workers).map_ordered(answer, items)
    _write_jsonl(Path(args.out), rows)
    return {"command": "generate", "samples": len(rows), "out": args.out}


def evaluate_files(records_path: str, answers_path: str, metric: str) -> EvalResult:
    records = read_records(Path(records_path))
    if not records:
        raise InputError(f"{records_path} contains no records")
    answers = _read_jsonl(Path(answers_path))
    if not answers:
        raise InputError(f"{answers_path} contains no answers")
    by_id = {a["id"]: a.get("answer", "") for a in answers if "id" in a}
    if len(by_id) == len(answers):
        missing = [r.id for r in records if r.id not in by_id]
        if missing:
            raise InputError(f"no answer for records {missing[:5]}")
        predictions = [by_id[r.id] for r in records]
    else:
        predictions = [a.get("answer", "") for a in answers]
    scorer = eval_rec if metric == "rec" else eval_exact_match
    return scorer(records, predictions)


def cmd_eval(args: argparse.Namespace) -> dict:
    result = evaluate_files(args.records, args.answers, args.metric)
    return {"command": "eval", "metric": result.metric_name, "value": result.value, "samples": result.n_samples}


def cmd_route_stats(args: argparse.Namespace) -> dict:
    model = load_model(args.checkpoint, args.model_preset, args.vision_preset)
    trace = trace_model(model, _load_samples(args.records), k=args.k, batch_size=args.batch_size)
    rows = write_usage_csv(trace, Path(args.out))
    entropies = {
        format_tag(tag): entropy_profile(trace, tag)
        for tag in trace.tags() + sorted({(ALL_MODALITIES, d) for _, d in trace.tags()})
    }
    return {"command": "route-stats", "rows": rows, "out": args.out, "entropy": entropies}


def cmd_k_sweep(args: argparse.Namespace) -> dict:
    k_values = _parse_ints(args.k)
    model = load_model(args.checkpoint, args.model_preset, args.vision_preset)
    results = sweep_active_experts(
        model, _load_samples(args.records), k_values, metric=args.metric, batch_size=args.batch_size
    )
    rows = write_sweep_csv([SweepRow(key=k, run=0, metric=v) for k, v in results.items()], Path(args.out), key="k")
    return {"command": "k-sweep", "rows": rows, "out": args.out, "metric": args.metric, "values": results}


def cmd_prune_sweep(args: argparse.Namespace) -> dict:
    n_values = _parse_ints(args.n)
    model = load_model(args.checkpoint, args.model_preset, args.vision_preset)
    rows, summaries = prune_sweep(
        model,
        _load_samples(args.records),
        n_values,
        runs=args.runs,
        seed=args.seed,
        k=args.k,
        metric=args.metric,
        batch_size=args.batch_size,
    )
    written = write_sweep_csv(rows, Path(args.out), key="n")
    return {
        "command": "prune-sweep",
        "rows": written,
        "out": args.out,
        "summary": [{"n": s.n, "mean": s.mean, "variance": s.variance} for s in summaries],
    }


def cmd_plot(args: argparse.Namespace) -> dict:
    columns, _ = read_csv(Path(args.csv))
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    if tuple(columns) == USAGE_COLUMNS:
        plot_usage(Path(args.csv), out)
        kind = "usage"
    else:
        plot_sweep(Path(args.csv), out)
        kind = "sweep"
    return {"command": "plot", "kind": kind, "out": str(out)}


COMMANDS = {
    "convert": cmd_convert,
    "ocr": cmd_ocr,
    "synth": cmd_synth,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "route-stats": cmd_route_stats,
    "k-sweep": cmd_k_sweep,
    "prune-sweep": cmd_prune_sweep,
    "plot": cmd_plot,
}


# -- parser -----------------------------------------------------------------


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="Checkpoint directory (params/ + config.json); presets if omitted")
    p.add_argument("--model-preset", default="moe-nano", help="LM preset when no checkpoint is given")
    p.add_argument("--vision-preset", default="mov-nano", help="Vision preset when no checkpoint is given")
    p.add_argument("--records", required=True, help="ConversationRecord JSONL; media resolve next to it")
    p.add_argument("--batch-size", type=int, default=8, help="Samples per forward pass")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Global seed (default 0)")
    common.add_argument("--log-level", default=None, help="Override LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="mllm-lab", description="Desk-scale multimodal MoE lab")
    sub = parser.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("convert", parents=[common], help="Task JSONL -> ConversationRecord JSONL")
    c.add_argument("--in", dest="inp", required=True, help="Task rows, one JSON object per line")
    c.add_argument("--out", required=True, help="ConversationRecord JSONL output")
    c.add_argument("--workers", type=int, default=settings.runtime.workers, help="Row-level parallelism")

    o = sub.add_parser("ocr", parents=[common], help="PageRecord JSONL -> OCR QA conversations")
    ocr_cli.add_arguments(o)

    s = sub.add_parser("synth", parents=[common], help="Write a synthetic dataset")
    s.add_argument("kind", choices=("shapes", "pages"), help="Coloured-box dialogs or text pages")
    s.add_argument("--out", help="Output directory (default: $LAB_DATA_DIR/synth/<kind>)")
    s.add_argument("--n", type=int, default=32, help="Number of images or pages")
    s.add_argument("--lines", type=int, default=12, help="Lines per column (pages)")
    s.add_argument("--cols", type=int, default=1, help="Columns per page (pages)")
    s.add_argument("--split-prob", type=float, default=0.0, help="Span split probability (pages)")
    s.add_argument("--noise-prob", type=float, default=0.0, help="Garbage span probability (pages)")
    s.add_argument("--render", action="store_true", help="Also render page PNGs (pages)")

    t = sub.add_parser("train", parents=[common], help="One-stage training run")
    t.add_argument("--config", help="Training config file (key=value lines)")
    t.add_argument("--mixer", required=True, help="Mixer JSON listing the data sources")
    t.add_argument("--run-dir", help="Run directory (default: $LAB_RUNS_DIR/default)")
    t.add_argument("--resume", action="store_true", help="Continue from the latest checkpoint")

    g = sub.add_parser("generate", parents=[common], help="Greedy answers for each record")
    _model_args(g)
    g.add_argument("--out", required=True, help="Answers JSONL output")
    g.add_argument("--k", type=int, default=None, help="Activated experts per token")
    g.add_argument("--assistant-index", type=int, default=0, help="Which assistant turn to answer")
    g.add_argument("--max-new-tokens", type=int, default=64, help="Generation budget")
    g.add_argument("--workers", type=int, default=1, help="Sample-level parallelism")

    e = sub.add_parser("eval", parents=[common], help="Score answers against records")
    e.add_argument("--metric", choices=("rec", "exact"), default="rec", help="accuracy@0.5 or exact match")
    e.add_argument("--records", required=True, help="Reference ConversationRecord JSONL")
    e.add_argument("--answers", required=True, help="Answers JSONL ({id, answer} per line)")

    r = sub.add_parser("route-stats", parents=[common], help="Per-layer expert usage CSV")
    _model_args(r)
    r.add_argument("--out", required=True, help="Usage CSV output")
    r.add_argument("--k", type=int, default=None, help="Activated experts per token")

    k = sub.add_parser("k-sweep", parents=[common], help="Metric at each activated-expert count")
    _model_args(k)
    k.add_argument("--k", default="1,2,4,8", help="Comma-separated k values or a..b range")
    k.add_argument("--metric", choices=("loss", "rec", "exact"), default="loss", help="Metric per k")
    k.add_argument("--out", required=True, help="Sweep CSV output")

    pr = sub.add_parser("prune-sweep", parents=[common], help="Metric after random expert pruning")
    _model_args(pr)
    pr.add_argument("--n", default="1,2,4,8", help="Comma-separated kept-expert counts or a..b range")
    pr.add_argument("--runs", type=int, default=3, help="Random draws per count")
    pr.add_argument("--k", type=int, default=None, help="Activated experts per token")
    pr.add_argument("--metric", choices=("loss", "rec", "exact"), default="loss", help="Metric per draw")
    pr.add_argument("--out", required=True, help="Sweep CSV output")

    pl = sub.add_parser("plot", parents=[common], help="SVG from a usage or sweep CSV")
    pl.add_argument("csv", help="Usage or sweep CSV")
    pl.add_argument("--out", help="SVG output (default: CSV path with .svg)")

    return parser


def _print_human(summary: dict) -> None:
    print(f"=== {summary.get('command')} ===")
    for key, value in summary.items():
        if key == "command":
            continue
        if isinstance(value, dict):
            print(f"{key}:")
            for k, v in value.items():
                print(f"  {k}: {v}")
        elif isinstance(value, list):
            print(f"{key}:")
            for item in value:
                print(f"  {item}")
        else:
            print(f"{key}: {value}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or settings.runtime.log_level)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    seed_everything(args.seed, settings.runtime.deterministic)
    try:
        summary = COMMANDS[args.cmd](args)
    except (LabError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return getattr(e, "exit_code", 2)
    except Exception as e:
        logger.exception("%s failed", args.cmd)
        print(f"error: {e}", file=sys.stderr)
        return 1
    _print_human(summary)
    print(json.dumps(summary, default=str))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

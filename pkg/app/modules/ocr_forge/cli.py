from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import LabError, RecordValidationError
from app.core.logging import get_logger, setup_logging
from app.core.task_queue import ShardQueue
from app.modules.dialog_data import ConversationRecord, write_records
from app.modules.ocr_forge.models import MergeParams, PageRecord
from app.modules.ocr_forge.pipeline import QA_MODES, page_to_qa

logger = get_logger(__name__)


def read_pages(path: Path) -> list[PageRecord]:
    pages: list[PageRecord] = []
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                pages.append(PageRecord.model_validate_json(line))
            except ValidationError as e:
                raise RecordValidationError(f"{path}:{lineno}: {e}") from e
    return pages


def convert_pages(
    pages: list[PageRecord], mode: str, *, workers: int = 1, params: Optional[MergeParams] = None
) -> list[ConversationRecord]:
    """Pages are independent; output keeps input order, skipped pages dropped."""
    params = params or MergeParams()
    queue = ShardQueue(concurrency=workers)
    results = queue.map_ordered(lambda page: page_to_qa(page, mode, params), pages)
    return [r for r in results if r is not None]


def add_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=QA_MODES, default="full_text", help="QA flavour to emit")
    p.add_argument("--in", dest="inp", required=True, help="PageRecord JSONL input")
    p.add_argument("--out", required=True, help="ConversationRecord JSONL output")
    p.add_argument("--workers", type=int, default=settings.runtime.workers, help="Page-level parallelism")
    p.add_argument("--params", help="JSON file overriding merge thresholds")


def run(args: argparse.Namespace) -> dict:
    params = MergeParams()
    if args.params:
        params = MergeParams.model_validate_json(Path(args.params).read_text(encoding="utf-8"))
    pages = read_pages(Path(args.inp))
    records = convert_pages(pages, args.mode, workers=args.workers, params=params)
    write_records(Path(args.out), records)
    logger.info("wrote %d records from %d pages to %s", len(records), len(pages), args.out)
    return {"command": "ocr", "mode": args.mode, "pages": len(pages), "records": len(records), "out": args.out}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ocr-forge", description="Page records -> OCR QA conversations")
    add_arguments(parser)
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    args = parser.parse_args(argv)
    setup_logging(args.log_level or settings.runtime.log_level)
    try:
        summary = run(args)
    except (LabError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return getattr(e, "exit_code", 2)
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

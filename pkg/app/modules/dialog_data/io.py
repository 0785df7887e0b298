"""ConversationRecord JSONL reading/writing and strict validation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

from app.core.errors import RecordValidationError
from app.modules.dialog_data.models import ConversationRecord


def dump_record(record: ConversationRecord) -> str:
    """One compact JSON line; stable field order makes re-runs byte-identical."""
    return json.dumps(
        record.model_dump(mode="json", exclude_none=True), ensure_ascii=False, separators=(",", ":")
    )


def write_records(path: Path, records: Iterable[ConversationRecord]) -> int:
    n = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(dump_record(rec))
            f.write("\n")
            n += 1
    return n


def iter_records(path: Path) -> Iterator[ConversationRecord]:
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield ConversationRecord.model_validate_json(line)
            except ValueError as e:
                raise RecordValidationError(f"{path}:{lineno}: {e}") from e


def read_records(path: Path) -> list[ConversationRecord]:
    return list(iter_records(path))


def check_record(record: ConversationRecord) -> ConversationRecord:
    """Schema invariants plus the training requirement of at least one assistant turn."""
    ConversationRecord.model_validate(record.model_dump())
    if not record.assistant_turns:
        raise RecordValidationError(f"record {record.id} has no assistant turn")
    return record

"""Byte-level toy tokenizer and assistant-only loss masking."""

from __future__ import annotations

from dataclasses import dataclass, field

from app.core.errors import RecordValidationError
from app.core.logging import get_logger
from app.modules.dialog_data.models import ConversationRecord, ImageSegment, Role, TextSegment

logger = get_logger(__name__)


class ByteTokenizer:
    """UTF-8 bytes map to ids 0..255; a handful of reserved ids follow."""

    BOS = 256
    EOT = 257
    PAD = 258
    SYSTEM = 259
    USER = 260
    ASSISTANT = 261
    IMAGE = 262
    N_SPECIAL = 7

    def __init__(self, vocab_size: int = 1024) -> None:
        if vocab_size < 256 + self.N_SPECIAL:
            raise ValueError(f"vocab_size must be at least {256 + self.N_SPECIAL}")
        self.vocab_size = vocab_size

    def role_id(self, role: Role) -> int:
        return {Role.SYSTEM: self.SYSTEM, Role.USER: self.USER, Role.ASSISTANT: self.ASSISTANT}[role]

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return bytes(i for i in ids if 0 <= i < 256).decode("utf-8", errors="replace")


@dataclass
class MediaSlot:
    position: int
    media_index: int


@dataclass
class TokenizedSample:
    ids: list[int]
    mask: list[int]
    media_slots: list[MediaSlot] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.mask):
            raise ValueError("ids and mask must have the same length")


def _encode_turns(record: ConversationRecord, tokenizer: ByteTokenizer, turns) -> TokenizedSample:
    ids: list[int] = [tokenizer.BOS]
    mask: list[int] = [0]
    slots: list[MediaSlot] = []
    for turn in turns:
        train = 1 if turn.role is Role.ASSISTANT else 0
        ids.append(tokenizer.role_id(turn.role))
        mask.append(0)
        for seg in turn.segments:
            if isinstance(seg, ImageSegment):
                if seg.image >= len(record.media):
                    raise RecordValidationError(f"record {record.id}: image {seg.image} has no media entry")
                slots.append(MediaSlot(position=len(ids), media_index=seg.image))
                ids.append(tokenizer.IMAGE)
                mask.append(0)
            elif isinstance(seg, TextSegment):
                toks = tokenizer.encode(seg.text)
                ids.extend(toks)
                mask.extend([train] * len(toks))
        ids.append(tokenizer.EOT)
        mask.append(train)
    return TokenizedSample(ids=ids, mask=mask, media_slots=slots)


def tokenize_with_loss_mask(record: ConversationRecord, tokenizer: ByteTokenizer) -> TokenizedSample:
    """Mask is 1 on assistant content and each assistant end-of-turn token.

    Each image segment becomes one ``IMAGE`` placeholder, later replaced by the
    image's visual sequence.
    """
    if not record.assistant_turns:
        logger.warning("record %s has no assistant turn; its loss mask is all zero", record.id)
    return _encode_turns(record, tokenizer, record.turns)


def generation_prompt(
    record: ConversationRecord, tokenizer: ByteTokenizer, assistant_index: int = 0
) -> tuple[TokenizedSample, str]:
    """Tokens up to and including the role id of the n-th assistant turn, plus its reference text."""
    seen = -1
    for i, turn in enumerate(record.turns):
        if turn.role is Role.ASSISTANT:
            seen += 1
            if seen == assistant_index:
                sample = _encode_turns(record, tokenizer, record.turns[:i])
                sample.ids.append(tokenizer.ASSISTANT)
                sample.mask.append(0)
                return sample, turn.text
    raise RecordValidationError(f"record {record.id} has no assistant turn #{assistant_index}")

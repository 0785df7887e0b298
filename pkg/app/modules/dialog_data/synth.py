"""Synthetic coloured-box images with mixed detection / VQA / grounding records."""

from __future__ import annotations

import random
from pathlib import Path

from PIL import Image, ImageDraw

from app.modules.dialog_data.converters import convert_detection, convert_grounding, convert_vqa
from app.modules.dialog_data.io import write_records
from app.modules.dialog_data.models import BoxAnnotation, ConversationRecord, MediaRef

COLORS: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (230, 210, 40),
}
SIZES = [(128, 64), (64, 128), (128, 128), (128, 96), (96, 128)]
COUNT_WORDS = {1: "one", 2: "two", 3: "three"}
TASKS = ("detection", "vqa", "grounding")


def _place_boxes(rng: random.Random, w: int, h: int, n: int) -> list[tuple[int, int, int, int]]:
    boxes: list[tuple[int, int, int, int]] = []
    for _ in range(200):
        if len(boxes) == n:
            break
        bw, bh = rng.randint(16, max(17, w // 2)), rng.randint(16, max(17, h // 2))
        x1, y1 = rng.randint(0, w - bw), rng.randint(0, h - bh)
        cand = (x1, y1, x1 + bw, y1 + bh)
        if all(cand[2] <= b[0] or b[2] <= cand[0] or cand[3] <= b[1] or b[3] <= cand[1] for b in boxes):
            boxes.append(cand)
    return boxes


def synth_shapes_dataset(out_dir: Path, n: int = 32, seed: int = 0) -> list[ConversationRecord]:
    """Write ``n`` images plus ``records.jsonl`` under ``out_dir``; deterministic per seed."""
    rng = random.Random(seed)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records: list[ConversationRecord] = []
    for i in range(n):
        w, h = SIZES[rng.randrange(len(SIZES))]
        colors = rng.sample(sorted(COLORS), k=rng.randint(1, 3))
        boxes = _place_boxes(rng, w, h, len(colors))
        colors = colors[: len(boxes)]

        img = Image.new("RGB", (w, h), (0, 0, 0))
        draw = ImageDraw.Draw(img)
        for color, box in zip(colors, boxes):
            # PIL rectangles include the far edge
            draw.rectangle((box[0], box[1], box[2] - 1, box[3] - 1), fill=COLORS[color])
        rel = f"images/{i:04d}.png"
        img.save(out_dir / rel)
        media = MediaRef(path=rel, width=w, height=h)

        task = TASKS[i % len(TASKS)]
        source = "synth-shapes"
        if task == "detection":
            rec = convert_detection(
                media, [BoxAnnotation(label=f"{c} box", box=b) for c, b in zip(colors, boxes)], source=source
            )
        elif task == "vqa":
            rec = convert_vqa(media, "How many boxes are in the image?", COUNT_WORDS[len(boxes)], source=source)
        else:
            j = rng.randrange(len(boxes))
            rec = convert_grounding(media, f"the {colors[j]} box", boxes[j], source=source)
        assert rec is not None
        records.append(rec)

    write_records(out_dir / "records.jsonl", records)
    return records

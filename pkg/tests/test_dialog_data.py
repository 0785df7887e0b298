import random

import pytest

from app.core.errors import BoxParseError, RecordValidationError
from app.modules.dialog_data import (
    BoxAnnotation,
    ByteTokenizer,
    ConversationRecord,
    ImageSegment,
    Keypoint,
    Mark,
    MediaRef,
    RecordTags,
    Role,
    TextSegment,
    Turn,
    check_record,
    convert_caption,
    convert_classification,
    convert_detection,
    convert_grounding,
    convert_grounding_pack,
    convert_pose,
    convert_som,
    convert_task,
    convert_text_dialog,
    convert_vqa,
    convert_vqa_pack,
    dump_record,
    generation_prompt,
    parse_box,
    parse_keypoints,
    parse_labeled_boxes,
    parse_point,
    parse_polygon,
    read_records,
    synth_shapes_dataset,
    textualize_box,
    textualize_point,
    textualize_polygon,
    tokenize_with_loss_mask,
    write_records,
)

IMG = MediaRef(path="img/0001.png", width=448, height=448)
TOL = 0.5e-3 + 1e-9


def test_textualize_box_examples():
    assert textualize_box((112, 0, 336, 224), 448, 448) == "[0.250,0.000,0.750,0.500]"
    assert textualize_box((0, 0, 448, 448), 448, 448) == "[0.000,0.000,1.000,1.000]"
    assert textualize_box((0, 0, 1, 1), 1000, 1000) == "[0.000,0.000,0.001,0.001]"
    with pytest.raises(RecordValidationError):
        textualize_box((0, 0, 500, 10), 448, 448)


def test_parse_box_examples():
    assert parse_box("[0.250,0.000,0.750,0.500]") == (0.25, 0.0, 0.75, 0.5)
    assert parse_box("the cat is at [0.1,0.2,0.3,0.4].") == (0.1, 0.2, 0.3, 0.4)
    with pytest.raises(BoxParseError) as err:
        parse_box("xx [0.3,0.2,0.1,0.4]")
    assert err.value.position == 3
    with pytest.raises(BoxParseError) as err:
        parse_box("no box")
    assert err.value.position == len("no box")


def test_random_round_trips():
    rng = random.Random(0)
    for _ in range(1000):
        w, h = rng.randint(10, 4000), rng.randint(10, 4000)
        x1, y1 = rng.uniform(0, 0.9 * w), rng.uniform(0, 0.9 * h)
        x2, y2 = rng.uniform(x1 + 0.01 * w, w), rng.uniform(y1 + 0.01 * h, h)
        parsed = parse_box(textualize_box((x1, y1, x2, y2), w, h))
        for got, want in zip(parsed, (x1 / w, y1 / h, x2 / w, y2 / h)):
            assert abs(got - want) <= TOL

        px, py = rng.uniform(0, w), rng.uniform(0, h)
        gx, gy = parse_point(textualize_point(px, py, w, h))
        assert abs(gx - px / w) <= TOL and abs(gy - py / h) <= TOL

        poly = [(rng.uniform(0, w), rng.uniform(0, h)) for _ in range(rng.randint(3, 6))]
        back = parse_polygon(textualize_polygon(poly, w, h))
        assert len(back) == len(poly)
        for (gx, gy), (x, y) in zip(back, poly):
            assert abs(gx - x / w) <= TOL and abs(gy - y / h) <= TOL


def test_detection_record():
    anns = [BoxAnnotation(label="dog", box=(200, 100, 300, 200)), BoxAnnotation(label="cat", box=(10, 20, 110, 120))]
    rec = convert_detection(IMG, anns)
    answer = rec.assistant_turns[0].text
    clauses = parse_labeled_boxes(answer)
    assert [label for label, _ in clauses] == ["cat", "dog"]
    for (_, box), ann in zip(clauses, sorted(anns, key=lambda a: a.box[1])):
        assert all(abs(b - a / 448) <= TOL for b, a in zip(box, ann.box))
    assert dump_record(rec) == dump_record(convert_detection(IMG, list(anns)))
    assert isinstance(rec.turns[0].segments[0], ImageSegment)
    assert convert_detection(IMG, []) is None


def test_grounding_records():
    rec = convert_grounding(IMG, "the red car", (0, 0, 224, 224))
    assert "the red car" in rec.turns[0].text
    assert parse_box(rec.assistant_turns[0].text) == (0.0, 0.0, 0.5, 0.5)
    with pytest.raises(RecordValidationError):
        convert_grounding(IMG, "  ", (0, 0, 10, 10))
    pack = convert_grounding_pack(IMG, [("a", (0, 0, 10, 10)), ("b", (5, 5, 20, 20)), ("c", (1, 1, 2, 2))])
    assert len(pack.assistant_turns) == 3
    # image attached to the first question only
    assert sum(isinstance(s, ImageSegment) for t in pack.turns for s in t.segments) == 1


def test_classification_pose_vqa():
    assert convert_classification(IMG, "golden retriever").assistant_turns[0].text == "golden retriever"
    pose = convert_pose(IMG, [Keypoint(name="nose", x=224, y=112), Keypoint(name="left eye", x=200, y=100)])
    kps = parse_keypoints(pose.assistant_turns[0].text)
    assert [name for name, _, _ in kps] == ["nose", "left eye"]
    assert abs(kps[0][1] - 0.5) <= TOL and abs(kps[0][2] - 0.25) <= TOL
    vqa = convert_vqa(IMG, "What colour is the sky?", "blue")
    assert vqa.tags.domain == "vqa" and vqa.assistant_turns[0].text == "blue"


def test_caption_and_vqa_pack():
    cap = convert_caption(IMG, " a dog on a sofa ")
    assert cap.tags.domain == "caption" and cap.assistant_turns[0].text == "a dog on a sofa"
    with pytest.raises(RecordValidationError):
        convert_caption(IMG, "   ")
    pack = convert_vqa_pack(IMG, [("How many dogs?", "one"), ("Where is it?", "on the sofa")])
    assert [t.text for t in pack.assistant_turns] == ["one", "on the sofa"]
    assert sum(isinstance(s, ImageSegment) for t in pack.turns for s in t.segments) == 1
    with pytest.raises(RecordValidationError):
        convert_vqa_pack(IMG, [])
    with pytest.raises(RecordValidationError):
        convert_vqa_pack(IMG, [("q?", " ")])


def test_som_record():
    marks = [
        Mark(mark_id=2, shape="point", coords=[224, 224], caption_fragments=["a ball"]),
        Mark(mark_id=1, shape="box", coords=[0, 0, 224, 224], caption_fragments=["a", "dog"]),
        Mark(mark_id=3, shape="polygon", coords=[0, 0, 448, 0, 448, 448]),
    ]
    rec = convert_som(IMG, marks, global_caption="A park.", relations="The dog chases the ball.")
    legend = rec.turns[0].text
    assert legend.index("Mark 1: box") < legend.index("Mark 2: point") < legend.index("Mark 3: polygon")
    assert "[0.000,0.000 1.000,0.000 1.000,1.000]" in legend
    assert parse_polygon(legend[legend.index("Mark 3") :]) == [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]
    assert rec.media == [IMG]
    assert len(rec.assistant_turns) == 3
    assert "Mark 1: a dog." in rec.assistant_turns[0].text
    with pytest.raises(RecordValidationError):
        convert_som(IMG, [marks[0], marks[0]])


def test_converter_outputs_validate():
    rng = random.Random(3)
    for _ in range(50):
        w, h = rng.randint(50, 800), rng.randint(50, 800)
        img = MediaRef(path="x.png", width=w, height=h)
        anns = []
        for i in range(rng.randint(1, 4)):
            x1, y1 = rng.uniform(0, w / 2), rng.uniform(0, h / 2)
            anns.append(BoxAnnotation(label=f"obj{i}", box=(x1, y1, x1 + w / 4, y1 + h / 4)))
        for rec in (
            convert_detection(img, anns),
            convert_grounding(img, "thing", anns[0].box),
            convert_vqa(img, "q?", "a"),
            convert_text_dialog([("hi", "hello")], system="be brief"),
        ):
            assert check_record(rec) is rec


def test_schema_rejects_bad_structure():
    user = Turn(role=Role.USER, segments=[TextSegment(text="hi")])
    with pytest.raises(ValueError):
        ConversationRecord(id="x", turns=[user, user], tags=RecordTags(domain="d", source="s"))
    with pytest.raises(ValueError):
        Turn(role=Role.ASSISTANT, segments=[ImageSegment(image=0)])
    with pytest.raises(ValueError):
        ConversationRecord(
            id="x", turns=[Turn(role=Role.USER, segments=[ImageSegment(image=0)])], tags=RecordTags(domain="d", source="s")
        )


def test_loss_mask_counts_assistant_tokens():
    tok = ByteTokenizer()
    rec = convert_grounding_pack(IMG, [("a", (0, 0, 10, 10)), ("b", (5, 5, 20, 20))])
    sample = tokenize_with_loss_mask(rec, tok)
    assert len(sample.ids) == len(sample.mask)
    content = sum(len(tok.encode(t.text)) for t in rec.assistant_turns)
    assert sum(sample.mask) == content + len(rec.assistant_turns)
    assert len(sample.media_slots) == 1 and sample.ids[sample.media_slots[0].position] == tok.IMAGE


def test_user_edits_do_not_touch_trained_tokens():
    tok = ByteTokenizer()
    a = tokenize_with_loss_mask(convert_vqa(IMG, "short?", "yes"), tok)
    b = tokenize_with_loss_mask(convert_vqa(IMG, "a much longer question?", "yes"), tok)
    assert a.ids != b.ids
    assert [i for i, m in zip(a.ids, a.mask) if m] == [i for i, m in zip(b.ids, b.mask) if m]


def test_no_assistant_turn_gives_zero_mask():
    rec = ConversationRecord(
        id="u",
        turns=[Turn(role=Role.SYSTEM, segments=[TextSegment(text="sys")]), Turn(role=Role.USER, segments=[TextSegment(text="q")])],
        tags=RecordTags(domain="language", source="s"),
    )
    assert sum(tokenize_with_loss_mask(rec, ByteTokenizer()).mask) == 0
    with pytest.raises(RecordValidationError):
        check_record(rec)


def test_generation_prompt_ends_with_assistant_role():
    tok = ByteTokenizer()
    rec = convert_vqa(IMG, "Where?", "here")
    prompt, reference = generation_prompt(rec, tok)
    assert prompt.ids[-1] == tok.ASSISTANT and reference == "here"
    with pytest.raises(RecordValidationError):
        generation_prompt(rec, tok, assistant_index=1)


def test_convert_task_dispatch():
    row = {"task": "classification", "image": {"path": "a.png", "width": 10, "height": 10}, "label": "cat"}
    assert convert_task(row).tags.domain == "classification"
    dialog = convert_task({"task": "dialog", "exchanges": [["hi", "hello"]]})
    assert dialog.media == [] and dialog.tags.domain == "language"
    with pytest.raises(RecordValidationError):
        convert_task({"task": "unknown", "image": {"path": "a.png"}})
    with pytest.raises(RecordValidationError):
        convert_task({"task": "vqa", "question": "q", "answer": "a"})


def test_jsonl_is_byte_identical(tmp_path):
    recs = [convert_vqa(IMG, "q?", "a"), convert_classification(IMG, "dog")]
    write_records(tmp_path / "a.jsonl", recs)
    write_records(tmp_path / "b.jsonl", read_records(tmp_path / "a.jsonl"))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_synth_shapes_dataset(tmp_path):
    recs = synth_shapes_dataset(tmp_path / "a", n=9, seed=5)
    again = synth_shapes_dataset(tmp_path / "b", n=9, seed=5)
    assert [dump_record(r) for r in recs] == [dump_record(r) for r in again]
    assert [r.tags.domain for r in recs[:3]] == ["detection", "vqa", "grounding"]
    for r in recs:
        check_record(r)
        assert (tmp_path / "a" / r.media[0].path).exists()
    assert len(read_records(tmp_path / "a" / "records.jsonl")) == 9

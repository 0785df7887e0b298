import pytest
from pydantic import ValidationError

from app.core.errors import ConfigurationError
from app.modules.dialog_data import check_record, parse_box, read_records
from app.modules.ocr_forge import (
    LayoutRegion,
    MergeParams,
    PageRecord,
    SynthParams,
    TextSpan,
    check_unicode,
    filter_spans,
    layout_blocks,
    merge_splits,
    page_to_qa,
    reading_order,
    run_pipeline,
    synth_page,
)
from app.modules.ocr_forge import cli as ocr_cli


def _span(text, box, **kw):
    return TextSpan(text=text, box=box, **kw)


def test_check_unicode():
    assert check_unicode("héllo — ok").keep
    verdict = check_unicode("\u0000\u0001ab")
    assert not verdict.keep and verdict.ratio == pytest.approx(0.5)
    assert not check_unicode("ab\ud800cd").keep
    assert not check_unicode("").keep


def test_merge_examples():
    word = merge_splits([_span("Hel", (0, 0, 30, 10)), _span("lo", (31, 0, 50, 10))])
    assert [s.text for s in word] == ["Hel lo"]
    assert word[0].box == (0, 0, 50, 10)

    split = merge_splits([_span("Hel", (0, 0, 30, 10), word_split=True), _span("lo", (31, 0, 50, 10))])
    assert [s.text for s in split] == ["Hello"]

    hyphen = merge_splits([_span("co-", (0, 0, 30, 10)), _span("operate", (30, 0, 100, 10))])
    assert [s.text for s in hyphen] == ["co-operate"]


def test_merge_leaves_separate_lines_and_singletons():
    spans = [_span("top", (0, 0, 30, 10)), _span("bottom", (0, 20, 60, 30))]
    assert sorted(s.text for s in merge_splits(spans)) == ["bottom", "top"]
    one = _span("alone", (5, 5, 55, 15))
    assert merge_splits([one]) == [one]


def test_merge_conserves_characters():
    page, _ = synth_page(11, SynthParams(split_prob=0.5))
    merged = merge_splits(page.spans)
    assert len(merged) <= len(page.spans)
    count = lambda spans: sum(len(s.text.replace(" ", "")) for s in spans)  # noqa: E731
    assert count(merged) == count(page.spans)


def test_reading_order_basics():
    assert reading_order([]) == []
    spans = [_span("c", (40, 0, 50, 10)), _span("a", (0, 0, 10, 10)), _span("b", (20, 1, 30, 11))]
    assert [s.text for s in reading_order(spans)] == ["a", "b", "c"]


def test_two_columns_read_column_major():
    page, truth = synth_page(3, SynthParams(n_cols=2, n_lines=5))
    result = run_pipeline(page)
    assert result.text == truth.text
    hints = [s.line_hint for s in result.spans]
    assert hints == sorted(hints) and hints[-1] == 9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synth_is_deterministic(seed):
    params = SynthParams(split_prob=0.3, noise_prob=0.1)
    a, _ = synth_page(seed, params)
    b, _ = synth_page(seed, params)
    assert a.model_dump_json() == b.model_dump_json()


def test_clean_pages_recover_exactly():
    params = SynthParams(split_prob=0.0, noise_prob=0.0)
    for seed in range(500):
        page, truth = synth_page(seed, params.model_copy(update={"n_cols": 1 + seed % 2}))
        assert run_pipeline(page).text == truth.text, seed


def test_noisy_split_pages_recover():
    params = SynthParams(split_prob=0.3, noise_prob=0.1)
    hits = 0
    for seed in range(500):
        page, truth = synth_page(seed, params.model_copy(update={"n_cols": 1 + seed % 2}))
        result = run_pipeline(page)
        assert result.dropped == truth.noise_indices, seed
        hits += result.text == truth.text
    assert hits / 500 >= 0.99


def test_noise_spans_are_the_dropped_set():
    page, truth = synth_page(42, SynthParams(noise_prob=0.5))
    assert truth.noise_indices
    _, dropped = filter_spans(page.spans)
    assert dropped == truth.noise_indices


def test_page_bounds_are_checked():
    with pytest.raises(ValidationError):
        PageRecord(page_id="p", size=(100, 100), spans=[_span("x", (90, 0, 110, 10))])


def test_full_text_and_spotting_records():
    page, truth = synth_page(7, SynthParams(split_prob=0.2))
    full = page_to_qa(page, "full_text")
    check_record(full)
    assert full.tags.domain == "ocr" and full.assistant_turns[0].text == truth.text
    assert full.media[0].path == f"pages/{page.page_id}.png"

    spotting = page_to_qa(page, "spotting").assistant_turns[0].text
    clauses = [c for c in spotting.split(";") if c.strip()]
    assert len(clauses) == len(truth.merged)
    for clause in clauses:
        x1, y1, x2, y2 = parse_box(clause)
        assert 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1


def test_empty_page_is_skipped():
    page = PageRecord(page_id="empty", size=(100, 100), spans=[_span("\u0001\u0002", (0, 0, 10, 10))])
    assert page_to_qa(page, "full_text") is None


def test_unknown_mode_is_a_configuration_error():
    page, _ = synth_page(3, SynthParams())
    with pytest.raises(ConfigurationError, match="unknown OCR mode") as info:
        page_to_qa(page, "poetry")
    assert info.value.exit_code == 2
    with pytest.raises(ConfigurationError):
        ocr_cli.convert_pages([page, page], "poetry", workers=2)




def test_layout_blocks_and_record():
    spans = [
        _span("A Title", (20, 20, 200, 44)),
        _span("first line of text", (20, 60, 128, 70)),
        _span("second line here", (20, 76, 116, 86)),
        _span("third line", (20, 92, 80, 102)),
        _span("Figure 1: a plot", (20, 225, 116, 235)),
    ]
    page = PageRecord(
        page_id="lay", size=(300, 300), spans=spans, regions=[LayoutRegion(cls="figure", box=(20, 120, 200, 220))]
    )
    result = run_pipeline(page)
    blocks = layout_blocks(result.spans, page)
    assert [b.cls for b in blocks] == ["title", "paragraph", "figure", "caption"]
    assert blocks[1].text.count("\n") == 2
    answer = page_to_qa(page, "layout").assistant_turns[0].text
    assert answer.startswith("title [") and answer.count(";") == 4


def test_merge_params_are_configurable():
    spans = [_span("Hel", (0, 0, 30, 10)), _span("lo", (38, 0, 58, 10))]
    assert len(merge_splits(spans)) == 2
    assert len(merge_splits(spans, MergeParams(max_gap_char_widths=1.0))) == 1


def test_cli_converts_in_order(tmp_path):
    pages_path = tmp_path / "pages.jsonl"
    pages = [synth_page(seed)[0] for seed in range(6)]
    pages_path.write_text("".join(p.model_dump_json() + "\n" for p in pages), encoding="utf-8")
    out = tmp_path / "qa.jsonl"
    code = ocr_cli.main(["--mode", "spotting", "--in", str(pages_path), "--out", str(out), "--workers", "3"])
    assert code == 0
    records = read_records(out)
    assert [r.tags.domain for r in records] == ["ocr"] * 6
    assert [r.media[0].path for r in records] == [f"pages/{p.page_id}.png" for p in pages]


def test_cli_rejects_bad_pages(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"page_id": "x", "size": [0, 10]}\n', encoding="utf-8")
    assert ocr_cli.main(["--in", str(bad), "--out", str(tmp_path / "o.jsonl")]) == 2

import csv
import math
import shutil
from collections import Counter

import pytest
import torch
from pydantic import ValidationError

from app.core.errors import ConfigurationError
from app.modules.bench import eval_rec
from app.modules.dialog_data import (
    ByteTokenizer,
    MediaRef,
    TokenizedSample,
    convert_vqa,
    synth_shapes_dataset,
    tokenize_with_loss_mask,
)
from app.modules.moe_transformer.checkpoint import expert_parameter_names
from app.modules.train_engine import (
    METRICS_COLUMNS,
    FeatureCache,
    MixerConfig,
    MixtureStream,
    MultimodalLM,
    ONE_STAGE_SOURCES,
    VISION,
    TrainConfig,
    build_mixture,
    latest_checkpoint,
    load_checkpoint,
    load_record_samples,
    lr_at,
    make_optimizer,
    masked_next_token_loss,
    parameter_hash,
    run_training,
    save_checkpoint,
    train_step,
    warmup_steps,
)
from app.modules.vision_partition import plan_partition


@pytest.mark.parametrize(
    "step, expected",
    [(0, 0.0), (5, 0.5), (10, 1.0), (505, 0.5), (1000, 0.0)],
)
def test_lr_anchors(step, expected):
    assert lr_at(step, 1000, 10, 1.0) == pytest.approx(expected, abs=1e-12)


def test_lr_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        lr_at(0, 10, 10, 1.0)
    with pytest.raises(ConfigurationError):
        lr_at(11, 10, 2, 1.0)
    with pytest.raises(ConfigurationError):
        lr_at(0, 10, 2, 0.0)


def test_lr_is_monotone_after_warmup():
    values = [lr_at(s, 200, 20, 3e-4) for s in range(201)]
    assert all(a <= b for a, b in zip(values[:20], values[1:21]))
    assert all(a >= b for a, b in zip(values[20:], values[21:]))
    assert max(values) == pytest.approx(3e-4)


def test_warmup_steps():
    assert warmup_steps(0.01, 1000) == 10
    assert warmup_steps(0.01, 50) == 1
    assert warmup_steps(0.015, 100) == 2
    with pytest.raises(ConfigurationError):
        warmup_steps(0.0, 100)


def test_unweighted_mixture_follows_source_sizes():
    stream = MixtureStream({"a": list(range(10)), "b": list(range(30))}, seed=1)
    assert len(stream) == 40
    epoch = stream.take(40)
    counts = Counter(name for name, _ in epoch)
    assert counts == {"a": 10, "b": 30}
    assert sorted(i for n, i in epoch if n == "b") == list(range(30))


def test_weighted_mixture_ratio():
    stream = MixtureStream({"a": list(range(5)), "b": list(range(500))}, seed=0, weights={"a": 1.0, "b": 3.0})
    counts = Counter(name for name, _ in stream.take(4000))
    assert counts["b"] / counts["a"] == pytest.approx(3.0, rel=0.1)


@pytest.mark.parametrize("weights", [None, {"a": 1.0, "b": 2.0}])
def test_stream_seek_replays(weights):
    pools = {"a": list("abcdefg"), "b": list(range(11))}
    full = MixtureStream(pools, seed=4, weights=weights).take(60)
    resumed = MixtureStream(pools, seed=4, weights=weights)
    resumed.seek(25)
    assert resumed.take(35) == full[25:]
    assert resumed.position == 60


def test_build_mixture_follows_source_sizes(tmp_path):
    sizes = {"small.jsonl": 100, "large.jsonl": 300}
    mixer = MixerConfig.model_validate(
        {"sources": [{"name": "small", "path": "small.jsonl"}, {"name": "large", "path": "large.jsonl"}]}
    )
    stream = build_mixture(mixer, seed=7, loader=lambda p: list(range(sizes[p.name])), base_dir=tmp_path)
    counts = Counter(name for name, _ in stream.take(10_000))
    assert counts == {"small": 2500, "large": 7500}

    weighted = MixerConfig.model_validate(
        {
            "sources": [
                {"name": "small", "path": "small.jsonl", "weight": 1.0},
                {"name": "large", "path": "large.jsonl", "weight": 3.0},
            ]
        }
    )
    stream = build_mixture(weighted, seed=7, loader=lambda p: list(range(sizes[p.name])), base_dir=tmp_path)
    counts = Counter(name for name, _ in stream.take(10_000))
    # binomial sd is ~43 draws
    assert abs(counts["small"] - 2500) < 200




def test_mixture_rejects_bad_sources():
    with pytest.raises(ConfigurationError):
        MixtureStream({"a": [1]}, seed=0, weights={"a": 0.0})
    with pytest.raises(ConfigurationError):
        MixtureStream({"a": []}, seed=0)
    with pytest.raises(ValidationError):
        MixerConfig.model_validate({"sources": [{"name": "a", "path": "x", "weight": 1.0}, {"name": "b", "path": "y"}]})
    with pytest.raises(ValidationError):
        MixerConfig.model_validate({"sources": [{"name": "a", "path": "x", "weight": 0.0}]})


def test_source_inventory_covers_every_category():
    assert {s.category for s in ONE_STAGE_SOURCES} == {"language", "vision", "vision-language", "ocr", "som"}
    assert all(s.samples > 0 and s.datasets for s in ONE_STAGE_SOURCES)


def test_train_config_from_file(tmp_path, monkeypatch):
    path = tmp_path / "train.env"
    path.write_text(
        "lr_peak=0.001\nbetas=[0.8,0.9]\ntotal_steps=5\nfreeze={\"projection\":true}\n", encoding="utf-8"
    )
    monkeypatch.setenv("BATCH_SIZE", "99")
    cfg = TrainConfig.from_file(path)
    assert cfg.lr_peak == 0.001 and cfg.betas == (0.8, 0.9) and cfg.total_steps == 5
    assert cfg.freeze.projection and cfg.freeze.visual_encoders
    assert cfg.batch_size == 8

    again = tmp_path / "again.env"
    again.write_text(cfg.to_lines(), encoding="utf-8")
    assert TrainConfig.from_file(again) == cfg

    bad = tmp_path / "bad.env"
    bad.write_text("lr_peak=-1\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        TrainConfig.from_file(bad)


def test_masked_loss_linearity():
    torch.manual_seed(0)
    logits = torch.randn(1, 6, 10)
    targets = torch.randint(0, 10, (1, 6))
    a = torch.tensor([[0, 1, 1, 0, 0, 0]], dtype=torch.float32)
    b = torch.tensor([[0, 0, 0, 1, 1, 0]], dtype=torch.float32)
    la, lb = masked_next_token_loss(logits, targets, a), masked_next_token_loss(logits, targets, b)
    both = masked_next_token_loss(logits, targets, a + b)
    assert float(both) == pytest.approx((float(la) + float(lb)) / 2, abs=1e-6)
    assert float(masked_next_token_loss(logits, targets, torch.zeros(1, 6))) == 0.0


def test_user_tokens_do_not_move_the_loss():
    """Embedding -> logit model: each logit depends on its own token only."""
    tok = ByteTokenizer()
    image = MediaRef(path="img.png", width=64, height=64)
    short = tokenize_with_loss_mask(convert_vqa(image, "colour?", "red square"), tok)
    long = tokenize_with_loss_mask(convert_vqa(image, "what colour is the shape on the left?", "red square"), tok)
    assert len(long.ids) > len(short.ids)

    torch.manual_seed(0)
    embed = torch.nn.Embedding(tok.vocab_size, 16)
    head = torch.nn.Linear(16, tok.vocab_size)

    def loss(sample):
        ids = torch.tensor([sample.ids])
        mask = torch.tensor([sample.mask], dtype=torch.float32)
        return float(masked_next_token_loss(head(embed(ids)), ids, mask))

    assert loss(long) == pytest.approx(loss(short), abs=1e-6)




def test_visual_positions_carry_no_loss(tiny_model, shapes_items):
    batch = tiny_model.build_batch(shapes_items[:2])
    vision = batch.modality == VISION
    assert vision.any()
    assert batch.mask[vision].eq(0).all()
    media = shapes_items[0].record.media[0]
    plan = plan_partition(media.width, media.height, 64, 32)
    first = tiny_model.embed_record(shapes_items[0])
    assert int((first.modality == VISION).sum()) == plan.visual_sequence_length(4)


def test_lr_zero_leaves_parameters_unchanged(tiny_model, shapes_items):
    cfg = TrainConfig(batch_size=2, total_steps=2)
    tiny_model.apply_freeze()
    optimizer = make_optimizer(tiny_model, cfg)
    before = parameter_hash(tiny_model.parameters())
    metrics = train_step(tiny_model, optimizer, shapes_items[:2], cfg, step=0, lr=0.0)
    assert metrics.loss > 0 and math.isfinite(metrics.grad_norm)
    assert parameter_hash(tiny_model.parameters()) == before


def test_freeze_keeps_encoders_and_trains_the_rest(tiny_model, shapes_items):
    cfg = TrainConfig(batch_size=1, total_steps=100, lr_peak=1e-3)
    tiny_model.apply_freeze()
    groups = tiny_model.parameter_groups()
    hashes = {name: parameter_hash(params) for name, params in groups.items()}
    optimizer = make_optimizer(tiny_model, cfg)
    for step in range(100):
        train_step(tiny_model, optimizer, [shapes_items[step % 6]], cfg, step=step, lr=1e-3)
    after = {name: parameter_hash(params) for name, params in tiny_model.parameter_groups().items()}
    assert after["visual_encoders"] == hashes["visual_encoders"]
    assert after["projection"] != hashes["projection"]
    assert after["language_model"] != hashes["language_model"]


def test_encoders_cannot_be_unfrozen(tiny_model):
    with pytest.raises(ConfigurationError):
        tiny_model.apply_freeze(visual_encoders=False)
    tiny_model.apply_freeze(projection=True, language_model=True)
    with pytest.raises(ConfigurationError):
        make_optimizer(tiny_model, TrainConfig())


def test_all_zero_mask_is_a_noop(tiny_model, monkeypatch, shapes_items):
    cfg = TrainConfig(batch_size=1, total_steps=1)
    tiny_model.apply_freeze()
    optimizer = make_optimizer(tiny_model, cfg)
    tok = ByteTokenizer(tiny_model.lm_cfg.vocab_size)
    silent = TokenizedSample(ids=[tok.BOS, *tok.encode("hello")], mask=[0] * 6, media_slots=[])

    monkeypatch.setattr(tiny_model, "embed_record", lambda item: tiny_model.embed_tokenized(silent, []))
    before = parameter_hash(tiny_model.parameters())
    metrics = train_step(tiny_model, optimizer, shapes_items[:1], cfg, step=0, lr=1e-2)
    assert metrics.loss == 0.0 and metrics.grad_norm == 0.0
    assert parameter_hash(tiny_model.parameters()) == before


def test_model_rejects_width_mismatch(tiny_lm_cfg, tiny_vision_cfg):
    with pytest.raises(ConfigurationError):
        MultimodalLM(tiny_lm_cfg, tiny_vision_cfg.model_copy(update={"d_llm": 48}))
    with pytest.raises(ConfigurationError):
        MultimodalLM.from_presets("moe-huge")


def _mixer(shapes_dir):
    return MixerConfig.model_validate({"sources": [{"name": "shapes", "path": str(shapes_dir / "records.jsonl")}]})


def _fresh(tiny_lm_cfg, tiny_vision_cfg):
    torch.manual_seed(0)
    return MultimodalLM(tiny_lm_cfg, tiny_vision_cfg)


def test_metrics_csv_has_a_row_per_step(tmp_path, shapes_dir, tiny_lm_cfg, tiny_vision_cfg):
    cfg = TrainConfig(batch_size=2, total_steps=4, lr_peak=1e-3, warmup_frac=0.5, checkpoint_every=2)
    result = run_training(cfg, _mixer(shapes_dir), _fresh(tiny_lm_cfg, tiny_vision_cfg), run_dir=tmp_path / "run")
    assert result.step == 4 and result.checkpoint.name == "step-000004"
    with (tmp_path / "run" / "metrics.csv").open(encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    assert tuple(reader.fieldnames) == METRICS_COLUMNS
    assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
    lrs = [float(r["lr"]) for r in rows]
    # 6 records in batches of 2: 3 steps per epoch, warmup round(1.5) = 2
    assert lrs == pytest.approx([lr_at(s, 4, 2, 1e-3) for s in range(4)])
    assert sorted(p.name for p in (tmp_path / "run" / "checkpoints").iterdir()) == ["step-000002", "step-000004"]


def test_resume_matches_uninterrupted_run(tmp_path, shapes_dir, tiny_lm_cfg, tiny_vision_cfg):
    cfg = TrainConfig(batch_size=2, total_steps=6, lr_peak=1e-3, checkpoint_every=3)
    mixer = _mixer(shapes_dir)

    straight = _fresh(tiny_lm_cfg, tiny_vision_cfg)
    run_training(cfg, mixer, straight, run_dir=tmp_path / "a")

    interrupted = tmp_path / "b"
    run_training(cfg, mixer, _fresh(tiny_lm_cfg, tiny_vision_cfg), run_dir=interrupted)
    shutil.rmtree(interrupted / "checkpoints" / "step-000006")
    assert latest_checkpoint(interrupted).name == "step-000003"

    resumed = _fresh(tiny_lm_cfg, tiny_vision_cfg)
    result = run_training(cfg, mixer, resumed, run_dir=interrupted, resume=True)
    assert result.step == 6
    for (name, a), (_, b) in zip(straight.state_dict().items(), resumed.state_dict().items()):
        torch.testing.assert_close(a, b, rtol=0, atol=1e-6, msg=name)

    def losses(run):
        with (run / "metrics.csv").open(encoding="utf-8", newline="") as f:
            return [float(r["loss"]) for r in csv.DictReader(f)]

    assert losses(interrupted) == pytest.approx(losses(tmp_path / "a"), abs=1e-6)


def test_training_checkpoint_names_experts_by_layer(tmp_path, tiny_model, tiny_lm_cfg, tiny_vision_cfg):
    cfg = TrainConfig(batch_size=2, total_steps=2)
    optimizer = make_optimizer(tiny_model, cfg)
    ckpt = save_checkpoint(tmp_path / "ckpt", tiny_model, optimizer, cfg, step=1, position=2)
    assert expert_parameter_names(ckpt, 1, 7) == [
        "layer.1.expert.7.w_in.bias",
        "layer.1.expert.7.w_in.weight",
        "layer.1.expert.7.w_out.bias",
        "layer.1.expert.7.w_out.weight",
    ]
    assert not list((ckpt / "params").glob("lm.*.npy"))
    assert (ckpt / "params" / "skip_embedding.npy").exists()

    torch.manual_seed(5)
    restored = MultimodalLM(tiny_lm_cfg, tiny_vision_cfg)
    assert load_checkpoint(ckpt, restored) == {"step": 1, "position": 2}
    for (name, a), (_, b) in zip(tiny_model.state_dict().items(), restored.state_dict().items()):
        assert torch.equal(a, b), name


def test_feature_cache_is_bounded(tiny_lm_cfg, tiny_vision_cfg, shapes_items):
    cache = FeatureCache(2)
    for key in ("a", "b", "c"):
        cache.put(key, (key,))
    assert len(cache) == 2 and "a" not in cache
    assert cache.get("b") == ("b",)
    cache.put("d", ("d",))
    assert "b" in cache and "c" not in cache
    FeatureCache(0).put("a", ("a",))
    with pytest.raises(ConfigurationError):
        FeatureCache(-1)

    torch.manual_seed(0)
    model = MultimodalLM(tiny_lm_cfg, tiny_vision_cfg, feature_cache_size=1)
    first = model.embed_record(shapes_items[0]).embeds
    model.embed_record(shapes_items[1])
    assert len(model.feature_cache) == 1
    # evicted images are read again from disk
    assert torch.equal(model.embed_record(shapes_items[0]).embeds, first)




@pytest.mark.slow
def test_nano_presets_overfit_synthetic_shapes(tmp_path):
    synth_shapes_dataset(tmp_path / "shapes", n=32, seed=0)
    mixer = _mixer(tmp_path / "shapes")
    cfg = TrainConfig(batch_size=8, total_steps=2000, lr_peak=1e-3, warmup_frac=0.25, checkpoint_every=1000)
    model = MultimodalLM.from_presets("moe-nano", "mov-nano")
    result = run_training(cfg, mixer, model, run_dir=tmp_path / "run")
    assert result.last.loss < 0.1

    items = load_record_samples(tmp_path / "shapes" / "records.jsonl")
    grounding = [it for it in items if it.record.tags.domain == "grounding"]
    answers = [model.generate_answer(it, max_new_tokens=40)[0] for it in grounding]
    assert eval_rec([it.record for it in grounding], answers).value >= 0.9

"""CSV and SVG output for routing analyses."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from app.core.errors import InputError, QueryError  # noqa: E402
from app.modules.routing_lab.analysis import usage_distribution  # noqa: E402
from app.modules.routing_lab.models import ALL_MODALITIES, RoutingTrace, SweepRow, Tag  # noqa: E402

USAGE_COLUMNS = ("layer", "expert", "tag", "fraction")


def format_tag(tag: Tag) -> str:
    return f"{tag[0]}/{tag[1]}"


def parse_tag(text: str) -> Tag:
    modality, _, domain = text.partition("/")
    return modality, domain


def usage_rows(trace: RoutingTrace, *, include_aggregate: bool = True) -> list[dict]:
    tags = list(trace.tags())
    if include_aggregate:
        tags += sorted({(ALL_MODALITIES, d) for _, d in tags})
    rows = []
    for tag in tags:
        for layer in range(trace.n_layers):
            try:
                dist = usage_distribution(trace, layer, tag)
            except QueryError:
                continue
            for e, frac in enumerate(dist):
                rows.append({"layer": layer, "expert": e, "tag": format_tag(tag), "fraction": float(frac)})
    return rows


def write_usage_csv(trace: RoutingTrace, path: Path) -> int:
    rows = usage_rows(trace)
    _write(path, USAGE_COLUMNS, rows)
    return len(rows)


def write_sweep_csv(rows: Iterable[SweepRow], path: Path, *, key: str = "k") -> int:
    out = [{key: r.key, "run": r.run, "metric": r.metric} for r in rows]
    _write(path, (key, "run", "metric"), out)
    return len(out)


def _write(path: Path, columns: Sequence[str], rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path: Path) -> tuple[list[str], list[dict]]:
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def plot_usage(csv_path: Path, out_path: Path) -> Path:
    """One bar panel per layer, one bar group per expert, one colour per tag."""
    columns, rows = read_csv(csv_path)
    if tuple(columns) != USAGE_COLUMNS or not rows:
        raise InputError(f"{csv_path} is not a non-empty usage CSV")
    data: dict[int, dict[str, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for r in rows:
        data[int(r["layer"])][r["tag"]][int(r["expert"])] = float(r["fraction"])
    layers = sorted(data)
    tags = sorted({t for layer in layers for t in data[layer]})
    n_experts = 1 + max(int(r["expert"]) for r in rows)

    fig, axes = plt.subplots(len(layers), 1, figsize=(8, 2.2 * len(layers)), sharex=True, squeeze=False)
    width = 0.8 / max(1, len(tags))
    for ax, layer in zip(axes[:, 0], layers):
        for j, tag in enumerate(tags):
            ys = [data[layer][tag].get(e, 0.0) for e in range(n_experts)]
            ax.bar([e + j * width for e in range(n_experts)], ys, width=width, label=tag)
        ax.set_ylabel(f"layer {layer}")
        ax.set_ylim(0, 1)
    axes[-1, 0].set_xticks([e + 0.4 - width / 2 for e in range(n_experts)], [str(e) for e in range(n_experts)])
    axes[-1, 0].set_xlabel("expert")
    axes[0, 0].legend(fontsize="small", ncol=2)
    return _save(fig, out_path)


def plot_sweep(csv_path: Path, out_path: Path) -> Path:
    """Per-run points plus a dotted line through the per-key means."""
    columns, rows = read_csv(csv_path)
    if len(columns) != 3 or columns[1:] != ["run", "metric"] or not rows:
        raise InputError(f"{csv_path} is not a non-empty sweep CSV")
    key = columns[0]
    by_key: dict[int, list[float]] = defaultdict(list)
    for r in rows:
        by_key[int(r[key])].append(float(r["metric"]))
    keys = sorted(by_key)

    fig, ax = plt.subplots(figsize=(6, 4))
    for x in keys:
        ax.scatter([x] * len(by_key[x]), by_key[x], color="tab:blue", s=16)
    ax.plot(keys, [sum(by_key[x]) / len(by_key[x]) for x in keys], linestyle=":", color="tab:red", label="mean")
    ax.set_xlabel(key)
    ax.set_ylabel("metric")
    ax.set_xticks(keys)
    ax.legend()
    return _save(fig, out_path)


def _save(fig, out_path: Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path

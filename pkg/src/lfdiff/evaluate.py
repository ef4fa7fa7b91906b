"""Dataset-level evaluation, sampling-step ablations, and report emission
(CSV, plain-text summary, and deterministic SVG line plots)."""

from __future__ import annotations

import csv
from pathlib import Path

from .fileio import list_scene_dirs, load_scene
from .metrics import MetricReport, SceneMetrics, score_pair
from .model import LFDiffModel, infer

REPORT_COLUMNS = ["scene", "psnr_mu", "psnr_l", "ssim_mu", "ssim_l", "time_s"]
ABLATION_COLUMNS = ["S", "psnr_mu", "psnr_l", "ssim_mu", "ssim_l", "time_s", "dm_time_s"]


def evaluate_dataset(model: LFDiffModel, dataset_dir, S: int, seed: int) -> MetricReport:
    """Run inference on every scene (sorted by name; scene i uses seed + i),
    score against ground truth, and aggregate. Scenes without ground truth
    are skipped and listed in the report."""
    report = MetricReport(sampling_steps=S, seed=seed)
    for i, scene_dir in enumerate(list_scene_dirs(dataset_dir)):
        stack = load_scene(scene_dir)
        if stack.ground_truth is None:
            report.skipped.append(scene_dir.name)
            continue
        timings: dict = {}
        pred = infer(model, stack, S=S, seed=seed + i, timings=timings)
        scores = score_pair(stack.ground_truth, pred)
        report.scenes.append(
            SceneMetrics(
                name=scene_dir.name,
                time_s=timings["total_s"],
                dm_time_s=timings["dm_s"],
                **scores,
            )
        )
    return report


def ablate_sampling_steps(
    model: LFDiffModel, dataset_dir, S_list: list[int], seed: int
) -> list[tuple[int, MetricReport]]:
    return [(S, evaluate_dataset(model, dataset_dir, S, seed)) for S in S_list]


# emission ------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_report_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for s in report.scenes:
            writer.writerow(
                [s.name, _fmt(s.psnr_mu), _fmt(s.psnr_l), _fmt(s.ssim_mu),
                 _fmt(s.ssim_l), _fmt(s.time_s)]
            )
        if report.scenes:
            writer.writerow(
                ["mean", _fmt(report.mean("psnr_mu")), _fmt(report.mean("psnr_l")),
                 _fmt(report.mean("ssim_mu")), _fmt(report.mean("ssim_l")),
                 _fmt(report.mean("time_s"))]
            )


def parse_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return [dict(row) for row in csv.DictReader(f)]


def svg_line_plot(xs, series: dict[str, list[float]], xlabel: str, ylabel: str, title: str) -> str:
    """Minimal deterministic SVG line plot. Axis ranges are padded 5% around
    the data extrema and written as end-of-axis labels."""
    width, height = 640, 480
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    ys_all = [v for ys in series.values() for v in ys]
    if not ys_all:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    else:
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys_all), max(ys_all)
        x_pad = (x_hi - x_lo) * 0.05 or max(abs(x_lo), 1.0) * 0.05
        y_pad = (y_hi - y_lo) * 0.05 or max(abs(y_lo), 1.0) * 0.05
        x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
        y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def px(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="16">{title}</text>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height // 2})">{ylabel}</text>',
        f'<text class="axis-xmin" x="{ml}" y="{mt + ph + 16}" text-anchor="middle" '
        f'font-size="10">{x_lo:.6g}</text>',
        f'<text class="axis-xmax" x="{ml + pw}" y="{mt + ph + 16}" text-anchor="middle" '
        f'font-size="10">{x_hi:.6g}</text>',
        f'<text class="axis-ymin" x="{ml - 6}" y="{mt + ph}" text-anchor="end" '
        f'font-size="10">{y_lo:.6g}</text>',
        f'<text class="axis-ymax" x="{ml - 6}" y="{mt + 10}" text-anchor="end" '
        f'font-size="10">{y_hi:.6g}</text>',
    ]
    for i, (label, ys) in enumerate(sorted(series.items())):
        color = colors[i % len(colors)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )
        parts.append(
            f'<text x="{ml + pw - 6}" y="{mt + 16 + 14 * i}" text-anchor="end" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: MetricReport, out_dir) -> list[Path]:
    """Write report.csv, summary.txt, and per-scene metric plots; re-emission
    for an identical report is byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    csv_path = out_dir / "report.csv"
    write_report_csv(report, csv_path)
    paths.append(csv_path)

    lines = [
        f"scenes evaluated: {len(report.scenes)}",
        f"sampling steps:   {report.sampling_steps}",
        f"seed:             {report.seed}",
    ]
    if report.scenes:
        lines += [
            f"mean psnr_mu: {report.mean('psnr_mu'):.4f} dB",
            f"mean psnr_l:  {report.mean('psnr_l'):.4f} dB",
            f"mean ssim_mu: {report.mean('ssim_mu'):.6f}",
            f"mean ssim_l:  {report.mean('ssim_l'):.6f}",
            f"mean time:    {report.mean('time_s'):.4f} s/image",
        ]
    if report.skipped:
        lines.append("skipped (no ground truth): " + ", ".join(report.skipped))
    summary_path = out_dir / "summary.txt"
    summary_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths.append(summary_path)

    xs = list(range(len(report.scenes)))
    psnr_svg = svg_line_plot(
        xs,
        {"psnr_mu": [s.psnr_mu for s in report.scenes],
         "psnr_l": [s.psnr_l for s in report.scenes]},
        "scene index", "PSNR (dB)", "Per-scene PSNR",
    )
    psnr_path = out_dir / "psnr_per_scene.svg"
    psnr_path.write_text(psnr_svg, encoding="utf-8")
    paths.append(psnr_path)
    return paths


def write_ablation(results: list[tuple[int, MetricReport]], out_dir) -> list[Path]:
    """CSV plus PSNR-vs-S and time-vs-S plots for a sampling-step sweep."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ABLATION_COLUMNS)
        for S, report in results:
            writer.writerow(
                [S, _fmt(report.mean("psnr_mu")), _fmt(report.mean("psnr_l")),
                 _fmt(report.mean("ssim_mu")), _fmt(report.mean("ssim_l")),
                 _fmt(report.mean("time_s")), _fmt(report.mean("dm_time_s"))]
            )
    paths.append(csv_path)

    xs = [S for S, _ in results]
    psnr_path = out_dir / "psnr_vs_steps.svg"
    psnr_path.write_text(
        svg_line_plot(
            xs,
            {"psnr_mu": [r.mean("psnr_mu") for _, r in results],
             "psnr_l": [r.mean("psnr_l") for _, r in results]},
            "sampling steps S", "PSNR (dB)", "PSNR vs sampling steps",
        ),
        encoding="utf-8",
    )
    paths.append(psnr_path)

    time_path = out_dir / "time_vs_steps.svg"
    time_path.write_text(
        svg_line_plot(
            xs,
            {"time_s": [r.mean("time_s") for _, r in results],
             "dm_time_s": [r.mean("dm_time_s") for _, r in results]},
            "sampling steps S", "seconds per image", "Inference time vs sampling steps",
        ),
        encoding="utf-8",
    )
    paths.append(time_path)
    return paths

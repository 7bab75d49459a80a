"""Command-line interface.

Subcommands: ``segment`` (single image), ``evaluate`` (dataset), ``refine``
(mask refinement only), ``kernel-oracle`` (export kernel-size training
targets), ``bench`` (throughput), ``make-fixtures`` (synthetic datasets) and
``run-graph`` (execute an exported operator graph, used by the export
tooling's parity checks).

Exit codes: 0 success, 1 configuration error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import io as raster_io
from .errors import BackendError, ConfigError, CrackSegError, DataError
from .graph_runtime import load_graph
from .imgproc import BoundingBox, find_contours, mask_difference
from .kernels import DEFAULT_CANDIDATES, export_training_targets, score_kernels
from .lowrank import tensor_from_json, tensor_to_json
from .pipeline import (
    PipelineConfig,
    bench as run_bench,
    evaluate as run_evaluate,
    index_dataset,
    make_backend,
    run_single,
)
from .refine import RefinementConfig, refine as run_refine, make_selector
from .fixtures import write_dataset


def _common_options(fn):
    for option in reversed(
        [
            click.option("--points", type=click.Choice(["2", "4", "6"]), default="4",
                         show_default=True, help="Total point prompts per map pair."),
            click.option("--area-threshold", type=int, default=50, show_default=True,
                         help="Minimum region area (pixels) contributing prompts."),
            click.option("--kernel", default="fixed:3", show_default=True,
                         help="Kernel selector: fixed:K | oracle | heuristic | learned:MANIFEST."),
            click.option("--backend", default="synthetic", show_default=True,
                         help="Backend: synthetic[:spec.json] | neural:manifest.json."),
            click.option("--detector", default="gt", show_default=True,
                         help="Box source: gt | neural:manifest.json."),
            click.option("--expand", type=float, default=0.2, show_default=True,
                         help="Box expansion factor before cropping."),
            click.option("--alpha", type=float, default=0.5, show_default=True,
                         help="Overlay fusion weight."),
            click.option("--seed", type=int, default=0, show_default=True,
                         help="Base RNG seed."),
            click.option("--agg", type=click.Choice(["image-mean", "pixel-pooled"]),
                         default="image-mean", show_default=True,
                         help="Dataset metric aggregation."),
            click.option("--letterbox", is_flag=True,
                         help="Letterbox crops instead of stretching them."),
            click.option("--no-erode-intersection", is_flag=True,
                         help="Skip erosion of the intersection map."),
        ]
    ):
        fn = option(fn)
    return fn


def _build_config(points, area_threshold, kernel, backend, detector, expand,
                  alpha, seed, agg, letterbox, no_erode_intersection) -> PipelineConfig:
    refine_cfg = RefinementConfig(
        points_per_map=int(points) // 2,
        area_threshold=area_threshold,
        kernel_mode=kernel,
        expand_factor=expand,
        fusion_alpha=alpha,
        rng_seed=seed,
        erode_intersection=not no_erode_intersection,
    )
    return PipelineConfig(
        refine=refine_cfg,
        backend_spec=backend,
        detector_spec=detector,
        aggregation=agg,
        letterbox=letterbox,
    )


def _write_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        click.echo(text)


@click.group()
def cli():
    """Crack segmentation with prompt-based mask refinement."""


@cli.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", type=click.Path(exists=True, dir_okay=False),
              help="Ground-truth mask (needed for the gt detector and metrics).")
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory for the mask and overlay PNGs.")
@click.option("--report", type=click.Path(dir_okay=False), help="Write the JSON row here.")
@_common_options
def segment(image, gt, out, report, **opts):
    """Detect, segment and refine cracks in one image."""
    cfg = _build_config(**opts)
    backend = make_backend(cfg.backend_spec)
    img = raster_io.load_image(image)
    gt_mask = raster_io.load_mask(gt) if gt else None
    stem = Path(image).stem
    result = run_single(cfg, backend, img, gt=gt_mask, stem=stem)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    raster_io.save_mask(out_dir / f"{stem}.mask.png", result.refined_mask)
    raster_io.save_image(out_dir / f"{stem}.overlay.png", result.overlay)
    if report:
        _write_report(result.row, report)
    if "refined" in result.row:
        click.echo(
            f"{stem}: dice initial={result.row['initial']['dice']:.4f} "
            f"refined={result.row['refined']['dice']:.4f}"
        )
    else:
        click.echo(f"{stem}: wrote {out_dir / (stem + '.mask.png')}")


@cli.command()
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--masks", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False),
              help="Also write per-image mask/overlay PNGs here.")
@click.option("--report", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@_common_options
def evaluate(images, masks, out, report, **opts):
    """Evaluate the pipeline over an image/mask dataset."""
    cfg = _build_config(**opts)
    dataset = index_dataset(images, masks)
    for stem in dataset.unmatched_images:
        click.echo(f"warning: no mask for image {stem}", err=True)
    for stem in dataset.unmatched_masks:
        click.echo(f"warning: no image for mask {stem}", err=True)
    result = run_evaluate(cfg, dataset, save_outputs_to=out)
    _write_report(result, report)
    if "aggregate" in result:
        agg = result["aggregate"]
        click.echo(
            f"{len(result['images'])} images: dice initial={agg['initial']['dice']:.4f} "
            f"refined={agg['refined']['dice']:.4f} "
            f"(delta {agg['delta']['dice']:+.4f})",
            err=True,
        )


@cli.command("refine")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask", type=click.Path(exists=True, dir_okay=False))
@click.option("--boxes", help="Semicolon-separated x,y,w,h boxes in image pixels "
                              "(default: bounding boxes of the mask components).")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Path for the refined mask PNG.")
@click.option("--report", type=click.Path(dir_okay=False), help="Write the JSON summary here.")
@_common_options
def refine_cmd(image, mask, boxes, out, report, **opts):
    """Refine an existing mask for an image (no detector, no pasting)."""
    cfg = _build_config(**opts)
    backend = make_backend(cfg.backend_spec)
    img = raster_io.load_image(image)
    m = raster_io.load_mask(mask)
    if boxes:
        parsed = []
        for chunk in boxes.split(";"):
            try:
                x, y, w, h = (int(v) for v in chunk.split(","))
            except ValueError:
                raise ConfigError(f"bad box {chunk!r}, expected x,y,w,h") from None
            parsed.append(BoundingBox(x, y, w, h))
    else:
        parsed = [r.bbox for r in find_contours(m)]
    if not parsed:
        raise DataError("mask has no components and no boxes were given")
    selector = make_selector(cfg.refine.kernel_mode, reference=m)
    outcome = run_refine(backend, img, parsed, m, cfg.refine, selector)
    raster_io.save_mask(out, outcome.refined)
    summary = {
        "fallback": outcome.fallback,
        "prompts": [{"x": p.x, "y": p.y, "label": p.label} for p in outcome.prompts],
        "kernels": list(outcome.kernels),
    }
    if report:
        _write_report(summary, report)
    click.echo(f"wrote {out} ({'fallback, mask unchanged' if outcome.fallback else f'{len(outcome.prompts)} prompts'})")


@cli.command("kernel-oracle")
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--masks", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--initial", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of coarse-pass masks paired by stem.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="CSV of per-fixture kernel targets and scores.")
@_common_options
def kernel_oracle(images, masks, initial, out, **opts):
    """Export kernel-size training targets from difference maps.

    For every fixture the initial mask is compared with a fresh
    re-segmentation; each candidate kernel refines the difference map and is
    scored by IoU against ground truth. The argmax kernel is the training
    target.
    """
    cfg = _build_config(**opts)
    backend = make_backend(cfg.backend_spec)
    dataset = index_dataset(images, masks)
    initial_dir = Path(initial)
    rows = []
    skipped = 0
    for item in dataset.items:
        if item.mask_path is None:
            continue
        init_path = initial_dir / f"{item.stem}.png"
        if not init_path.exists():
            click.echo(f"warning: no initial mask for {item.stem}", err=True)
            continue
        img = raster_io.load_image(item.image_path)
        gt = raster_io.load_mask(item.mask_path)
        m = raster_io.load_mask(init_path)
        h, w = m.shape
        box = BoundingBox(0, 0, w, h)
        emb = backend.encode(img)
        m_prime = backend.decode(emb, [box])
        diff = mask_difference(m, m_prime)
        if not diff.any():
            skipped += 1
            continue

        def diff_refine(map_, k, _emb=emb, _box=box):
            from .imgproc import erode, make_elliptical_kernel
            from .prompts import RegionPointSet, extract_region_points, select_prompts

            rng = np.random.default_rng(cfg.refine.rng_seed)
            eroded = erode(map_, make_elliptical_kernel(k))
            candidates = [
                RegionPointSet(i, tuple(extract_region_points(eroded, r.bbox, cfg.refine.n_segments)))
                for i, r in enumerate(find_contours(eroded))
                if r.area > cfg.refine.area_threshold
            ]
            prompts = select_prompts(candidates, cfg.refine.points_per_map, 0, rng)
            if not prompts:
                return np.zeros_like(map_)
            return backend.decode(_emb, [_box], prompts)

        scores = score_kernels(diff_refine, diff, gt, DEFAULT_CANDIDATES)
        rows.append((item.stem, scores))
    if not rows:
        raise DataError("no fixtures produced a non-empty difference map")
    export_training_targets(rows, DEFAULT_CANDIDATES, out)
    click.echo(f"wrote {out}: {len(rows)} rows ({skipped} skipped, empty difference)")


@cli.command()
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--masks", type=click.Path(exists=True, file_okay=False))
@click.option("--warmup", type=int, default=1, show_default=True)
@click.option("--report", type=click.Path(dir_okay=False))
@_common_options
def bench(images, masks, warmup, report, **opts):
    """Measure per-stage throughput over a dataset."""
    cfg = _build_config(**opts)
    dataset = index_dataset(images, masks)
    result = run_bench(cfg, dataset, warmup=warmup)
    _write_report(result, report)
    stages = result["throughput"]["stages"]
    line = " ".join(f"{name}={info['fps']:.1f}" for name, info in sorted(stages.items()))
    click.echo(f"fps: total={result['throughput']['total_fps']:.1f} {line}", err=True)


@cli.command("make-fixtures")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--count", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", default="160x120", show_default=True, help="Fixture size WxH.")
@click.option("--no-initial", is_flag=True, help="Skip the coarse-pass masks.")
def make_fixtures(out, count, seed, size, no_initial):
    """Generate a synthetic dataset (images/, masks/, specs/, initial/)."""
    try:
        w, h = (int(v) for v in size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad size {size!r}, expected WxH") from None
    root = write_dataset(out, count, seed=seed, size=(w, h), with_initial=not no_initial)
    click.echo(f"wrote {count} fixtures under {root}")


@cli.command("run-graph")
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help='JSON {"inputs": {name: {shape, data}}}.')
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
def run_graph(graph_path, input_path, output_path):
    """Execute an exported operator graph on serialized tensors."""
    graph = load_graph(graph_path)
    try:
        doc = json.loads(Path(input_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read inputs {input_path}: {exc}") from exc
    inputs = {name: tensor_from_json(t) for name, t in doc.get("inputs", {}).items()}
    result = graph.run(inputs)
    payload = {"outputs": {graph.output_name: tensor_to_json(result)}}
    Path(output_path).write_text(json.dumps(payload))
    click.echo(f"wrote {output_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 130
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 3
    except CrackSegError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())

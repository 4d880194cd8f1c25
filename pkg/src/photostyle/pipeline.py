"""End-to-end run orchestration: ingest images and labels, run the
two-stage optimization, write every artifact (images, traces, manifest,
diagnostics)."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, normalized_dict
from .errors import LabelError
from .features import extract_features
from .image import load_png, save_png
from .losses import (
    build_objective_state,
    total_loss,
    write_trace_csv,
)
from .matting import matting_penalty
from .optimize import StageResult, minimize, noise_image, two_stage_transfer
from .segmentation import (
    DEFAULT_MERGE_NAMES,
    LabelMaskStack,
    MergeTable,
    build_mask_stack,
    load_label_image,
    merge_labels,
    read_color_table,
    remap_orphans,
)
from .features import patch_correspondence

log = logging.getLogger(__name__)


def _resolve_merge_chains(mapping: dict[int, int]) -> dict[int, int]:
    """Follow a -> b -> c chains to their end so one merge pass is enough."""
    resolved = {}
    for start in mapping:
        seen = {start}
        current = start
        while mapping.get(current, current) != current:
            current = mapping[current]
            if current in seen:
                raise LabelError(f"merge table contains a cycle through {start}")
            seen.add(current)
        resolved[start] = current
    return resolved


def prepare_masks(config: RunConfig):
    """Load label images, merge classes, remap orphans, build mask stacks.

    Returns (masks pair or None, id -> name dict) where the pair is
    (input stack, style stack) over the shared class list.
    """
    labels = config.labels
    if not labels.provided:
        return None, {0: "all"}

    in_colors = read_color_table(labels.input_sidecar)
    style_colors = read_color_table(labels.style_sidecar)

    merge_names = dict(DEFAULT_MERGE_NAMES) if labels.use_default_merges else {}
    merge_names.update(labels.merge)

    names = set(in_colors.values()) | set(style_colors.values())
    for prefs in labels.orphan_preferences.values():
        names |= set(prefs)
    while True:  # close over merge targets, including chained ones
        added = {merge_names[n] for n in names if n in merge_names} - names
        if not added:
            break
        names |= added
    name_to_id = {name: i for i, name in enumerate(sorted(names))}
    id_to_name = {i: name for name, i in name_to_id.items()}

    input_ids = load_label_image(labels.input_labels, in_colors, name_to_id)
    style_ids = load_label_image(labels.style_labels, style_colors, name_to_id)

    mapping = {i: i for i in name_to_id.values()}
    for src, dst in merge_names.items():
        if src in name_to_id and dst in name_to_id:
            mapping[name_to_id[src]] = name_to_id[dst]
    table = MergeTable(mapping=_resolve_merge_chains(mapping), names=id_to_name)
    input_ids = merge_labels(input_ids, table)
    style_ids = merge_labels(style_ids, table)

    prefs = {
        name_to_id[name]: tuple(name_to_id[p] for p in plist if p in name_to_id)
        for name, plist in labels.orphan_preferences.items()
        if name in name_to_id
    }
    input_ids = remap_orphans(input_ids, style_ids, prefs, id_to_name)

    classes = sorted(int(v) for v in np.unique(style_ids))
    input_stack = build_mask_stack(input_ids, classes)
    style_stack = build_mask_stack(style_ids, classes)
    return (input_stack, style_stack), {c: id_to_name[c] for c in classes}


def _lambda_dir_name(lam: float) -> str:
    return "lam_" + f"{lam:g}".replace("+", "")


def _stage_summary(result: StageResult) -> dict:
    return {
        "termination": result.termination,
        "iterations": len(result.trace) - 1,
        "final": result.final.to_dict(),
    }


def run_transfer(config: RunConfig) -> dict:
    """Execute a full run and write all declared artifacts.

    Returns the manifest dictionary (also written to manifest.json).
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    input_image = load_png(config.input_path)
    style_image = load_png(config.style_path)
    masks, class_names = prepare_masks(config)

    sweep = config.diagnostics.lambda_sweep
    need_laplacian = config.objective.lam > 0 or any(v > 0 for v in sweep)
    build_config = config.objective
    if need_laplacian and build_config.lam == 0:
        build_config = replace(build_config, lam=1.0)
    state = build_objective_state(
        input_image, style_image, masks, build_config, config.extractor
    )
    state = replace(state, lam=config.objective.lam)

    snapshot_cb = None
    if config.diagnostics.snapshot_every > 0:
        every = config.diagnostics.snapshot_every
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)

        def snapshot_cb(stage, iteration, image, breakdown):
            if iteration % every == 0:
                save_png(image, snap_dir / f"stage{stage}_iter{iteration:05d}.png")

    result = two_stage_transfer(
        input_image,
        style_image,
        masks,
        config.objective,
        config.extractor,
        config.optimizer,
        params_stage2=config.optimizer_stage2,
        snapshot_callback=snapshot_cb,
        state=state,
    )

    save_png(result.stage1.image, out / "stage1.png")
    save_png(result.stage2.image, out / "final.png")
    write_trace_csv(out / "stage1_trace.csv", result.stage1.trace)
    write_trace_csv(out / "stage2_trace.csv", result.stage2.trace)

    manifest = {
        "config": normalized_dict(config),
        "classes": {str(k): v for k, v in class_names.items()},
        "stage1": _stage_summary(result.stage1),
        "stage2": _stage_summary(result.stage2),
        "artifacts": {
            "stage1_image": "stage1.png",
            "final_image": "final.png",
            "stage1_trace": "stage1_trace.csv",
            "stage2_trace": "stage2_trace.csv",
        },
    }

    if state.laplacian is not None:
        manifest["matting_penalty"] = {
            "input": matting_penalty(state.laplacian, input_image),
            "stage1": matting_penalty(state.laplacian, result.stage1.image),
            "stage2": matting_penalty(state.laplacian, result.stage2.image),
        }

    if config.diagnostics.correspondence:
        layer = config.diagnostics.correspondence_layer
        out_feats = extract_features(result.stage2.image, config.extractor, [layer])[0]
        style_feats = extract_features(style_image, config.extractor, [layer])[0]
        corr = patch_correspondence(
            out_feats, style_feats, patch=config.diagnostics.correspondence_patch
        )
        save_png(corr, out / "correspondence.png")
        manifest["artifacts"]["correspondence"] = "correspondence.png"

    if sweep:
        sweep_rows = []
        sweep_root = out / "lambda_sweep"
        sweep_root.mkdir(exist_ok=True)
        for lam in sweep:
            state_l = replace(state, lam=lam)
            stage2 = minimize(
                lambda x: total_loss(state_l, x),
                result.stage1.image,
                config.optimizer_stage2,
            )
            subdir = sweep_root / _lambda_dir_name(lam)
            subdir.mkdir(exist_ok=True)
            save_png(stage2.image, subdir / "final.png")
            write_trace_csv(subdir / "trace.csv", stage2.trace)
            row = {"lambda": lam, **_stage_summary(stage2)}
            if state.laplacian is not None:
                row["matting_penalty"] = matting_penalty(state.laplacian, stage2.image)
            sweep_rows.append(row)
            log.info("lambda sweep %s done (%s)", lam, stage2.termination)
        manifest["lambda_sweep"] = sweep_rows

    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest

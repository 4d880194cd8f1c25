"""Run configuration: one TOML file per run, semantically validated as a
whole before any heavy work, with CLI flags layered on top.

Relative paths inside the file resolve against the file's directory, so a
config can travel with its assets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .features import (
    DEFAULT_CONTENT_LAYER,
    DEFAULT_CORRESPONDENCE_LAYER,
    DEFAULT_LAYERS,
    DEFAULT_STYLE_LAYERS,
    ExtractorSpec,
    LayerSpec,
    LayerWeights,
)
from .losses import STYLE_NORM_MODES, ObjectiveConfig
from .optimize import OptimizerParams


def default_layer_weights() -> LayerWeights:
    return LayerWeights(
        content={DEFAULT_CONTENT_LAYER: 1.0},
        style={name: 1.0 / len(DEFAULT_STYLE_LAYERS) for name in DEFAULT_STYLE_LAYERS},
    )


@dataclass(frozen=True)
class LabelConfig:
    input_labels: Path | None = None
    style_labels: Path | None = None
    input_sidecar: Path | None = None
    style_sidecar: Path | None = None
    merge: dict[str, str] = field(default_factory=dict)
    orphan_preferences: dict[str, tuple[str, ...]] = field(default_factory=dict)
    use_default_merges: bool = True

    def __post_init__(self):
        # dataclass is frozen; dict fields are treated as read-only
        pass

    @property
    def provided(self) -> bool:
        return self.input_labels is not None


@dataclass(frozen=True)
class DiagnosticsConfig:
    correspondence: bool = False
    correspondence_layer: str = DEFAULT_CORRESPONDENCE_LAYER
    correspondence_patch: int = 3
    snapshot_every: int = 0
    lambda_sweep: tuple[float, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    input_path: Path
    style_path: Path
    output_dir: Path
    objective: ObjectiveConfig
    extractor: ExtractorSpec
    optimizer: OptimizerParams
    optimizer_stage2: OptimizerParams
    labels: LabelConfig
    diagnostics: DiagnosticsConfig


_KNOWN_SECTIONS = {
    "paths",
    "objective",
    "extractor",
    "optimizer",
    "labels",
    "diagnostics",
}
_KNOWN_KEYS = {
    "paths": {
        "input",
        "style",
        "output_dir",
        "input_labels",
        "style_labels",
        "input_label_colors",
        "style_label_colors",
    },
    "objective": {
        "gamma",
        "lambda",
        "matting_epsilon",
        "window_radius",
        "style_norm",
        "content_weights",
        "style_weights",
    },
    "extractor": {"kind", "seed", "path", "layers"},
    "optimizer": {
        "method",
        "max_iters",
        "max_iters_stage1",
        "max_iters_stage2",
        "history",
        "step_size",
        "tolerance",
        "tol_window",
        "seed",
    },
    "labels": {"merge", "orphan_preferences", "use_default_merges"},
    "diagnostics": {
        "correspondence",
        "correspondence_layer",
        "correspondence_patch",
        "snapshot_every",
        "lambda_sweep",
    },
}


def _number(raw, section, key, problems, default, minimum=None, strict=False):
    value = raw.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        problems.append(f"{section}.{key} must be a number")
        return default
    value = float(value)
    if minimum is not None:
        if strict and value <= minimum:
            problems.append(f"{section}.{key} must be > {minimum:g}")
        elif not strict and value < minimum:
            problems.append(f"{key} must be >= {minimum:g}")
    return value


def _integer(raw, section, key, problems, default, minimum):
    value = raw.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        problems.append(f"{section}.{key} must be an integer")
        return default
    if value < minimum:
        problems.append(f"{section}.{key} must be >= {minimum}")
    return value


def _weight_table(raw, section, problems) -> dict[str, float] | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        problems.append(f"{section} must be a table of layer = weight")
        return None
    table = {}
    for name, value in raw.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            problems.append(f"{section}.{name} must be a number")
            continue
        if value < 0:
            problems.append(f"{section}.{name} must be >= 0")
            continue
        table[str(name)] = float(value)
    return table


def _parse_layers(raw, problems) -> tuple[LayerSpec, ...]:
    layers = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            problems.append(f"extractor.layers[{i}] must be a table")
            continue
        try:
            layers.append(
                LayerSpec(
                    str(entry["name"]), int(entry["filters"]), int(entry["downsample"])
                )
            )
        except (KeyError, TypeError, ValueError):
            problems.append(
                f"extractor.layers[{i}] needs name, filters and downsample"
            )
    return tuple(layers)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run config; raises ConfigError listing every
    problem found, not just the first."""
    path = Path(path)
    problems: list[str] = []
    if not path.is_file():
        raise ConfigError([f"config file {path} does not exist"])
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error in {path}: {exc}"]) from None

    base = path.parent
    overrides = overrides or {}

    for section in raw:
        if section not in _KNOWN_SECTIONS:
            problems.append(f"unknown section [{section}]")
        elif not isinstance(raw[section], dict):
            problems.append(f"[{section}] must be a table")
        else:
            for key in raw[section]:
                if key not in _KNOWN_KEYS[section]:
                    problems.append(f"unknown key {section}.{key}")

    def section(name):
        value = raw.get(name, {})
        return value if isinstance(value, dict) else {}

    paths = section("paths")

    def resolve(key, required=False):
        value = paths.get(key)
        if value is None:
            if required:
                problems.append(f"paths.{key} is required")
            return None
        return (base / str(value)).resolve()

    input_path = resolve("input", required=True)
    style_path = resolve("style", required=True)
    out_override = overrides.get("out")
    if out_override is not None:
        output_dir = Path(out_override).resolve()
    else:
        output_dir = (base / str(paths.get("output_dir", "out"))).resolve()
    input_labels = resolve("input_labels")
    style_labels = resolve("style_labels")
    input_sidecar = resolve("input_label_colors")
    style_sidecar = resolve("style_label_colors")

    for name, p in (("input", input_path), ("style", style_path)):
        if p is not None and not p.is_file():
            problems.append(f"paths.{name}: file {p} does not exist")
    if (input_labels is None) != (style_labels is None):
        problems.append("paths.input_labels and paths.style_labels must be given together")
    for name, p in (("input_labels", input_labels), ("style_labels", style_labels)):
        if p is not None and not p.is_file():
            problems.append(f"paths.{name}: file {p} does not exist")
    if input_labels is not None and input_sidecar is None:
        input_sidecar = input_labels.with_suffix(".json")
    if style_labels is not None and style_sidecar is None:
        style_sidecar = style_labels.with_suffix(".json")
    for name, p in (
        ("input_label_colors", input_sidecar),
        ("style_label_colors", style_sidecar),
    ):
        if p is not None and not p.is_file():
            problems.append(f"paths.{name}: file {p} does not exist")

    # extractor first: weight validation needs the layer names
    extractor_raw = section("extractor")
    kind = extractor_raw.get("kind", "seeded-cnn")
    if kind not in ("seeded-cnn", "file"):
        problems.append(f"extractor.kind {kind!r} is not one of seeded-cnn, file")
        kind = "seeded-cnn"
    if kind == "file":
        problems.append(
            "extractor.kind 'file' cannot drive optimization (no gradients); "
            "use seeded-cnn for transfer runs"
        )
    seed = _integer(extractor_raw, "extractor", "seed", problems, 0, 0)
    layers = DEFAULT_LAYERS
    if "layers" in extractor_raw:
        if isinstance(extractor_raw["layers"], list):
            parsed = _parse_layers(extractor_raw["layers"], problems)
            if parsed:
                layers = parsed
        else:
            problems.append("extractor.layers must be an array of tables")
    try:
        extractor = ExtractorSpec(kind="seeded-cnn", seed=int(seed), layers=layers)
    except ValueError as exc:
        problems.append(f"extractor: {exc}")
        extractor = ExtractorSpec()
    layer_names = set(extractor.layer_names())

    objective_raw = section("objective")
    gamma = _number(objective_raw, "objective", "gamma", problems, 1e2, minimum=0.0)
    lam = _number(objective_raw, "objective", "lambda", problems, 1e4, minimum=0.0)
    eps = _number(
        objective_raw, "objective", "matting_epsilon", problems, 1e-5, minimum=0.0, strict=True
    )
    radius = _integer(objective_raw, "objective", "window_radius", problems, 1, 1)
    style_norm = objective_raw.get("style_norm", "mask-weighted")
    if style_norm not in STYLE_NORM_MODES:
        problems.append(
            f"objective.style_norm must be one of {', '.join(STYLE_NORM_MODES)}"
        )
        style_norm = "mask-weighted"

    defaults = default_layer_weights()
    content_w = _weight_table(
        objective_raw.get("content_weights"), "objective.content_weights", problems
    )
    style_w = _weight_table(
        objective_raw.get("style_weights"), "objective.style_weights", problems
    )
    if content_w is None:
        content_w = dict(defaults.content)
    if style_w is None:
        style_w = dict(defaults.style)
    for table_name, table in (("content", content_w), ("style", style_w)):
        for layer in table:
            if layer not in layer_names:
                problems.append(
                    f"{table_name} weight references unknown layer {layer!r}"
                )
        if not any(v > 0 for v in table.values()):
            problems.append(f"at least one {table_name} weight must be positive")

    optimizer_raw = section("optimizer")
    method = optimizer_raw.get("method", "lbfgs")
    if method not in ("lbfgs", "adam"):
        problems.append(f"optimizer.method {method!r} is not one of lbfgs, adam")
        method = "lbfgs"
    max_iters = _integer(optimizer_raw, "optimizer", "max_iters", problems, 500, 1)
    iters1 = _integer(
        optimizer_raw, "optimizer", "max_iters_stage1", problems, max_iters, 1
    )
    iters2 = _integer(
        optimizer_raw, "optimizer", "max_iters_stage2", problems, max_iters, 1
    )
    history = _integer(optimizer_raw, "optimizer", "history", problems, 10, 1)
    step = _number(
        optimizer_raw, "optimizer", "step_size", problems, 1e-2, minimum=0.0, strict=True
    )
    tol = _number(
        optimizer_raw, "optimizer", "tolerance", problems, 1e-6, minimum=0.0, strict=True
    )
    tol_window = _integer(optimizer_raw, "optimizer", "tol_window", problems, 5, 1)
    opt_seed = _integer(optimizer_raw, "optimizer", "seed", problems, 0, 0)

    labels_raw = section("labels")
    merge = labels_raw.get("merge", {})
    if not isinstance(merge, dict) or not all(
        isinstance(v, str) for v in merge.values()
    ):
        problems.append("labels.merge must map label names to label names")
        merge = {}
    orphan_raw = labels_raw.get("orphan_preferences", {})
    orphan: dict[str, tuple[str, ...]] = {}
    if not isinstance(orphan_raw, dict):
        problems.append("labels.orphan_preferences must be a table of name = [names]")
    else:
        for name, prefs in orphan_raw.items():
            if not isinstance(prefs, list) or not all(
                isinstance(p, str) for p in prefs
            ):
                problems.append(
                    f"labels.orphan_preferences.{name} must be a list of label names"
                )
                continue
            orphan[str(name)] = tuple(prefs)
    use_defaults = labels_raw.get("use_default_merges", True)
    if not isinstance(use_defaults, bool):
        problems.append("labels.use_default_merges must be a boolean")
        use_defaults = True

    diag_raw = section("diagnostics")
    correspondence = diag_raw.get("correspondence", False)
    if not isinstance(correspondence, bool):
        problems.append("diagnostics.correspondence must be a boolean")
        correspondence = False
    corr_layer = str(diag_raw.get("correspondence_layer", DEFAULT_CORRESPONDENCE_LAYER))
    if corr_layer not in layer_names:
        problems.append(
            f"diagnostics.correspondence_layer references unknown layer {corr_layer!r}"
        )
    corr_patch = _integer(diag_raw, "diagnostics", "correspondence_patch", problems, 3, 1)
    snapshot_every = _integer(diag_raw, "diagnostics", "snapshot_every", problems, 0, 0)
    sweep_raw = diag_raw.get("lambda_sweep", [])
    sweep: tuple[float, ...] = ()
    if not isinstance(sweep_raw, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in sweep_raw
    ):
        problems.append("diagnostics.lambda_sweep must be a list of numbers")
    elif any(v < 0 for v in sweep_raw):
        problems.append("diagnostics.lambda_sweep values must be >= 0")
    else:
        sweep = tuple(float(v) for v in sweep_raw)

    # CLI overrides participate in the same validation
    if "lambda" in overrides:
        lam = float(overrides["lambda"])
        if lam < 0:
            problems.append("lambda must be >= 0")
    if "gamma" in overrides:
        gamma = float(overrides["gamma"])
        if gamma < 0:
            problems.append("gamma must be >= 0")
    if "seed" in overrides:
        opt_seed = int(overrides["seed"])

    if problems:
        raise ConfigError(problems)

    weights = LayerWeights(content=content_w, style=style_w)
    objective = ObjectiveConfig(
        weights=weights,
        gamma=gamma,
        lam=lam,
        matting_eps=eps,
        window_radius=radius,
        style_norm=style_norm,
    )
    optimizer = OptimizerParams(
        method=method,
        max_iters=iters1,
        history=history,
        step_size=step,
        tol=tol,
        tol_window=tol_window,
        seed=opt_seed,
    )
    optimizer_stage2 = replace(optimizer, max_iters=iters2)
    return RunConfig(
        input_path=input_path,
        style_path=style_path,
        output_dir=output_dir,
        objective=objective,
        extractor=extractor,
        optimizer=optimizer,
        optimizer_stage2=optimizer_stage2,
        labels=LabelConfig(
            input_labels=input_labels,
            style_labels=style_labels,
            input_sidecar=input_sidecar,
            style_sidecar=style_sidecar,
            merge=dict(merge),
            orphan_preferences=orphan,
            use_default_merges=use_defaults,
        ),
        diagnostics=DiagnosticsConfig(
            correspondence=correspondence,
            correspondence_layer=corr_layer,
            correspondence_patch=corr_patch,
            snapshot_every=snapshot_every,
            lambda_sweep=sweep,
        ),
    )


def validate_config(path, overrides: dict | None = None) -> RunConfig:
    """Alias of load_config: full semantic validation up front."""
    return load_config(path, overrides)


def normalized_dict(config: RunConfig) -> dict:
    """JSON-serializable echo of a validated config."""
    return {
        "paths": {
            "input": str(config.input_path),
            "style": str(config.style_path),
            "output_dir": str(config.output_dir),
            "input_labels": str(config.labels.input_labels)
            if config.labels.input_labels
            else None,
            "style_labels": str(config.labels.style_labels)
            if config.labels.style_labels
            else None,
        },
        "objective": {
            "gamma": config.objective.gamma,
            "lambda": config.objective.lam,
            "matting_epsilon": config.objective.matting_eps,
            "window_radius": config.objective.window_radius,
            "style_norm": config.objective.style_norm,
            "content_weights": dict(config.objective.weights.content),
            "style_weights": dict(config.objective.weights.style),
        },
        "extractor": {
            "kind": config.extractor.kind,
            "seed": config.extractor.seed,
            "layers": [
                {"name": l.name, "filters": l.filters, "downsample": l.downsample}
                for l in config.extractor.layers
            ],
        },
        "optimizer": {
            "method": config.optimizer.method,
            "max_iters_stage1": config.optimizer.max_iters,
            "max_iters_stage2": config.optimizer_stage2.max_iters,
            "history": config.optimizer.history,
            "step_size": config.optimizer.step_size,
            "tolerance": config.optimizer.tol,
            "tol_window": config.optimizer.tol_window,
            "seed": config.optimizer.seed,
        },
        "labels": {
            "merge": dict(config.labels.merge),
            "orphan_preferences": {
                k: list(v) for k, v in config.labels.orphan_preferences.items()
            },
            "use_default_merges": config.labels.use_default_merges,
        },
        "diagnostics": {
            "correspondence": config.diagnostics.correspondence,
            "correspondence_layer": config.diagnostics.correspondence_layer,
            "correspondence_patch": config.diagnostics.correspondence_patch,
            "snapshot_every": config.diagnostics.snapshot_every,
            "lambda_sweep": list(config.diagnostics.lambda_sweep),
        },
    }


def config_json(config: RunConfig) -> str:
    return json.dumps(normalized_dict(config), indent=2, sort_keys=True)

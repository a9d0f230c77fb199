"""Config-driven experiments: evolve, certify, modal and capture.

Config files are sectioned ``key = value`` text::

    [experiment]
    kind = evolve

    [field]
    kind = quadratic      # quadratic | gaussian | annulus | image
    k = 1

    [contour]
    source = circle
    count = 16
    radius = 2

    [params]
    omega1 = 0.1
    gamma = 1
    tau = 0.05
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dynsnake.capture import capture_certificate, verify_capture
from dynsnake.contour import Contour, build_matrices, circle, hessian_Ep, line, read_contour_csv, write_contour_csv
from dynsnake.convexity import DEFAULT_N_SEGMENTS, certify
from dynsnake.dynamics import STOP_CRITERION, evolve
from dynsnake.errors import ConfigError
from dynsnake.models import (
    CONVEXITY_CSV_COLUMNS,
    ContourSource,
    ContourSpec,
    FieldSpec,
    Region,
    SnakeParams,
    StopSpec,
)
from dynsnake.potential import ScalarField, build_synthetic, edge_potential, load_pgm, rasterize
from dynsnake.render import render_overlay, view_bounds, write_pgm
from dynsnake.spectral import classify_equilibrium, damping_regimes, equilibrium_residual, modal_spectrum

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2

RENDER_SPACING_CELLS = 200


class ExperimentKind(str, Enum):
    EVOLVE = "evolve"
    CERTIFY = "certify"
    MODAL = "modal"
    CAPTURE = "capture"


class ImageSpec(BaseModel):
    """Image-derived potential: a PGM file turned into an edge map."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    path: str
    sigma: float = Field(1.0, ge=0)
    spacing: float = Field(1.0, gt=0)
    origin: tuple[float, float] = (0.0, 0.0)
    edge: bool = True  # false uses the normalised image itself as P


class RegionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    region: Region
    grid_step: float | None = Field(None, gt=0)
    n_segments: int = Field(DEFAULT_N_SEGMENTS, ge=2)


class CaptureSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    verify: bool = True
    max_iter: int = Field(2000, ge=0)


class ModalSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    relax: bool = False  # evolve to a steady state before the analysis
    tolerance: float = Field(1e-9, gt=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ExperimentKind
    field: FieldSpec | None = None
    image: ImageSpec | None = None
    contour: ContourSpec
    velocity: tuple[float, float] = (0.0, 0.0)
    params: SnakeParams = SnakeParams()
    region: RegionSpec | None = None
    stop: StopSpec = StopSpec()
    capture: CaptureSpec = CaptureSpec()
    modal: ModalSpec = ModalSpec()
    out_dir: str | None = None
    render: bool = False


SECTION_KEYS: dict[str, set[str]] = {
    "experiment": {"kind"},
    "field": {
        "kind", "center", "k", "amplitude", "width", "radius", "bounds",
        "path", "sigma", "spacing", "origin", "edge",
    },
    "contour": {"source", "path", "count", "center", "radius", "start", "end", "velocity"},
    "params": {"omega1", "omega2", "mu", "gamma", "tau"},
    "region": {
        "shape", "center", "radius", "inner_radius", "min_corner", "max_corner",
        "boundary_samples", "grid_step", "n_segments",
    },
    "stop": {"criterion", "epsilon", "max_iter"},
    "capture": {"verify", "max_iter"},
    "modal": {"relax", "tolerance"},
    "output": {"dir", "render"},
}

TUPLE_KEYS = {"center", "bounds", "origin", "min_corner", "max_corner", "start", "end", "velocity"}
IMAGE_KEYS = {"path", "sigma", "spacing", "origin", "edge"}


@dataclass
class _Section:
    values: dict[str, Any] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)
    header_line: int = 0


def _strip_comment(raw: str) -> str:
    for i, ch in enumerate(raw):
        if ch == "#" and (i == 0 or raw[i - 1].isspace()):
            return raw[:i]
    return raw


def parse_sections(text: str, strict: bool = True) -> dict[str, _Section]:
    """Split config text into sections of raw string values, remembering line numbers."""
    sections: dict[str, _Section] = {}
    current: _Section | None = None
    current_name = ""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(raw).strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current_name = stripped[1:-1].strip().lower()
            if current_name not in SECTION_KEYS:
                raise ConfigError(f"unknown section [{current_name}]", line=line_no)
            if current_name in sections:
                raise ConfigError(f"duplicate section [{current_name}]", line=line_no)
            current = sections[current_name] = _Section(header_line=line_no)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", line=line_no)
        if current is None:
            raise ConfigError("key outside of any [section]", line=line_no)
        key, value = (part.strip() for part in stripped.split("=", 1))
        key = key.lower()
        if key not in SECTION_KEYS[current_name]:
            if strict:
                raise ConfigError(f"unknown key '{key}' in [{current_name}]", line=line_no, key=key)
            logger.warning("line %d: ignoring unknown key '%s' in [%s]", line_no, key, current_name)
            continue
        if key in current.values:
            raise ConfigError(
                f"duplicate key '{key}' in [{current_name}] (first set on line {current.lines[key]})",
                line=line_no,
                key=key,
            )
        if not value:
            raise ConfigError(f"empty value for '{key}'", line=line_no, key=key)
        current.values[key] = [v.strip() for v in value.split(",")] if key in TUPLE_KEYS else value
        current.lines[key] = line_no
    return sections


def _build(model: type[BaseModel], section: _Section, name: str, values: dict[str, Any] | None = None) -> Any:
    values = section.values if values is None else values
    try:
        return model.model_validate(values)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = str(err["loc"][0]) if err["loc"] else None
        line = section.lines.get(key, section.header_line) if key else section.header_line
        raise ConfigError(f"[{name}] {key or 'section'}: {err['msg']}", line=line, key=key) from exc


def _resolve(path: str, base_dir: Path, section: _Section, key: str) -> str:
    resolved = Path(path) if Path(path).is_absolute() else base_dir / path
    if not resolved.is_file():
        raise ConfigError(f"file not found: {resolved}", line=section.lines.get(key), key=key)
    return str(resolved)


def parse_config(text: str, base_dir: str | Path = ".", strict: bool = True) -> ExperimentConfig:
    """Parse and validate an experiment config; every error names its line."""
    base = Path(base_dir)
    sections = parse_sections(text, strict=strict)
    empty = _Section()

    exp = sections.get("experiment")
    if exp is None or "kind" not in exp.values:
        raise ConfigError("missing required key 'kind' in [experiment]", key="kind")
    try:
        kind = ExperimentKind(exp.values["kind"].lower())
    except ValueError as exc:
        raise ConfigError(
            f"unknown experiment kind {exp.values['kind']!r}", line=exp.lines["kind"], key="kind"
        ) from exc

    for required in ("field", "contour"):
        if required not in sections:
            raise ConfigError(f"missing required section [{required}]", key=required)
    if kind in (ExperimentKind.CERTIFY, ExperimentKind.CAPTURE) and "region" not in sections:
        raise ConfigError(f"kind={kind.value} requires a [region] section", key="region")

    fsec = sections["field"]
    field_spec = image_spec = None
    if fsec.values.get("kind", "quadratic").lower() == "image":
        values = {k: v for k, v in fsec.values.items() if k != "kind"}
        if "path" not in values:
            raise ConfigError("[field] kind=image needs 'path'", line=fsec.header_line, key="path")
        stray = sorted(set(values) - IMAGE_KEYS)
        if stray:
            raise ConfigError(f"[field] key '{stray[0]}' does not apply to images", line=fsec.lines[stray[0]])
        values["path"] = _resolve(values["path"], base, fsec, "path")
        image_spec = _build(ImageSpec, fsec, "field", values)
    else:
        stray = sorted(set(fsec.values) & (IMAGE_KEYS - {"spacing"}))
        if stray or "spacing" in fsec.values:
            key = stray[0] if stray else "spacing"
            raise ConfigError(f"[field] key '{key}' only applies to kind=image", line=fsec.lines[key], key=key)
        field_spec = _build(FieldSpec, fsec, "field")

    csec = sections["contour"]
    cvalues = {k: v for k, v in csec.values.items() if k != "velocity"}
    if cvalues.get("source", "").lower() == ContourSource.CSV.value and "path" in cvalues:
        cvalues["path"] = _resolve(cvalues["path"], base, csec, "path")
    contour_spec = _build(ContourSpec, csec, "contour", cvalues)

    psec = sections.get("params", empty)
    params = _build(SnakeParams, psec, "params")
    stop = _build(StopSpec, sections.get("stop", empty), "stop")
    capture = _build(CaptureSpec, sections.get("capture", empty), "capture")
    modal = _build(ModalSpec, sections.get("modal", empty), "modal")

    region_spec = None
    if "region" in sections:
        rsec = sections["region"]
        region_values = {k: v for k, v in rsec.values.items() if k not in ("grid_step", "n_segments")}
        region = _build(Region, rsec, "region", region_values)
        extras = {k: v for k, v in rsec.values.items() if k in ("grid_step", "n_segments")}
        region_spec = _build(RegionSpec, rsec, "region", {"region": region, **extras})

    osec = sections.get("output", empty)
    top = {
        "kind": kind,
        "field": field_spec,
        "image": image_spec,
        "contour": contour_spec,
        "params": params,
        "region": region_spec,
        "stop": stop,
        "capture": capture,
        "modal": modal,
    }
    if "velocity" in csec.values:
        top["velocity"] = csec.values["velocity"]
    if "dir" in osec.values:
        top["out_dir"] = osec.values["dir"]
    if "render" in osec.values:
        top["render"] = osec.values["render"]
    try:
        return ExperimentConfig.model_validate(top)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = str(err["loc"][0]) if err["loc"] else None
        line = (csec.lines if key == "velocity" else osec.lines).get({"out_dir": "dir"}.get(key, key))
        raise ConfigError(f"{key}: {err['msg']}", line=line, key=key) from exc


def load_config(path: str | Path, strict: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not valid UTF-8") from exc
    return parse_config(text, base_dir=path.parent, strict=strict)


def build_field(config: ExperimentConfig) -> ScalarField:
    if config.image is not None:
        image = load_pgm(Path(config.image.path).read_bytes(), config.image.spacing, config.image.origin)
        return edge_potential(image, config.image.sigma) if config.image.edge else image
    return build_synthetic(config.field)


def build_contour(spec: ContourSpec) -> Contour:
    if spec.source == ContourSource.CSV:
        return read_contour_csv(spec.path)
    if spec.source == ContourSource.LINE:
        return line(spec.start, spec.end, spec.count)
    return circle(spec.center, spec.radius, spec.count)


def _initial_velocity(config: ExperimentConfig, contour: Contour) -> np.ndarray:
    vx, vy = config.velocity
    n = contour.n_free
    return np.concatenate([np.full(n, vx), np.full(n, vy)])


def _render(field_: ScalarField, contours: list[Contour], labels: list[str], out: Path) -> None:
    render_overlay(field_, contours, out / "overlay.svg", labels=labels)
    if field_.is_grid:
        write_pgm(field_, out / "field.pgm")
    else:
        xmin, ymin, xmax, ymax = bounds = view_bounds(field_, contours)
        spacing = max(xmax - xmin, ymax - ymin) / RENDER_SPACING_CELLS
        write_pgm(rasterize(field_, bounds, spacing), out / "field.pgm")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")
    logger.info("wrote %s", path)


def _run_evolve(config: ExperimentConfig, field_: ScalarField, contour0: Contour, out: Path) -> int:
    result = evolve(contour0, _initial_velocity(config, contour0), field_, config.params, stop=config.stop)
    result.trace.to_csv(out / "trace.csv")
    write_contour_csv(result.contour, out / "final_contour.csv")
    stiffness = build_matrices(len(contour0), contour0.topology, config.params)
    met = result.stop_reason == STOP_CRITERION
    _write_text(
        out / "evolve_report.txt",
        f"criterion={'met' if met else 'unmet'}\n"
        f"stop_reason={result.stop_reason}\n"
        f"iterations={len(result.trace) - 1}\n"
        f"final_H={result.trace.last.H!r}\n"
        f"equilibrium_residual={equilibrium_residual(result.contour, field_, stiffness)!r}\n",
    )
    if config.render:
        _render(field_, [contour0, result.contour], ["initial", "final"], out)
    return EXIT_OK if met else EXIT_FAILED


def _run_certify(config: ExperimentConfig, field_: ScalarField, contour0: Contour, out: Path) -> int:
    rs = config.region
    report = certify(field_, rs.region, config.params.omega1, config.params.omega2, rs.grid_step, rs.n_segments)
    with open(out / "convexity_report.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CONVEXITY_CSV_COLUMNS)
        writer.writerow(report.to_csv_row())
    _write_text(out / "convexity_report.txt", report.to_text())
    if config.render:
        _render(field_, [contour0], ["contour"], out)
    return EXIT_OK if report.holds else EXIT_FAILED


def _run_modal(config: ExperimentConfig, field_: ScalarField, contour0: Contour, out: Path) -> int:
    params = config.params
    contour = contour0
    if config.modal.relax:
        contour = evolve(contour0, None, field_, params, stop=config.stop).contour
    stiffness = build_matrices(len(contour), contour.topology, params)
    spectrum = modal_spectrum(hessian_Ep(contour, field_, stiffness), stiffness.M0, params.mu, params.gamma)
    classification = classify_equilibrium(spectrum, config.modal.tolerance)
    spectrum.to_csv(out / "modes.csv")
    regimes = damping_regimes(spectrum)
    stable = classification.label.is_stable
    _write_text(
        out / "classification.txt",
        classification.to_text()
        + f"holds={'true' if stable else 'false'}\n"
        + f"equilibrium_residual={equilibrium_residual(contour, field_, stiffness)!r}\n"
        + "".join(f"{name}_modes={regimes.count(name)}\n" for name in sorted(set(regimes)))
        + spectrum.summary(),
    )
    if config.render:
        _render(field_, [contour], ["analysed"], out)
    return EXIT_OK if stable else EXIT_FAILED


def _run_capture(config: ExperimentConfig, field_: ScalarField, contour0: Contour, out: Path) -> int:
    params, rs = config.params, config.region
    stiffness = build_matrices(len(contour0), contour0.topology, params)
    convexity = certify(field_, rs.region, params.omega1, params.omega2, rs.grid_step, rs.n_segments)
    v0 = _initial_velocity(config, contour0)
    report = capture_certificate(field_, stiffness, params, rs.region, contour0, v0, convexity=convexity)
    text = report.to_text()
    contours, labels = [contour0], ["initial"]
    if config.capture.verify:
        check = verify_capture(field_, stiffness, params, rs.region, contour0, v0, max_iter=config.capture.max_iter)
        check.trace.to_csv(out / "capture_trace.csv")
        text += f"never_exited={'true' if check.never_exited else 'false'}\n"
        text += f"exit_iteration={check.exit_iteration if check.exit_iteration is not None else 'none'}\n"
        if report.holds and convexity.holds and not check.never_exited:
            logger.warning("certified capture run left the region at iteration %s", check.exit_iteration)
        contours.append(check.contour)
        labels.append("final")
    _write_text(out / "capture_report.txt", text)
    if config.render:
        _render(field_, contours, labels, out)
    return EXIT_OK if report.holds else EXIT_FAILED


RUNNERS = {
    ExperimentKind.EVOLVE: _run_evolve,
    ExperimentKind.CERTIFY: _run_certify,
    ExperimentKind.MODAL: _run_modal,
    ExperimentKind.CAPTURE: _run_capture,
}


def run(config: ExperimentConfig, out_dir: str | Path | None = None, render: bool | None = None) -> int:
    """Run one experiment and write its artefacts; returns 0 on success, 2 on a failed certificate or criterion."""
    if render is not None:
        config = config.model_copy(update={"render": render})
    out = Path(out_dir or config.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    field_ = build_field(config)
    contour0 = build_contour(config.contour)
    logger.info("running %s experiment into %s", config.kind.value, out)
    status = RUNNERS[config.kind](config, field_, contour0, out)
    logger.info("%s experiment finished with status %d", config.kind.value, status)
    return status

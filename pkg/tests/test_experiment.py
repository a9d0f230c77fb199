"""Tests for config parsing and the experiment runners."""

import csv
import os
import sys
import textwrap

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dynsnake.errors import ConfigError
from dynsnake.experiment import (
    EXIT_FAILED,
    EXIT_OK,
    ExperimentKind,
    build_contour,
    build_field,
    load_config,
    parse_config,
    parse_sections,
    run,
)
from dynsnake.models import ContourSource, FieldKind, RegionShape

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")

MINIMAL = """\
[experiment]
kind = evolve

[field]
kind = quadratic
k = 1

[contour]
source = circle
radius = 2
count = 8
"""


def _cfg(text):
    return parse_config(textwrap.dedent(text))


def _read(path):
    with open(path, encoding="utf-8") as f:
        return f.read()


def _report(path):
    return dict(line.split("=", 1) for line in _read(path).splitlines())


class TestParseSections:
    def test_records_line_numbers(self):
        sections = parse_sections(MINIMAL)
        assert sections["field"].values == {"kind": "quadratic", "k": "1"}
        assert sections["field"].lines["k"] == 6
        assert sections["contour"].header_line == 8

    def test_tuple_values_are_split(self):
        sections = parse_sections("[field]\ncenter = 1.5 , -2\n")
        assert sections["field"].values["center"] == ["1.5", "-2"]

    def test_strips_comments(self):
        sections = parse_sections("# header\n[field]\nk = 2  # stiffness\n")
        assert sections["field"].values["k"] == "2"

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="line 2: unknown section"):
            parse_sections("\n[plot]\n")

    def test_key_outside_section(self):
        with pytest.raises(ConfigError, match="line 1: key outside"):
            parse_sections("k = 1\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 2: expected 'key = value'"):
            parse_sections("[field]\nk 1\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="line 3: duplicate key 'k'.*line 2") as exc_info:
            parse_sections("[field]\nk = 1\nk = 2\n")
        assert exc_info.value.line == 3

    def test_duplicate_section(self):
        with pytest.raises(ConfigError, match="line 3: duplicate section"):
            parse_sections("[field]\nk = 1\n[field]\n")

    def test_unknown_key_strict(self):
        with pytest.raises(ConfigError, match="line 2: unknown key 'colour'"):
            parse_sections("[field]\ncolour = red\n")

    def test_unknown_key_lenient(self, caplog):
        sections = parse_sections("[field]\ncolour = red\nk = 1\n", strict=False)
        assert sections["field"].values == {"k": "1"}
        assert "colour" in caplog.text

    def test_empty_value(self):
        with pytest.raises(ConfigError, match="line 2: empty value"):
            parse_sections("[field]\nk =\n")


class TestParseConfig:
    def test_minimal(self):
        config = parse_config(MINIMAL)
        assert config.kind == ExperimentKind.EVOLVE
        assert config.field.kind == FieldKind.QUADRATIC
        assert config.field.k == 1.0
        assert config.contour.source == ContourSource.CIRCLE
        assert config.region is None
        assert config.velocity == (0.0, 0.0)

    def test_tuples_and_velocity(self):
        config = parse_config(
            MINIMAL.replace("radius = 2", "radius = 2\ncenter = 1, -1\nvelocity = 0.5, 0")
        )
        assert config.contour.center == (1.0, -1.0)
        assert config.velocity == (0.5, 0.0)

    def test_missing_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            parse_config(MINIMAL.replace("kind = evolve", ""))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="line 2: unknown experiment kind"):
            parse_config(MINIMAL.replace("kind = evolve", "kind = animate"))

    def test_missing_contour(self):
        with pytest.raises(ConfigError, match=r"\[contour\]"):
            parse_config(MINIMAL.split("[contour]")[0])

    def test_certify_requires_region(self):
        with pytest.raises(ConfigError, match="requires a \\[region\\]"):
            parse_config(MINIMAL.replace("kind = evolve", "kind = certify"))

    def test_validation_error_names_line(self):
        text = MINIMAL + "\n[params]\ntau = -1\n"
        with pytest.raises(ConfigError, match="line 14: \\[params\\] tau") as exc_info:
            parse_config(text)
        assert exc_info.value.key == "tau"

    def test_spacing_only_for_images(self):
        with pytest.raises(ConfigError, match="only applies to kind=image"):
            parse_config(MINIMAL.replace("k = 1", "k = 1\nspacing = 2"))

    def test_image_needs_path(self):
        with pytest.raises(ConfigError, match="needs 'path'"):
            parse_config(MINIMAL.replace("kind = quadratic\nk = 1", "kind = image"))

    def test_image_file_must_exist(self, tmp_path):
        text = MINIMAL.replace("kind = quadratic\nk = 1", "kind = image\npath = missing.pgm")
        with pytest.raises(ConfigError, match="file not found"):
            parse_config(text, base_dir=tmp_path)

    def test_region(self):
        text = MINIMAL.replace("kind = evolve", "kind = certify") + textwrap.dedent(
            """
            [region]
            shape = annulus
            center = 0, 0
            inner_radius = 1
            radius = 3
            grid_step = 0.1
            """
        )
        config = parse_config(text)
        assert config.region.region.shape == RegionShape.ANNULUS
        assert config.region.grid_step == 0.1

    def test_region_validation(self):
        text = MINIMAL.replace("kind = evolve", "kind = certify") + "[region]\nshape = disk\nradius = -1\n"
        with pytest.raises(ConfigError, match="\\[region\\]"):
            parse_config(text)

    def test_output_section(self):
        config = parse_config(MINIMAL + "[output]\ndir = results\nrender = true\n")
        assert config.out_dir == "results"
        assert config.render is True

    def test_csv_contour_path_is_relative_to_config(self, tmp_path):
        (tmp_path / "snake.csv").write_text("index,x,y,fixed\n0,0,0,1\n1,1,1,0\n2,2,0,1\n", encoding="utf-8")
        text = MINIMAL.replace("source = circle\nradius = 2\ncount = 8", "source = csv\npath = snake.csv")
        config = parse_config(text, base_dir=tmp_path)
        contour = build_contour(config.contour)
        assert len(contour) == 3

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "nope.cfg")


class TestShippedConfigs:
    @pytest.mark.parametrize("name", ["evolve_bowl", "certify_inverted_bowl", "modal_bowl", "capture_bowl"])
    def test_parses(self, name):
        config = load_config(os.path.join(CONFIG_DIR, f"{name}.cfg"))
        assert config.kind.value == name.split("_")[0]

    def test_evolve(self, tmp_path):
        status = run(load_config(os.path.join(CONFIG_DIR, "evolve_bowl.cfg")), out_dir=tmp_path)
        assert status == EXIT_OK
        report = _report(tmp_path / "evolve_report.txt")
        assert report["criterion"] == "met"
        assert report["stop_reason"] == "criterion"
        assert float(report["equilibrium_residual"]) < 1e-4
        assert (tmp_path / "trace.csv").exists()
        assert _read(tmp_path / "final_contour.csv").startswith("index,x,y,fixed\n")

    def test_certify_fails_without_elasticity(self, tmp_path):
        status = run(load_config(os.path.join(CONFIG_DIR, "certify_inverted_bowl.cfg")), out_dir=tmp_path)
        assert status == EXIT_FAILED
        report = _report(tmp_path / "convexity_report.txt")
        assert report["holds"] == "false"
        assert float(report["A"]) == pytest.approx(-0.5)
        assert _read(tmp_path / "convexity_report.csv").count("\n") == 2

    def test_modal(self, tmp_path):
        status = run(load_config(os.path.join(CONFIG_DIR, "modal_bowl.cfg")), out_dir=tmp_path)
        assert status == EXIT_OK
        report = _report(tmp_path / "classification.txt")
        assert report["label"] == "stable-focus"
        assert report["stable"] == "true"
        assert report["holds"] == "true"
        assert _read(tmp_path / "modes.csv").count("\n") == 15

    def test_capture(self, tmp_path):
        status = run(load_config(os.path.join(CONFIG_DIR, "capture_bowl.cfg")), out_dir=tmp_path)
        assert status == EXIT_OK
        report = _report(tmp_path / "capture_report.txt")
        assert report["holds"] == "true"
        assert float(report["H0"]) == pytest.approx(1.0)
        assert float(report["boundary_min"]) == pytest.approx(2.0)
        assert report["never_exited"] == "true"
        assert report["exit_iteration"] == "none"
        assert (tmp_path / "capture_trace.csv").exists()

    @pytest.mark.parametrize("name", ["evolve_bowl", "certify_inverted_bowl", "modal_bowl"])
    def test_outputs_are_byte_identical_across_runs(self, name, tmp_path):
        config = load_config(os.path.join(CONFIG_DIR, f"{name}.cfg"))
        first = run(config, out_dir=tmp_path / "a")
        second = run(config, out_dir=tmp_path / "b")
        assert first == second
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        assert any(n.endswith(".csv") for n in names)
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_evolve_trace_hamiltonian_decreases(self, tmp_path):
        run(load_config(os.path.join(CONFIG_DIR, "evolve_bowl.cfg")), out_dir=tmp_path)
        with open(tmp_path / "trace.csv", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        h = np.array([float(row["H"]) for row in rows])
        ep = np.array([float(row["E_p"]) for row in rows])
        assert len(h) > 3
        assert np.all(np.diff(h[2:]) <= 1e-8 * (1 + np.abs(h[3:])))
        assert np.all(ep <= h)

    def test_evolve_unmet_criterion_exits_2(self, tmp_path):
        text = _read(os.path.join(CONFIG_DIR, "evolve_bowl.cfg")).replace("max_iter = 5000", "max_iter = 5")
        status = run(parse_config(text), out_dir=tmp_path)
        assert status == EXIT_FAILED
        report = _report(tmp_path / "evolve_report.txt")
        assert report["criterion"] == "unmet"
        assert report["stop_reason"] == "max_iter"

    def test_capture_over_energetic_start_exits_2(self, tmp_path):
        text = _read(os.path.join(CONFIG_DIR, "capture_bowl.cfg")).replace("velocity = 1, 1", "velocity = 10, 10")
        status = run(parse_config(text), out_dir=tmp_path)
        assert status == EXIT_FAILED
        report = _report(tmp_path / "capture_report.txt")
        assert report["holds"] == "false"
        assert float(report["margin"]) < 0
        assert report["never_exited"] == "false"

    def test_render(self, tmp_path):
        run(load_config(os.path.join(CONFIG_DIR, "evolve_bowl.cfg")), out_dir=tmp_path, render=True)
        assert _read(tmp_path / "overlay.svg").startswith("<?xml")
        assert (tmp_path / "field.pgm").read_bytes().startswith(b"P5\n")


class TestImageExperiment:
    def _write_disk_image(self, path, size=40, radius=10):
        rows = []
        for j in range(size):
            rows.append(
                " ".join("255" if (i - size / 2) ** 2 + (j - size / 2) ** 2 <= radius**2 else "0" for i in range(size))
            )
        path.write_text(f"P2\n{size} {size}\n255\n" + "\n".join(rows) + "\n", encoding="ascii")

    def test_edge_field_from_image(self, tmp_path):
        self._write_disk_image(tmp_path / "disk.pgm")
        text = textwrap.dedent(
            """\
            [experiment]
            kind = evolve

            [field]
            kind = image
            path = disk.pgm
            sigma = 1.5

            [contour]
            source = circle
            center = 20, 20
            radius = 13
            count = 24

            [params]
            omega1 = 0.01
            gamma = 1
            tau = 0.1

            [stop]
            max_iter = 20
            """
        )
        config = parse_config(text, base_dir=tmp_path)
        field = build_field(config)
        assert field.is_grid
        assert field.width == 40
        status = run(config, out_dir=tmp_path / "out")
        assert status in (EXIT_OK, EXIT_FAILED)
        assert _report(tmp_path / "out" / "evolve_report.txt")["iterations"] in {str(i) for i in range(1, 21)}

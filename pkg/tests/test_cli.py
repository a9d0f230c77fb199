"""Tests for the snake command-line entry point."""

import os
import sys
from unittest import mock

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dynsnake.cli import build_parser, main

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def _config(name):
    return os.path.join(CONFIG_DIR, name)


class TestBuildParser:
    def test_defaults(self):
        args = build_parser().parse_args(["run.cfg"])
        assert args.config == "run.cfg"
        assert args.out is None
        assert args.render is None
        assert args.strict is True

    def test_flags(self):
        args = build_parser().parse_args(["run.cfg", "-o", "res", "--render", "--no-strict", "--log-level", "info"])
        assert args.out == "res"
        assert args.render is True
        assert args.strict is False
        assert args.log_level == "info"

    def test_requires_config(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestMain:
    def test_evolve_succeeds(self, tmp_path):
        assert main([_config("evolve_bowl.cfg"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "evolve_report.txt").exists()

    def test_failed_certificate_exits_2(self, tmp_path):
        assert main([_config("certify_inverted_bowl.cfg"), "--out", str(tmp_path)]) == 2

    def test_out_dir_from_environment(self, tmp_path):
        with mock.patch.dict(os.environ, {"SNAKE_OUT_DIR": str(tmp_path / "env")}, clear=True):
            assert main([_config("capture_bowl.cfg")]) == 0
        assert (tmp_path / "env" / "capture_report.txt").exists()

    def test_missing_config(self, tmp_path, capsys):
        assert main([str(tmp_path / "missing.cfg")]) == 1
        assert capsys.readouterr().err.startswith("snake: error: cannot read config")

    def test_parse_error_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[experiment]\nkind = evolve\n[field]\nk = 1\nk = 2\n", encoding="utf-8")
        assert main([str(cfg), "--out", str(tmp_path / "out")]) == 1
        assert "line 5: duplicate key 'k'" in capsys.readouterr().err

    def test_strict_rejects_unknown_key(self, tmp_path):
        src = open(_config("evolve_bowl.cfg"), encoding="utf-8").read()
        cfg = tmp_path / "extra.cfg"
        cfg.write_text(src.replace("[params]", "[params]\nalpha = 3"), encoding="utf-8")
        assert main([str(cfg), "--out", str(tmp_path / "strict")]) == 1
        assert main([str(cfg), "--out", str(tmp_path / "lenient"), "--no-strict"]) == 0

    def test_bad_log_level(self, tmp_path, capsys):
        assert main([_config("evolve_bowl.cfg"), "--out", str(tmp_path), "--log-level", "chatty"]) == 1
        assert "unknown log level" in capsys.readouterr().err

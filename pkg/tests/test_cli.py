from __future__ import annotations

import logging
import math
from pathlib import Path

import pytest

from vexp.cli import ExperimentConfig, build_parser, main, parse_config, read_config_file
from vexp.errors import InvalidInputError
from vexp.serializers import GridFunctionSerializer

ONES = "1 1 4 0 1\n1\n1\n1\n1\n1\n"


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    directory = tmp_path / "corpus"
    assert main(["corpus", "--output", str(directory)]) == 0
    return directory


@pytest.fixture
def ones(tmp_path: Path) -> Path:
    path = tmp_path / "ones.grid"
    path.write_text(ONES)
    return path


def step_args(corpus: Path) -> list[str]:
    return [
        "--input",
        str(corpus / "step1d.grid"),
        "--jumps",
        str(corpus / "step1d.jumps"),
        "--exponent",
        str(corpus / "step1d.exponent"),
    ]


class TestParseConfig:
    def test_defaults(self):
        config = parse_config(["energy"])
        assert config == ExperimentConfig(command="energy")
        assert config.fidelity == 10.0
        assert config.seed == 42

    def test_aliases(self):
        config = parse_config(["denoise", "--lambda", "2.5", "--iters", "30", "-vv"])
        assert config.fidelity == 2.5
        assert config.iterations == 30
        assert config.verbosity == 2

    def test_extent_and_deltas(self):
        config = parse_config(["relax", "--extent=0,2", "--deltas", "0.1,0.2"])
        assert config.extent == (0.0, 2.0)
        assert config.deltas == (0.1, 0.2)

    def test_config_file_is_overridden_by_flags(self, tmp_path: Path):
        path = tmp_path / "run.cfg"
        path.write_text("# defaults\nexponent = constant:2\nmode = modular\nlambda = 4\n\n")
        config = parse_config(["norm", "--config", str(path), "--associate"])
        assert config.exponent == "constant:2"
        assert config.mode == "associate"
        assert config.fidelity == 4.0

    @pytest.mark.parametrize("text", ["bogus = 1\n", "resolution\n", "resolution = many\n"])
    def test_bad_config_file(self, tmp_path: Path, text: str):
        path = tmp_path / "run.cfg"
        path.write_text(text)
        with pytest.raises(InvalidInputError, match="run.cfg:1"):
            read_config_file(path)

    @pytest.mark.parametrize(
        "argv",
        [[], ["bogus"], ["norm", "--modular", "--norm"], ["energy", "--dim", "3"]],
    )
    def test_usage_errors(self, argv: list[str]):
        with pytest.raises(InvalidInputError):
            build_parser().parse_args(argv)


class TestMain:
    def test_corpus_lists_fixtures(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        assert main(["corpus", "--output", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "fixture"
        assert "step1d.grid" in out
        assert (tmp_path / "out" / "noisy_step.exponent").exists()

    def test_corpus_that_does_not_read_back(
        self,
        tmp_path: Path,
        monkeypatch: pytest.MonkeyPatch,
        caplog: pytest.LogCaptureFixture,
    ):
        monkeypatch.setattr("vexp.cli.verify_corpus", lambda store: ["ramp2d"])
        with caplog.at_level(logging.ERROR):
            assert main(["corpus", "--output", str(tmp_path / "out")]) == 1
        assert "do not read back: ramp2d" in caplog.text

    def test_energy_of_step(self, corpus: Path, capsys: pytest.CaptureFixture[str]):
        capsys.readouterr()
        assert main(["energy", *step_args(corpus)]) == 0
        captured = capsys.readouterr()
        assert captured.out == "bulk,singular,total\n0,2,2\n"
        assert "F=2" in captured.err

    def test_output_file(self, corpus: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]):
        target = tmp_path / "energy.csv"
        capsys.readouterr()
        assert main(["energy", *step_args(corpus), "--output", str(target)]) == 0
        assert capsys.readouterr().out == ""
        assert target.read_text() == "bulk,singular,total\n0,2,2\n"

    def test_deterministic(self, corpus: Path, capsys: pytest.CaptureFixture[str]):
        capsys.readouterr()
        main(["relax", *step_args(corpus), "--deltas", "0.25,0.125"])
        first = capsys.readouterr().out
        main(["relax", *step_args(corpus), "--deltas", "0.25,0.125"])
        assert capsys.readouterr().out == first

    def test_relax_sorts_deltas(self, corpus: Path, capsys: pytest.CaptureFixture[str]):
        capsys.readouterr()
        assert main(["relax", *step_args(corpus), "--deltas", "0.0625,0.25,0.125"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "delta,energy_bulkzone,energy_Yzone,omega,corrected,lower,upper,gap"
        assert [line.split(",")[0] for line in lines[1:]] == ["0.25", "0.125", "0.0625", "0"]
        assert all(line.split(",")[5] == "2" for line in lines[1:])

    def test_jump_outside_y(self, corpus: Path, caplog: pytest.LogCaptureFixture):
        argv = ["energy", "--input", str(corpus / "step1d.grid")]
        argv += ["--jumps", str(corpus / "step1d.jumps"), "--exponent", "constant:2"]
        with caplog.at_level(logging.ERROR):
            assert main(argv) == 1
        assert "outside the set" in caplog.text

    def test_malformed_grid(self, tmp_path: Path, caplog: pytest.LogCaptureFixture):
        path = tmp_path / "bad.grid"
        path.write_text("1 1 4 0 1\n0\nx\n0\n0\n0\n")
        with caplog.at_level(logging.ERROR):
            assert main(["norm", "--input", str(path), "--exponent", "constant:2"]) == 1
        assert "line 3:" in caplog.text

    def test_missing_input(self, caplog: pytest.LogCaptureFixture):
        with caplog.at_level(logging.ERROR):
            assert main(["energy", "--exponent", "constant:1"]) == 1
        assert "needs --input" in caplog.text

    def test_unreadable_file(self, tmp_path: Path):
        argv = ["energy", "--input", str(tmp_path / "missing.grid"), "--exponent", "constant:1"]
        assert main(argv) == 1

    def test_usage_error(self):
        assert main(["bogus"]) == 1

    @pytest.mark.parametrize(
        "flag, expected", [("--modular", 0.5), ("--norm", 1 / math.sqrt(2))]
    )
    def test_norm(
        self, ones: Path, flag: str, expected: float, capsys: pytest.CaptureFixture[str]
    ):
        assert main(["norm", "--input", str(ones), "--exponent", "constant:2", flag]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(expected, rel=1e-9)

    def test_norm_from_config(
        self, ones: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ):
        path = tmp_path / "run.cfg"
        path.write_text(f"input = {ones}\nexponent = constant:2\nmode = modular\n")
        assert main(["norm", "--config", str(path)]) == 0
        assert capsys.readouterr().out == "0.5\n"

    def test_check_exponent(self, capsys: pytest.CaptureFixture[str]):
        assert main(["check-exponent", "--exponent", "constant:2", "--resolution", "64"]) == 0
        header, row = capsys.readouterr().out.splitlines()
        assert header == (
            "C_logHolder,omega(0.5),omega(0.25),omega(0.125),omega(0.0625),"
            "omega(0.03125),ballConstant"
        )
        assert row == "0,0,0,0,0,0,1"

    def test_check_phi(self, capsys: pytest.CaptureFixture[str]):
        argv = ["check-phi", "--exponent", "ramp:1.5,2.5", "--resolution", "16"]
        assert main(argv) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "condition,pass,beta_or_L,witness_x,witness_t"
        assert [line.split(",")[0] for line in lines[1:]] == ["A0", "A1", "aInc", "aDec"]

    def test_denoise(self, corpus: Path, tmp_path: Path):
        out, trace = tmp_path / "clean.grid", tmp_path / "trace.csv"
        argv = ["denoise", "--input", str(corpus / "noisy_step.grid")]
        argv += ["--exponent", str(corpus / "noisy_step.exponent"), "--iters", "5"]
        argv += ["--output", str(out), "--trace", str(trace)]
        assert main(argv) == 2
        solution = GridFunctionSerializer().deserialize(out.read_text())
        assert solution.domain.cells == (256,)
        lines = trace.read_text().splitlines()
        assert lines[0] == "iteration,energy"
        assert len(lines) == 1 + 6
        energies = [float(line.split(",")[1]) for line in lines[1:]]
        assert energies == sorted(energies, reverse=True)

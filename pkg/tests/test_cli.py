import csv
import subprocess
import sys

import numpy as np
import pytest

from bcgc.cli import (
    InvalidValueError,
    MissingParameterError,
    Solutions,
    UnknownParameterError,
    emit_solution_csv,
    emit_sweep_csv,
    main,
    parse_config,
    read_config_file,
)
from bcgc.runtime import BlockAllocation, RuntimeEstimate
from bcgc.simulator import SweepRow

BASE = ["--workers", "6", "--model-size", "120", "--mu", "1e-3", "--t0", "50", "--iters", "500", "--draws", "500"]


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestParseConfig:
    def test_full_scale_setup(self):
        spec = parse_config(
            "solve --workers 20 --model-size 20000 --mu 1e-3 --t0 50 --samples-m 50 --cycles-b 1 --seed 7".split()
        )
        assert spec.command == "solve"
        assert (spec.cfg.n_workers, spec.cfg.model_size, spec.cfg.n_samples) == (20, 20000, 50)
        assert spec.cfg.cycles_per_coordinate == 1
        assert (spec.dist.mu, spec.dist.t0, spec.seed) == (1e-3, 50.0, 7)

    def test_mu_must_be_positive(self):
        with pytest.raises(InvalidValueError, match="mu must be > 0"):
            parse_config("solve --workers 2 --model-size 4 --mu 0 --t0 50".split())

    def test_flag_overrides_file(self, tmp_path):
        cfg = tmp_path / "exp.conf"
        cfg.write_text("# experiment\nworkers = 10\nmodel-size = 100\nmu = 0.001\nt0 = 50\n")
        spec = parse_config(["solve", "--config", str(cfg), "--workers", "20"])
        assert spec.cfg.n_workers == 20
        assert parse_config(["solve", "--config", str(cfg)]).cfg.n_workers == 10

    def test_file_errors_name_the_line(self, tmp_path):
        cfg = tmp_path / "bad.conf"
        cfg.write_text("workers = 4\n\nmodel-size = 10\nmu = fast\n")
        with pytest.raises(InvalidValueError, match=r"bad.conf:4: --mu"):
            parse_config(["solve", "--config", str(cfg), "--t0", "1"])
        cfg.write_text("workers = 4\nspeed = 3\n")
        with pytest.raises(UnknownParameterError, match=r"bad.conf:2: unknown key 'speed'"):
            read_config_file(str(cfg))
        cfg.write_text("workers 4\n")
        with pytest.raises(InvalidValueError, match=r"bad.conf:1"):
            read_config_file(str(cfg))
        cfg.write_text("workers = 4\nworkers = 5\n")
        with pytest.raises(InvalidValueError, match="duplicate"):
            read_config_file(str(cfg))

    def test_error_kinds_are_distinct(self):
        with pytest.raises(UnknownParameterError):
            parse_config(["solve", "--wrkers", "3"])
        with pytest.raises(MissingParameterError, match="--t0"):
            parse_config("solve --workers 2 --model-size 4 --mu 1".split())
        with pytest.raises(MissingParameterError):
            parse_config(["fly"])
        with pytest.raises(InvalidValueError):
            parse_config("solve --workers 2.5 --model-size 4 --mu 1 --t0 1".split())

    def test_scheme_validation(self):
        args = "sweep --workers 4 --model-size 10 --mu 1 --t0 1 --axis N --values 4,8".split()
        assert parse_config(args).schemes[0] == "subgradient"
        spec = parse_config(args + ["--scheme", "closed-t", "--scheme", "uniform:2"])
        assert spec.schemes == ["closed-t", "uniform:2"]
        with pytest.raises(InvalidValueError):
            parse_config(args + ["--scheme", "magic"])
        with pytest.raises(InvalidValueError, match="N > 4"):
            parse_config(args + ["--scheme", "uniform:4"])
        with pytest.raises(InvalidValueError, match="axis"):
            parse_config(args[:-4] + ["--axis", "L", "--values", "1"])

    def test_train_needs_divisible_samples(self):
        with pytest.raises(InvalidValueError, match="divisible"):
            parse_config("train --workers 3 --model-size 4 --samples-m 10 --mu 1 --t0 1".split())

    def test_closed_forms_need_shift(self):
        with pytest.raises(InvalidValueError, match="t0"):
            parse_config("solve --workers 3 --model-size 4 --mu 1 --t0 0".split())


class TestEmitters:
    def test_single_worker_solution(self, tmp_path):
        one = BlockAllocation([5], integer=True)
        out = tmp_path / "s.csv"
        emit_solution_csv(Solutions(one, one, one), str(out))
        assert out.read_bytes() == b"level,x_optimal,x_t,x_f\n0,5,5,5\n"

    def test_relaxed_solution_uses_twelve_digits(self, tmp_path):
        x = BlockAllocation([1 / 3, 2 / 3])
        out = tmp_path / "s.csv"
        emit_solution_csv(Solutions(x, x, x), str(out))
        assert _read(out)[1] == ["0", "0.333333333333", "0.333333333333", "0.333333333333"]

    def test_sweep_rows(self, tmp_path):
        est = RuntimeEstimate(1234.5, 6.25, 100)
        rows = [SweepRow("N", v, s, est) for v in (10, 20, 30) for s in ("a", "b", "c", "d")]
        out = tmp_path / "w.csv"
        emit_sweep_csv(rows, str(out))
        table = _read(out)
        assert table[0] == ["axis", "value", "scheme", "mean_runtime", "ci95_halfwidth", "n_draws"]
        assert len(table) == 13
        assert table[1] == ["N", "10", "a", "1234.5", "6.25", "100"]

    def test_unwritable_path(self, tmp_path, capsys):
        code = main(["solve", *BASE, "--output", str(tmp_path / "missing" / "x.csv")])
        assert code == 3
        assert "error[io]" in capsys.readouterr().err


class TestCommands:
    def test_solve(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["solve", *BASE, "--output", str(out)]) == 0
        table = np.array(_read(out)[1:], dtype=np.int64)
        assert table.shape == (6, 4)
        assert np.array_equal(table[:, 0], np.arange(6))
        assert np.all(table[:, 1:].sum(axis=0) == 120)

    def test_sweep(self, tmp_path):
        out = tmp_path / "w.csv"
        args = ["sweep", *BASE, "--axis", "mu", "--values", "1e-3,1e-2", "--output", str(out)]
        assert main(args) == 0
        table = _read(out)
        assert len(table) == 1 + 2 * 5
        assert all(float(r[3]) > 0 for r in table[1:])

    def test_train(self, tmp_path):
        out = tmp_path / "t.csv"
        args = ["train", *BASE[:4], "--model-size", "16", "--samples-m", "48", "--mu", "1e-3", "--t0", "50"]
        assert main(args + ["--train-iters", "5", "--output", str(out)]) == 0
        table = _read(out)
        assert table[0] == ["iteration", "loss_before", "loss_after", "runtime", "gradient_rel_error"]
        assert len(table) == 6
        assert all(float(r[4]) <= 1e-9 for r in table[1:])

    def test_validate(self, tmp_path):
        out = tmp_path / "v.csv"
        assert main(["validate", "--output", str(out)]) == 0
        table = _read(out)
        assert table[0] == ["check", "passed", "detail"]
        assert all(r[1] == "true" for r in table[1:])

    def test_config_errors_exit_nonzero(self, capsys):
        assert main(["solve", "--workers", "2", "--model-size", "4", "--mu", "-1", "--t0", "1"]) == 2
        assert capsys.readouterr().err.startswith("error[invalid-value]")
        assert main(["solve", "--wrkers", "2"]) == 2
        assert capsys.readouterr().err.startswith("error[unknown-parameter]")

    @pytest.mark.parametrize("command", ["solve", "sweep", "train"])
    def test_byte_identical_reruns(self, tmp_path, command):
        extra = {
            "solve": [],
            "sweep": ["--axis", "N", "--values", "4,6"],
            "train": ["--samples-m", "60", "--train-iters", "3"],
        }[command]
        paths = [tmp_path / f"{command}{i}.csv" for i in range(2)]
        for p in paths:
            assert main([command, *BASE, *extra, "--seed", "11", "--output", str(p)]) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert b"\r" not in paths[0].read_bytes()


def test_module_entry_point():
    res = subprocess.run(
        [sys.executable, "-m", "bcgc", "solve", "--workers", "1", "--model-size", "5", "--mu", "1", "--t0", "1"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert res.stdout == "level,x_optimal,x_t,x_f\n0,5,5,5\n"

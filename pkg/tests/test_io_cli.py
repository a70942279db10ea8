import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoforge.cli import main
from monoforge.config import RunConfig, parse_config, serialize_config
from monoforge.dumps import MAGIC, read_field, write_field


def test_dump_round_trip(tmp_path):
    vals = np.random.default_rng(0).standard_normal((6, 5, 4, 3))
    path = tmp_path / "f.f64"
    write_field(path, vals)
    back, dims = read_field(path)
    assert dims == (6, 5, 4, 3)
    assert np.array_equal(back, vals)
    with open(path, "rb") as fh:
        assert fh.read(8) == MAGIC


def test_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.f64"
    path.write_bytes(b"WRONGMAG" + b"\0" * 32)
    with pytest.raises(ValueError, match="magic"):
        read_field(path)


def test_config_round_trip_default():
    cfg = RunConfig.default()
    text = serialize_config(cfg)
    cfg2 = parse_config(text)
    assert serialize_config(cfg2) == text


@given(
    v=st.floats(-100, 100, allow_nan=False),
    hz=st.floats(1e-4, 1.0, allow_nan=False),
    nt=st.integers(2, 64),
)
@settings(max_examples=50, deadline=None)
def test_config_round_trip_values(v, hz, nt):
    cfg = RunConfig.default()
    cfg.background["v"] = v
    cfg.numerics["h_z"] = hz
    cfg.numerics["n_t"] = nt
    text = serialize_config(cfg)
    cfg2 = parse_config(text)
    assert cfg2.background["v"] == v
    assert cfg2.numerics["h_z"] == hz
    assert cfg2.numerics["n_t"] == nt
    assert serialize_config(cfg2) == text


def test_config_unknown_key_cites_line():
    text = "[background]\nv = 1.0\nbogus = 3\n"
    with pytest.raises(ValueError, match=r"line 3: unknown key 'bogus'"):
        parse_config(text)
    with pytest.raises(ValueError, match=r"line 1: unknown section"):
        parse_config("[nope]\n")


def test_config_points_parse():
    text = "[background]\ncentres = 1.0 -2.0 0.5; -1.0 2.0 5.783185307179586\n"
    cfg = parse_config(text)
    assert len(cfg.background["centres"]) == 2
    assert cfg.background["centres"][0].z == 1.0 - 2.0j


# ---------------------------------------------------------------------------
# CLI level


def run_cli(args):
    return main(args)


def test_cli_greens_check(tmp_path):
    code = run_cli(["greens-check", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "greens_check.csv")))
    assert all(set(r) >= {"module", "operation", "quantity", "value", "bound", "tol", "passed"} for r in rows)
    assert any(r["quantity"] == "a0" for r in rows)


def test_cli_determinism(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(["greens-check", "--out", str(out1), "--seed", "3"]) == 0
    assert run_cli(["greens-check", "--out", str(out2), "--seed", "3"]) == 0
    assert (out1 / "greens_check.csv").read_bytes() == (out2 / "greens_check.csv").read_bytes()


def test_cli_build_and_report(tmp_path):
    cfg = RunConfig.default()
    cfg.output["directory"] = str(tmp_path)
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text(serialize_config(cfg))
    assert run_cli(["build", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "higgs_norm.f64").exists()
    assert run_cli(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "summary.csv").exists()
    figs = list((tmp_path / "figures").glob("*.png"))
    assert figs, "report should render figures next to the CSV output"


def test_cli_report_nothing_to_aggregate(tmp_path):
    assert run_cli(["report", "--out", str(tmp_path)]) == 2


def test_cli_rejects_coincident_centres(tmp_path):
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text(
        "[background]\nv = 50.0\ncentres = 1.0 0.0 0.0; 1.0 0.0 0.0\n"
    )
    code = run_cli(["build", "--config", str(cfg_path), "--out", str(tmp_path)])
    assert code == 2


def test_cli_config_error_exit_code(tmp_path):
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text("[background]\nwhat = 1\n")
    assert run_cli(["build", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2


def test_cli_entry_point_installed():
    out = subprocess.run(
        [sys.executable, "-m", "monoforge.cli", "--help"], capture_output=True, text=True
    )
    assert out.returncode == 0
    assert "greens-check" in out.stdout

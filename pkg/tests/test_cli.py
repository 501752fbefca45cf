import json
import subprocess
import sys

import numpy as np
import pytest

from fbdkit import cli
from fbdkit.altmin import AltMinConfig
from fbdkit.fbd import fibd
from fbdkit.model import (ChannelSet, build_interferograms,
                          max_normalize_interferograms)
from fbdkit.seqcore import Sequence
from fbdkit.synth import ExperimentSpec, make_experiment

SMALL = ["--experiment", "I", "--nr", "4", "--tau", "16", "--T", "120"]


def test_channelset_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    cs = ChannelSet(rng.standard_normal((3, 17)) * 10.0 ** rng.integers(-30, 30, (3, 17)),
                    origin=-4)
    cli.write_channelset(tmp_path / "c.csv", cs)
    back = cli.read_channelset(tmp_path / "c.csv")
    assert back.origin == -4
    np.testing.assert_array_equal(back.data, cs.data)


def test_interferogram_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    gij = build_interferograms(ChannelSet(rng.standard_normal((3, 6))), 5)
    cli.write_interferograms(tmp_path / "g.csv", gij)
    back = cli.read_interferograms(tmp_path / "g.csv")
    assert (back.nr, back.maxlag) == (3, 5)
    np.testing.assert_array_equal(back.entries, gij.entries)


def test_sequence_round_trip(tmp_path):
    seq = Sequence(-2, [0.1, 1 / 3, -2e-300])
    cli.write_sequence(tmp_path / "s.csv", seq)
    back = cli.read_sequence(tmp_path / "s.csv")
    assert back.origin == -2
    np.testing.assert_array_equal(back.samples, seq.samples)


def test_malformed_files_are_io_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not a header\n1,2\n")
    with pytest.raises(OSError):
        cli.read_channelset(bad)
    with pytest.raises(OSError):
        cli.read_interferograms(bad)
    assert cli.run(["lsbd", "--input", str(bad), "--tau", "3", "--out", str(tmp_path)]) == 2


def test_synth_and_fibd_parity(tmp_path):
    assert cli.run(["synth", *SMALL, "--seed", "2", "--out", str(tmp_path / "s")]) == 0
    for name in ("g_true.csv", "gij_true.csv", "d.csv", "s_true.csv", "report.json"):
        assert (tmp_path / "s" / name).exists()
    d_path = tmp_path / "s" / "d.csv"
    assert cli.run(["fibd", "--input", str(d_path), "--tau", "16", "--alphas", "inf,0",
                    "--seed", "5", "--max-iters", "200", "--out", str(tmp_path / "f")]) == 0
    d = cli.read_channelset(d_path)
    dij = max_normalize_interferograms(build_interferograms(d, d.span - 1))
    _, gij, _ = fibd(dij, 16, (float("inf"), 0.0), AltMinConfig(seed=5, max_outer_iters=200), 5)
    got = cli.read_interferograms(tmp_path / "f" / "gij.csv")
    np.testing.assert_array_equal(got.entries, gij.entries)
    rep = json.loads((tmp_path / "f" / "report.json").read_text())
    assert rep["seed"] == 5 and rep["config"]["alphas"] == "inf,0"
    assert rep["stages"]["fibd"]["legs"] == ["inf", 0.0]


def test_synth_matches_library(tmp_path):
    cli.run(["synth", *SMALL, "--seed", "3", "--out", str(tmp_path)])
    ex = make_experiment(ExperimentSpec("I", nr=4, tau=16, T=120, seed=3))
    np.testing.assert_array_equal(cli.read_channelset(tmp_path / "d.csv").data, ex.data.data)


def test_pipeline_smoke(tmp_path):
    code = cli.run(["pipeline", *SMALL, "--seed", "1", "--out", str(tmp_path)])
    assert code == 0
    for name in ("ghat.csv", "shat.csv", "gij.csv", "report.json"):
        assert (tmp_path / name).exists()
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["stages"]) == {"fibd", "fpr", "lsbd"}
    assert -1.0 <= rep["recovery_score"]["g"] <= 1.0


def test_lsbd_lspr_fpr_commands(tmp_path):
    cli.run(["synth", *SMALL, "--out", str(tmp_path)])
    assert cli.run(["lsbd", "--input", str(tmp_path / "d.csv"), "--tau", "16",
                    "--max-iters", "20", "--out", str(tmp_path / "l")]) == 0
    assert (tmp_path / "l" / "shat.csv").exists()
    gij = str(tmp_path / "gij_true.csv")
    assert cli.run(["lspr", "--input", gij, "--max-iters", "20",
                    "--out", str(tmp_path / "p")]) == 0
    assert cli.run(["fpr", "--input", gij, "--front-channel", "0", "--betas", "inf,0",
                    "--out", str(tmp_path / "q")]) == 0
    rep = json.loads((tmp_path / "q" / "report.json").read_text())
    assert rep["front_channel"] == 0


def test_appendix_check_command(tmp_path, capsys):
    assert cli.run(["appendix-check", "--trials", "1000", "--seed", "7",
                    "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "holds" in out and "min(J_G - J_F)" in out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["min_gap"] >= 0 and rep["holds"]


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntrials = 12\nmax-len = 3\nseed = 4\n")
    assert cli.run(["appendix-check", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["trials"] == 12 and rep["seed"] == 4
    assert cli.run(["appendix-check", "--config", str(cfg), "--trials", "5",
                    "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["trials"] == 5


def test_config_boolean_and_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "b.cfg"
    cfg.write_text("psd-projection = yes\n")
    args = cli.parse_args(["synth", "--experiment", "I", "--config", str(cfg)])
    assert args.psd_projection is True
    cfg.write_text("nonsense = 1\n")
    assert cli.run(["appendix-check", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "error[usage]" in capsys.readouterr().err


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FBD_SEED", "9")
    cli.run(["appendix-check", "--trials", "3", "--out", str(tmp_path)])
    assert json.loads((tmp_path / "report.json").read_text())["seed"] == 9
    cli.run(["appendix-check", "--trials", "3", "--seed", "2", "--out", str(tmp_path)])
    assert json.loads((tmp_path / "report.json").read_text())["seed"] == 2
    monkeypatch.setenv("FBD_SEED", "x")
    assert cli.run(["appendix-check", "--trials", "3", "--out", str(tmp_path)]) == 1


def test_exit_codes(tmp_path, capsys):
    assert cli.run(["nonsense"]) == 1
    assert cli.run(["fibd", "--tau", "3"]) == 1
    assert cli.run(["lsbd", "--input", str(tmp_path / "missing.csv"), "--tau", "3",
                    "--out", str(tmp_path)]) == 2
    cli.run(["synth", *SMALL, "--out", str(tmp_path)])
    # tau longer than the record violates a precondition
    assert cli.run(["lsbd", "--input", str(tmp_path / "d.csv"), "--tau", "500",
                    "--out", str(tmp_path)]) == 3
    assert cli.run(["fibd", "--input", str(tmp_path / "d.csv"), "--tau", "16",
                    "--alphas", "0,inf", "--out", str(tmp_path)]) == 3
    assert cli.run(["pipeline", "--tau", "16", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    for cat in ("usage", "io", "validation"):
        assert f"fbd: error[{cat}]" in err


def test_solver_divergence_exit_code(tmp_path, monkeypatch, capsys):
    from fbdkit.altmin import SolverDivergence

    def boom(*a, **k):
        raise SolverDivergence("objective increased")
    monkeypatch.setitem(cli.COMMANDS, "appendix-check", boom)
    assert cli.run(["appendix-check", "--out", str(tmp_path)]) == 4
    assert "error[solver]" in capsys.readouterr().err


def test_help_documents_exit_codes():
    text = cli.build_parser().format_help()
    assert "exit codes" in text and "4  solver" in text


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fbdkit", "appendix-check", "--trials", "5",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "appendix-check" in proc.stdout

import csv

import numpy as np
import pytest

from mixforge import cli
from mixforge.mixing_harness import MIXING_COLUMNS


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = cli.load_config(str(p))
    assert cfg == cli.default_config()
    assert cfg["flow"]["viscosity"] == 0.5 and cfg["mixing"]["n_pairs"] == 256


def test_round_trip(tmp_path):
    cfg = cli.default_config()
    text = cli.emit_config(cfg)
    assert cli.parse_config(text) == cfg
    cfg["flow"]["viscosity"] = 0.1 + 0.2
    cfg["noise"]["kick_mode"] = True
    cfg["coupling"]["eps"] = 0.45
    assert cli.parse_config(cli.emit_config(cfg)) == cfg


def test_negative_viscosity_rejected():
    with pytest.raises(cli.ConfigError, match="positive"):
        cli.parse_config("[flow]\nviscosity = -1\n")


@pytest.mark.parametrize("text,line", [
    ("[flow]\nmodel = nse\nfoo = 1\n", 3),
    ("[nowhere]\n", 1),
    ("viscosity = 1\n", 1),
    ("[flow]\n\n# c\ngrid_size = abc\n", 4),
    ("[flow]\nviscosity 0.5\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_unknown_command_exit_1(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_flag_exit_1():
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--seed", "x"])
    assert exc.value.code == 1


def test_validation_exit_1(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[flow]\nviscosity = -1\n")
    assert cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def small_config(tmp_path, extra=""):
    p = tmp_path / "small.cfg"
    p.write_text("[simulate]\nsteps = 3\nradius = 1.0\n[run]\nverbosity = 0\n" + extra)
    return str(p)


def test_simulate_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg, "--seed", "5", "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--seed", "5", "--out", str(b)]) == 0
    names = sorted(f.name for f in a.iterdir())
    assert names == sorted(f.name for f in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    head, rows = read_csv(a / "field_003.csv")
    assert head == ["k1", "k2", "re", "im", "component"]
    head, rows = read_csv(a / "trajectory.csv")
    assert head == ["step", "norm_m", "norm_l2"] and len(rows) == 4


def test_simulate_cgl_field_schema(tmp_path):
    cfg = small_config(tmp_path, "[flow]\nmodel = cgl\n")
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    head, _ = read_csv(tmp_path / "o" / "field_001.csv")
    assert head == ["k1", "k2", "re", "im"]


def test_noise_sample_schema(tmp_path):
    cfg = small_config(tmp_path, "[noise]\npaths = 2\nlevels = 1\n")
    assert cli.main(["noise-sample", "--config", cfg, "--out", str(tmp_path)]) == 0
    head, rows = read_csv(tmp_path / "noise_path_001.csv")
    assert head == ["i", "level", "shift", "xi"] and len(rows) == 8 * 4
    assert all(abs(float(r[3])) <= 1 for r in rows)


def test_tangent_check_outputs(tmp_path):
    assert cli.main(["tangent-check", "--config", small_config(tmp_path), "--out", str(tmp_path)]) == 0
    head, rows = read_csv(tmp_path / "tangent.csv")
    assert head == ["row", "col", "value"] and rows
    head, rows = read_csv(tmp_path / "tangent_gram.csv")
    assert head == ["space", "index", "weight"]
    head, rows = read_csv(tmp_path / "fd_check.csv")
    ratios = np.array([float(r[3]) for r in rows if r[0] == "u"])
    assert ratios.max() / ratios.min() < 1.25
    head, rows = read_csv(tmp_path / "adjoint_pairing.csv")
    for _, a, b in rows:
        assert abs(float(a) - float(b)) <= 1e-8 * abs(float(a))


def test_calibrate_inverse_schema(tmp_path):
    assert cli.main(["calibrate-inverse", "--config", small_config(tmp_path), "--out", str(tmp_path)]) == 0
    head, rows = read_csv(tmp_path / "calibration.csv")
    assert head == ["r", "M", "max_defect_ratio", "operator_norm_estimate"]
    assert min(float(r[2]) for r in rows) <= 0.5


def test_calibrate_inverse_infeasible_exit_2(tmp_path):
    cfg = small_config(tmp_path, "[coupling]\neps = 0.001\n")
    assert cli.main(["calibrate-inverse", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_mixing_run_non_mixing_exit_2(tmp_path, monkeypatch):
    from mixforge.mixing_harness import fit_decay_rate

    class FakeReport:
        fit = fit_decay_rate(np.ones(20))

    monkeypatch.setattr(cli, "engine_from_config", lambda cfg, seed: None)
    monkeypatch.setattr(cli, "_write_engine_summary", lambda rc, ce: None)
    monkeypatch.setattr(cli, "run_coupled_ensemble", lambda mc, ce, step_log=None: FakeReport())
    monkeypatch.setattr(cli, "write_mixing_report", lambda rep, out: None)
    assert cli.main(["mixing-run", "--config", small_config(tmp_path), "--out", str(tmp_path)]) == 2


def test_blowup_exit_2(tmp_path, monkeypatch):
    from mixforge.spectral_models import BlowUpError

    def boom(*a, **k):
        raise BlowUpError(3, 1e9, 1e3)

    monkeypatch.setattr(cli, "flow_map", boom)
    assert cli.main(["simulate", "--config", small_config(tmp_path), "--out", str(tmp_path)]) == 2


def test_threads_cap(monkeypatch):
    monkeypatch.setenv("MIXFORGE_THREADS", "2")
    cfg = cli.default_config()
    cfg["run"]["threads"] = 8
    assert cli._apply_threads(cfg) == 2
    monkeypatch.delenv("MIXFORGE_THREADS")
    assert cli._apply_threads(cfg) == 8


def test_stationary_command(tmp_path):
    cfg = small_config(tmp_path, "[stationary]\nR_star = 4.0\nn_traj = 8\nwindow = 4\n")
    assert cli.main(["stationary", "--config", cfg, "--out", str(tmp_path)]) == 0
    head, rows = read_csv(tmp_path / "stationary.csv")
    assert head == ["observable", "radius", "mean", "lo", "hi", "agree"]


@pytest.mark.slow
def test_couple_step_and_mixing_run(tmp_path):
    cfg = small_config(tmp_path, "[mixing]\nn_pairs = 8\nsteps = 10\nn_boot = 20\n[coupling]\nsteps = 3\n")
    assert cli.main(["couple-step", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    head, rows = read_csv(tmp_path / "c" / "coupling_steps.csv")
    assert head == list(cli.STEP_COLUMNS) and len(rows) == 3
    code = cli.main(["mixing-run", "--config", cfg, "--out", str(tmp_path / "m")])
    assert code in (0, 2)
    head, rows = read_csv(tmp_path / "m" / "mixing.csv")
    assert head == list(MIXING_COLUMNS) and len(rows) == 11
    head, rows = read_csv(tmp_path / "m" / "mixing_summary.csv")
    assert head == ["key", "value"]
    head, _ = read_csv(tmp_path / "m" / "engine_calibration.csv")
    assert head == ["key", "value"]


@pytest.mark.slow
def test_verify_all_defaults(tmp_path):
    from mixforge.verification import CHECK_COLUMNS
    assert cli.main(["verify-all", "--out", str(tmp_path), "--verbosity", "0"]) == 0
    head, rows = read_csv(tmp_path / "verify_summary.csv")
    assert head == list(CHECK_COLUMNS)
    assert {int(r[0]) for r in rows} == set(range(1, 11))
    assert all(r[4] == "1" for r in rows)


def test_kick_mode(tmp_path):
    cfg = small_config(tmp_path, "[noise]\nkick_mode = true\n")
    assert cli.main(["noise-sample", "--config", cfg, "--out", str(tmp_path / "n")]) == 0
    head, rows = read_csv(tmp_path / "n" / "kick_000.csv")
    assert head == ["k1", "k2", "re", "im", "component"] and rows
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    _, rows = read_csv(tmp_path / "s" / "trajectory.csv")
    assert float(rows[-1][1]) > 0

import json
import subprocess
import sys

import numpy as np
import pytest

from nlsblowup import cli
from nlsblowup import io as nio
from nlsblowup.errors import ContinuationStalled
from nlsblowup.numerics import build_grid
from nlsblowup.profile import ContinuationEntry, ContinuationRecord, ProblemParams, ProfileSolution

from test_analysis import power_law_trace

SOLVE_3D = ["profile", "solve", "--d", "3", "--sigma", "1", "--a0", "0.917", "--q00", "1.885"]


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture(scope="module")
def profile_file(tmp_path_factory, cubic3d):
    path = tmp_path_factory.mktemp("prof") / "q3.csv"
    nio.write_profile(path, cubic3d)
    return path


def usage_exit(argv):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    return info.value.code


# --- flags and config ------------------------------------------------------------


def test_missing_sigma_is_usage_error(capsys):
    assert usage_exit(["profile", "solve", "--d", "3", "--a0", "1", "--q00", "1"]) == 2
    assert "--sigma" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    SOLVE_3D[:-1] + ["-1"],
    ["simulate", "--d", "3", "--sigma", "1", "--init", "gaussian:5", "--bc", "mirror"],
    ["frobnicate"],
    ["profile", "diagnose", "--profile", "x", "--k-list", "1,a"],
])
def test_bad_flags(argv):
    assert usage_exit(argv) == 2


def test_config_file_layering(in_tmp):
    (in_tmp / "run.cfg").write_text("# 3d cubic\nd = 3\nsigma = 1\na0 = 0.917\nq00 = 1.885\n"
                                    "out = from_config.csv\n")
    assert cli.main(["profile", "solve", "--config", "run.cfg", "--out", "from_flag.csv"]) == 0
    assert (in_tmp / "from_flag.csv").exists() and not (in_tmp / "from_config.csv").exists()
    args = cli.parse_args(["profile", "solve", "--config", "run.cfg", "--q00", "2"])
    assert args.q00 == 2.0 and args.a0 == 0.917 and args.d == 3.0


def test_config_unknown_key(in_tmp):
    (in_tmp / "bad.cfg").write_text("colour = blue\n")
    assert usage_exit(["profile", "solve", "--config", "bad.cfg"]) == 2


def test_config_option_names_accepted(in_tmp):
    (in_tmp / "c.cfg").write_text("from = q.csv\ntarget-d = 4\n")
    args = cli.parse_args(["profile", "continue", "--config", "c.cfg"])
    assert args.from_file == "q.csv" and args.target_d == 4.0


# --- profile commands ------------------------------------------------------------------


def test_profile_solve_writes_file_and_manifest(in_tmp, capsys):
    assert cli.main(SOLVE_3D + ["--out", "q.csv"]) == 0
    sol = nio.read_profile(in_tmp / "q.csv")
    assert sol.a == pytest.approx(0.9173561446, abs=1e-6)
    header = nio.read_table(in_tmp / "q.csv")[0]
    assert header["manifest"] == "q.csv.manifest.json" and header["n_maxima"] == 1
    manifest = json.loads((in_tmp / "q.csv.manifest.json").read_text())
    assert manifest["command"] == "profile solve" and manifest["outputs"] == ["q.csv"]
    assert manifest["parameters"]["a0"] == 0.917 and manifest["duration_s"] > 0
    out = capsys.readouterr().out
    assert "oscillating = false" in out and "n_maxima = 1" in out


def test_profile_solve_is_deterministic(in_tmp):
    cli.main(SOLVE_3D + ["--out", "a.csv"])
    cli.main(SOLVE_3D + ["--out", "b.csv"])
    a = (in_tmp / "a.csv").read_text().replace("a.csv.manifest", "")
    b = (in_tmp / "b.csv").read_text().replace("b.csv.manifest", "")
    assert a == b


def test_profile_solve_trivial_and_no_convergence(in_tmp):
    assert cli.main(SOLVE_3D[:-2] + ["--q00", "0.01"]) == 4
    assert cli.main(["profile", "solve", "--d", "3", "--sigma", "1", "--a0", "5",
                     "--q00", "10"]) == 3


def test_profile_solve_subcritical(in_tmp):
    assert cli.main(["profile", "solve", "--d", "2", "--sigma", "1", "--a0", "1",
                     "--q00", "1"]) == 2


def test_continue_zero_length(in_tmp, profile_file):
    assert cli.main(["profile", "continue", "--from", str(profile_file), "--out-dir", "c"]) == 0
    header, cols, rows, _ = nio.read_table(in_tmp / "c" / "continuation.csv")
    assert cols == ["d", "sigma", "a", "Q0", "iterations", "converged"]
    assert len(rows) == 1 and float(rows[0][2]) == nio.read_profile(profile_file).a


def test_continue_short_path(in_tmp, profile_file):
    assert cli.main(["profile", "continue", "--from", str(profile_file), "--target-d", "3.2",
                     "--out-dir", "c"]) == 0
    _, _, rows, _ = nio.read_table(in_tmp / "c" / "continuation.csv")
    a = [float(r[2]) for r in rows]
    assert len(rows) == 3 and a[0] < a[1] < a[2]
    assert nio.read_profile(in_tmp / "c" / "profile_d3.2_s1.csv").params.d == pytest.approx(3.2)


def test_continue_stalled_keeps_partial_output(in_tmp, profile_file, monkeypatch, cubic3d):
    record = ContinuationRecord([ContinuationEntry(cubic3d.params, cubic3d.a, cubic3d.q0, True, 0),
                                 ContinuationEntry(ProblemParams(3.1, 1), np.nan, np.nan, False, 9)],
                                [], [cubic3d])

    def stall(*args, **kwargs):
        raise ContinuationStalled("stalled", record)

    monkeypatch.setattr(cli.profile, "continue_in_parameter", stall)
    code = cli.main(["profile", "continue", "--from", str(profile_file), "--target-d", "4",
                     "--out-dir", "c"])
    assert code == 3
    header, _, rows, _ = nio.read_table(in_tmp / "c" / "continuation.csv")
    assert len(rows) == 2 and header["status"].startswith("stalled")


def test_diagnose_zero_profile(in_tmp, capsys):
    g = build_grid(65, 50.0)
    zero = ProfileSolution(ProblemParams(3, 2), g, np.zeros(65), np.zeros(65), 1.0, 0.0)
    nio.write_profile(in_tmp / "zero.csv", zero)
    assert cli.main(["profile", "diagnose", "--profile", "zero.csv", "--k-list", "10,50",
                     "--out", "d.csv"]) == 0
    header, _, _, blocks = nio.read_table(in_tmp / "d.csv")
    for key in ("volterra_residual", "c0_num", "c0_pred", "c0_abs_err"):
        assert header[key] == 0
    assert header["oscillating"] is False
    assert all(float(x) == 0 for row in blocks["identities"][1] for x in row[1:])
    assert all(float(row[1]) == 0 for row in blocks["hamiltonian"][1])


def test_diagnose_report_blocks(in_tmp, profile_file):
    assert cli.main(["profile", "diagnose", "--profile", str(profile_file), "--out", "d.csv"]) == 0
    header, _, _, blocks = nio.read_table(in_tmp / "d.csv")
    assert set(blocks) == {"phase_path", "hamiltonian", "identities"}
    assert "c0_num" not in header  # s_c = 1/2
    assert header["volterra_residual"] < 1e-8
    assert [float(r[0]) for r in blocks["identities"][1]] == [1, 5, 10, 50]


def test_diagnose_bad_file(in_tmp):
    (in_tmp / "junk.csv").write_text("hello\n")
    assert cli.main(["profile", "diagnose", "--profile", "junk.csv"]) == 7


# --- simulate and analyze ------------------------------------------------------------


def test_simulate_small_data_not_blowing_up(in_tmp):
    code = cli.main(["simulate", "--d", "3", "--sigma", "1", "--init", "gaussian:0.01",
                     "--out", "small.csv"])
    assert code == 6
    trace = nio.read_trace(in_tmp / "small.csv")
    assert trace.stopped_by == "defocusing" and trace.records
    assert (in_tmp / "small.csv.manifest.json").exists()


def test_simulate_tau_max_reached(in_tmp):
    code = cli.main(["simulate", "--d", "3", "--sigma", "1", "--init", "rational:6",
                     "--tau-max", "0.05", "--h", "0.2", "--L-D", "40", "--out", "t.csv"])
    assert code == 6
    assert nio.read_trace(in_tmp / "t.csv").stopped_by == "tau_max"


def test_simulate_profile_mismatch(in_tmp, profile_file):
    code = cli.main(["simulate", "--d", "4", "--sigma", "1", "--init", "gaussian:6",
                     "--profile", str(profile_file)])
    assert code == 2


def test_simulate_records_distance(in_tmp, profile_file):
    cli.main(["simulate", "--d", "3", "--sigma", "1", "--init", "gaussian:5", "--tau-max", "0.1",
              "--profile", str(profile_file), "--out", "t.csv"])
    dist = [r.dist_to_Q for r in nio.read_trace(in_tmp / "t.csv").records]
    assert dist and all(0 < x < 1 for x in dist)


def test_analyze_synthetic_exact_trace(in_tmp, profile_file):
    nio.write_trace(in_tmp / "exact.csv", power_law_trace(a=0.3))
    assert cli.main(["analyze", "--trace", "exact.csv", "--out", "an.csv"]) == 0
    header, _, _, blocks = nio.read_table(in_tmp / "an.csv")
    assert header["slope"] == pytest.approx(0.5, abs=1e-12)
    assert header["e_rel_median"] < 1e-12
    assert set(blocks) == {"rate", "a", "e_rel"}  # no profile: no distance, no compare_a
    assert "a_diff" not in header
    assert cli.main(["analyze", "--trace", "exact.csv", "--profile", str(profile_file),
                     "--out", "an2.csv"]) == 0
    header = nio.read_table(in_tmp / "an2.csv")[0]
    assert header["a_diff"] == pytest.approx(abs(0.3 - header["a_tilde"]))


def test_analyze_mismatch_and_format(in_tmp, profile_file):
    nio.write_trace(in_tmp / "exact4.csv", power_law_trace(d=4.0))
    assert cli.main(["analyze", "--trace", "exact4.csv", "--profile", str(profile_file)]) == 2
    (in_tmp / "junk.csv").write_text("# format = nlsblowup-trace\n")
    assert cli.main(["analyze", "--trace", "junk.csv"]) == 7


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "nlsblowup", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip().startswith("nlsblowup ")

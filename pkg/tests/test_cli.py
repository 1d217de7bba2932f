"""End-to-end tests for the command-line interface.

Most tests drive ``main(argv)`` in-process so exit codes, stdout/stderr and
written files can be inspected cheaply; one test goes through a real
subprocess to cover the ``python -m underdamp.cli`` entry point.
"""
import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from underdamp.cli import main
from underdamp.diagnostics import TrajectoryRecord, read_csv, write_csv

# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def test_run_writes_csv_and_summary(tmp_path, capsys):
    csv = tmp_path / "out.csv"
    rc = main(
        [
            "run",
            "--problem",
            "reference-quadratic",
            "--method",
            "nag",
            "--r",
            "2",
            "--iters",
            "50",
            "--out",
            str(csv),
        ]
    )
    assert rc == 0
    assert "wrote" in capsys.readouterr().out

    records = read_csv(csv)
    assert len(records) == 51  # k = 0 .. iters
    assert [rec.k_or_t for rec in records] == list(range(51))

    summary = json.loads(csv.with_suffix(".summary.json").read_text())
    for key in ("final_gap", "final_min_grad_sq", "K0_or_t0", "certificates"):
        assert key in summary
    assert summary["final_gap"] == records[-1].gap
    assert summary["final_min_grad_sq"] == records[-1].min_grad_sq
    assert summary["K0_or_t0"] == 3  # gamma = 1
    assert summary["certificates"] == []  # no --audit requested


def test_run_audit_writes_certificate(tmp_path):
    csv = tmp_path / "mono.csv"
    rc = main(
        ["run", "--r", "0.5", "--iters", "300", "--audit", "--out", str(csv)]
    )
    assert rc == 0
    report = json.loads(csv.with_suffix(".audit.json").read_text())
    assert set(report) == {
        "kind",
        "gamma",
        "s",
        "threshold",
        "max_violation",
        "certified",
        "bound_verified",
    }
    assert report["kind"] == "nag"
    assert report["gamma"] == pytest.approx(0.5)
    assert report["certified"] is True
    assert report["threshold"] == 3.0


def test_run_audit_critical_family(tmp_path):
    csv = tmp_path / "crit.csv"
    rc = main(["run", "--r", "-1", "--iters", "100", "--audit", "--out", str(csv)])
    assert rc == 0
    report = json.loads(csv.with_suffix(".audit.json").read_text())
    assert report["kind"] == "critical-nag"
    assert report["threshold"] == 0
    assert report["certified"] is True


def test_run_rejects_r_below_minus_one(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("UNDERDAMP_OUT_DIR", str(tmp_path))
    rc = main(["run", "--r", "-2", "--iters", "10"])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "-1" in err


def test_run_rejects_unknown_method(capsys):
    rc = main(["run", "--method", "bogus"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_run_zero_iterations_single_row(tmp_path):
    csv = tmp_path / "zero.csv"
    rc = main(["run", "--iters", "0", "--out", str(csv)])
    assert rc == 0
    records = read_csv(csv)
    assert len(records) == 1
    assert records[0].k_or_t == 0


def test_run_unknown_problem(capsys):
    rc = main(["run", "--problem", "mystery"])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "mystery" in err


def test_run_step_guard_and_override(tmp_path, capsys):
    csv = tmp_path / "big.csv"
    rc = main(["run", "--s", "26", "--iters", "5", "--out", str(csv)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "1/L" in err and "--allow-large-step" in err

    rc = main(
        ["run", "--s", "26", "--iters", "5", "--allow-large-step", "--out", str(csv)]
    )
    assert rc == 0
    summary = json.loads(csv.with_suffix(".summary.json").read_text())
    assert summary["large_step_override"] is True


def test_run_high_resolution_model(tmp_path):
    csv = tmp_path / "ode.csv"
    rc = main(
        [
            "run",
            "--method",
            "ode-high",
            "--r",
            "2",
            "--s",
            "0.01",
            "--t-end",
            "2.0",
            "--dt",
            "0.01",
            "--out",
            str(csv),
        ]
    )
    assert rc == 0
    records = read_csv(csv)
    ts = np.array([rec.k_or_t for rec in records])
    assert np.all(np.diff(ts) > 0)
    assert ts[-1] == pytest.approx(2.0)
    summary = json.loads(csv.with_suffix(".summary.json").read_text())
    assert summary["K0_or_t0"] > 3.0 * np.sqrt(0.01)  # past the time pole


def test_run_fista_on_lasso_file(tmp_path):
    rng = np.random.default_rng(11)
    A = rng.standard_normal((6, 4))
    problem_file = tmp_path / "lasso.json"
    problem_file.write_text(
        json.dumps({"A": A.tolist(), "b": (A @ [1.0, 0.0, -2.0, 0.0]).tolist(), "lambda": 0.5})
    )
    csv = tmp_path / "fista.csv"
    rc = main(
        [
            "run",
            "--problem",
            f"lasso:{problem_file}",
            "--method",
            "fista",
            "--r",
            "2",
            "--iters",
            "400",
            "--audit",
            "--out",
            str(csv),
        ]
    )
    assert rc == 0
    report = json.loads(csv.with_suffix(".audit.json").read_text())
    assert report["kind"] == "fista"
    assert report["certified"] is True
    records = read_csv(csv)
    assert records[-1].gap < records[0].gap


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def test_sweep_writes_runs_and_aggregate(tmp_path):
    rc = main(
        [
            "sweep",
            "--r-list",
            "-1",
            "0",
            "1",
            "2",
            "--iters",
            "200",
            "--checkpoints",
            "10",
            "100",
            "200",
            "--out",
            str(tmp_path),
        ]
    )
    assert rc == 0
    for r in ("-1", "0", "1", "2"):
        assert (tmp_path / f"sweep-nag-r{r}.csv").is_file()
    aggregate = json.loads((tmp_path / "sweep.json").read_text())
    assert sorted(aggregate["runs"]) == ["-1", "0", "1", "2"]
    entry = aggregate["runs"]["2"]
    assert set(entry["gap_at_k"]) == {"10", "100", "200"}
    assert set(entry["min_grad_sq_at_k"]) == {"10", "100", "200"}
    # aggregate values match the per-run CSV exactly
    records = {rec.k_or_t: rec for rec in read_csv(tmp_path / "sweep-nag-r2.csv")}
    assert entry["gap_at_k"]["100"] == records[100].gap


def test_sweep_dedups_duplicate_r(tmp_path, capsys):
    rc = main(
        ["sweep", "--r-list", "2", "2", "--iters", "20", "--out", str(tmp_path)]
    )
    assert rc == 0
    assert "duplicate" in capsys.readouterr().err
    aggregate = json.loads((tmp_path / "sweep.json").read_text())
    assert list(aggregate["runs"]) == ["2"]


def test_sweep_requires_r_list(capsys):
    rc = main(["sweep", "--iters", "20"])
    assert rc == 1
    assert "r list" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def test_audit_certifies_recorded_run(tmp_path):
    csv = tmp_path / "rec.csv"
    assert main(["run", "--r", "0.5", "--iters", "300", "--out", str(csv)]) == 0
    rc = main(["audit", "--input", str(csv), "--r", "0.5"])
    assert rc == 0
    report = json.loads(csv.with_suffix(".audit.json").read_text())
    assert len(report) == 7
    assert report["certified"] is True
    assert report["max_violation"] <= 1e-10


def test_audit_reruns_when_lyapunov_missing(tmp_path):
    csv = tmp_path / "rec.csv"
    assert main(["run", "--r", "0.5", "--iters", "300", "--out", str(csv)]) == 0
    stripped = [dataclasses.replace(rec, lyap=None) for rec in read_csv(csv)]
    bare = tmp_path / "bare.csv"
    write_csv(stripped, bare)
    rc = main(["audit", "--input", str(bare), "--r", "0.5"])
    assert rc == 0
    report = json.loads(bare.with_suffix(".audit.json").read_text())
    assert report["certified"] is True


def test_audit_flags_increasing_lyapunov(tmp_path):
    records = [
        TrajectoryRecord(
            k_or_t=k,
            gap=1.0 / (k + 1),
            grad_sq=1.0 / (k + 1),
            min_grad_sq=1.0 / (k + 1),
            lyap=float(k),
            norm_gap=0.0,
            norm_grad=0.0,
        )
        for k in range(60)
    ]
    csv = tmp_path / "bad.csv"
    write_csv(records, csv)
    rc = main(["audit", "--input", str(csv), "--r", "0.5"])
    assert rc == 2
    report = json.loads(csv.with_suffix(".audit.json").read_text())
    assert report["certified"] is False
    assert report["max_violation"] == pytest.approx(1.0)


def test_audit_requires_input(capsys):
    rc = main(["audit", "--r", "0.5"])
    assert rc == 1
    assert "--input" in capsys.readouterr().err


def test_audit_rejects_low_resolution_model(tmp_path, capsys):
    csv = tmp_path / "low.csv"
    assert (
        main(
            [
                "run",
                "--method",
                "ode-low",
                "--r",
                "2",
                "--s",
                "0.01",
                "--t-end",
                "1.0",
                "--dt",
                "0.01",
                "--out",
                str(csv),
            ]
        )
        == 0
    )
    rc = main(["audit", "--input", str(csv), "--method", "ode-low", "--r", "2"])
    assert rc == 1
    assert "low-resolution" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def test_compare_writes_trajectories_and_report(tmp_path):
    rc = main(
        [
            "compare",
            "--r",
            "-1",
            "--s",
            "0.1",
            "--k-max",
            "40",
            "--dt",
            "0.01",
            "--out",
            str(tmp_path),
        ]
    )
    assert rc == 0
    for name in (
        "nag.csv",
        "ode-low.csv",
        "ode-high.csv",
        "ode-low-aligned.csv",
        "ode-high-aligned.csv",
    ):
        assert (tmp_path / name).is_file(), name
    report = json.loads((tmp_path / "compare.json").read_text())
    assert report["sup_deviation_high"] < report["sup_deviation_low"]
    assert report["high_closer"] is True
    # aligned files live on the discrete index grid
    aligned = read_csv(tmp_path / "ode-high-aligned.csv")
    assert [rec.k_or_t for rec in aligned] == list(range(41))
    mins = [rec.min_grad_sq for rec in aligned]
    assert all(b <= a for a, b in zip(mins, mins[1:]))


def test_compare_rejects_nonpositive_k_max(capsys):
    rc = main(["compare", "--k-max", "0"])
    assert rc == 1
    assert "k_max" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def test_rates_certifies_recorded_run(tmp_path):
    csv = tmp_path / "run.csv"
    assert main(["run", "--r", "0.5", "--iters", "2000", "--out", str(csv)]) == 0
    rc = main(["rates", "--input", str(csv), "--r", "0.5"])
    assert rc == 0
    payload = json.loads(csv.with_suffix(".rates.json").read_text())
    assert payload["k0"] == 3
    assert payload["objective"]["passed"] is True
    assert payload["gradient_trend"]["passed"] is True
    assert payload["objective"]["worst_margin"] <= 0.0


def test_rates_failing_certificate_exits_two(tmp_path):
    # flat objective: the Lyapunov bound at the anchor cannot cover later gaps
    records = [
        TrajectoryRecord(
            k_or_t=k,
            gap=1.0,
            grad_sq=1.0,
            min_grad_sq=1.0,
            lyap=1.0 if k == 3 else None,
            norm_gap=0.0,
            norm_grad=0.0,
        )
        for k in range(401)
    ]
    csv = tmp_path / "flat.csv"
    write_csv(records, csv)
    rc = main(["rates", "--input", str(csv), "--r", "0.5"])
    assert rc == 2
    payload = json.loads(csv.with_suffix(".rates.json").read_text())
    assert payload["objective"]["passed"] is False


def test_rates_refuses_short_history(tmp_path, capsys):
    csv = tmp_path / "short.csv"
    assert main(["run", "--r", "0.5", "--iters", "100", "--out", str(csv)]) == 0
    rc = main(["rates", "--input", str(csv), "--r", "0.5"])
    assert rc == 1  # refusal is a usage problem, not a failed certificate
    assert "longer" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------


def test_config_file_supplies_defaults_flags_override(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"r": 1.0, "iters": 30}))
    csv = tmp_path / "cfg.csv"
    rc = main(["run", "--config", str(config), "--iters", "40", "--out", str(csv)])
    assert rc == 0
    summary = json.loads(csv.with_suffix(".summary.json").read_text())
    assert summary["r"] == 1.0  # from the file
    assert len(read_csv(csv)) == 41  # flag overrode the file


def test_unknown_config_key_errors(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"bogus": 1}))
    rc = main(["run", "--config", str(config)])
    assert rc == 1
    assert "bogus" in capsys.readouterr().err


def test_out_dir_environment_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("UNDERDAMP_OUT_DIR", str(tmp_path))
    rc = main(["run", "--iters", "10"])
    assert rc == 0
    assert (tmp_path / "run-nag-r2-s25.csv").is_file()
    assert (tmp_path / "run-nag-r2-s25.summary.json").is_file()


def test_csv_reruns_are_byte_identical(tmp_path):
    argv = ["run", "--r", "0.5", "--iters", "100"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_module_entrypoint(tmp_path):
    csv = tmp_path / "sub.csv"
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "underdamp.cli",
            "run",
            "--iters",
            "20",
            "--out",
            str(csv),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout
    assert len(read_csv(csv)) == 21

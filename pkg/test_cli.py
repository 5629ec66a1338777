import csv
import json
import os

import pytest

from cli import (EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, SEED_ENV, UsageError, cmd_anomaly, cmd_deblur_wavelet, main,
                 parse_solver_list)
from solvers import CSV_FIELDS, LAMBDA_FIELDS

SMALL_WAVELET = ["deblur-wavelet", "--size", "16", "--levels", "2", "--iters", "3"]
SMALL_DYNAMIC = ["dynamic-deblur", "--n-side", "8", "--n-frames", "3", "--iters", "2"]
SMALL_ANOMALY = ["anomaly", "--n-space", "16", "--n-time", "3", "--n-obs", "30", "--iters", "3"]


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def run_cli(tmp_path, args, out="out"):
    return main([*args, "--out", str(tmp_path / out), "--log-dir", str(tmp_path / "logs")])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def read_manifest(directory):
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as f:
        return json.load(f)


def test_parse_solver_list():
    assert parse_solver_list("flsqr-g, Hybrid_FLSQR_G1,flsqr-g,") == ["flsqr-g", "hybrid-flsqr-g"]
    with pytest.raises(UsageError):
        parse_solver_list(" , ")
    with pytest.raises(UsageError):
        parse_solver_list("hybrid-flsqr-g,nonsense")


def test_wavelet_run_writes_all_artifacts(tmp_path):
    solvers = ["flsqr-g", "hybrid-flsqr-g", "irw-flsqr-g"]
    assert run_cli(tmp_path, SMALL_WAVELET + ["--solvers", ",".join(solvers)]) == EXIT_OK
    out = tmp_path / "out"
    for name in solvers:
        errors = read_csv(out / f"errors_{name}.csv")
        assert errors[0] == CSV_FIELDS
        assert [row[0] for row in errors[1:]] == ["1", "2", "3"]
        assert read_csv(out / f"lambda_{name}.csv")[0] == LAMBDA_FIELDS
        assert (out / name / "recon.pgm").read_text().startswith("P2\n16 16\n255\n")
    assert (out / "x_true.pgm").exists() and (out / "b.pgm").exists()

    manifest = read_manifest(out)
    assert manifest["status"] == "success"
    assert manifest["command"] == "deblur-wavelet"
    assert manifest["seed"] == 0
    assert "errors_hybrid-flsqr-g.csv" in manifest["files"]
    assert "problem/metadata.json" in manifest["files"]
    for name in manifest["files"]:
        assert (out / name).exists(), name


def test_flsqr_rows_report_no_regularization(tmp_path):
    assert run_cli(tmp_path, SMALL_WAVELET + ["--solvers", "flsqr-g"]) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "lambda_flsqr-g.csv")[1:]
    assert all(float(lam) == 0.0 and float(alpha) == 0.0 for _, lam, alpha in rows)


def test_zero_iterations(tmp_path):
    args = ["deblur-wavelet", "--size", "16", "--iters", "0", "--solvers", "hybrid-flsqr-g"]
    assert run_cli(tmp_path, args) == EXIT_OK
    assert read_csv(tmp_path / "out" / "errors_hybrid-flsqr-g.csv") == [CSV_FIELDS]


@pytest.mark.parametrize("args", [
    SMALL_WAVELET + ["--strategy", "G3"],
    SMALL_WAVELET + ["--solvers", "hybrid-flsqr-q,no-such-solver"],
    SMALL_WAVELET + ["--size", "20", "--levels", "3"],
    SMALL_WAVELET + ["--eta", "0.5"],
    SMALL_WAVELET + ["--config", "missing.cfg"],
    SMALL_ANOMALY + ["--n-space", "15"],
    ["no-such-command"],
], ids=["strategy", "solver", "divisibility", "eta", "missing-config", "grid", "command"])
def test_usage_errors(tmp_path, args):
    assert run_cli(tmp_path, args) == EXIT_USAGE


def test_missing_image_is_an_io_failure(tmp_path):
    assert run_cli(tmp_path, SMALL_WAVELET + ["--image", str(tmp_path / "missing.pgm")]) == EXIT_RUNTIME


def test_custom_image(tmp_path):
    image = tmp_path / "square.pgm"
    pixels = [[200 if 2 <= r < 6 and 2 <= c < 6 else 0 for c in range(8)] for r in range(8)]
    image.write_text("P2\n8 8\n255\n" + "\n".join(" ".join(map(str, row)) for row in pixels) + "\n")
    assert run_cli(tmp_path, ["deblur-wavelet", "--image", str(image), "--levels", "2", "--iters", "2",
                              "--solvers", "hybrid-flsqr-g"]) == EXIT_OK
    assert (tmp_path / "out" / "hybrid-flsqr-g" / "recon.pgm").read_text().startswith("P2\n8 8\n")


def csv_bytes(directory):
    return {name: (directory / name).read_bytes() for name in sorted(os.listdir(directory)) if name.endswith(".csv")}


def test_identical_runs_give_identical_csvs(tmp_path):
    args = SMALL_WAVELET + ["--solvers", "hybrid-flsqr-g,irw-flsqr-g", "--seed", "3"]
    assert run_cli(tmp_path, args, out="first") == EXIT_OK
    assert run_cli(tmp_path, args + ["--parallel"], out="second") == EXIT_OK
    first, second = csv_bytes(tmp_path / "first"), csv_bytes(tmp_path / "second")
    assert len(first) == 4
    assert first == second


def test_config_file_and_flag_precedence(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("# small run\nsize = 16\nlevels = 2\niters = 2\nsolvers = hybrid-flsqr-g  # one solver\n"
                      "snapshot-every = 1\n")
    assert run_cli(tmp_path, ["deblur-wavelet", "--config", str(config)], out="from-file") == EXIT_OK
    assert len(read_csv(tmp_path / "from-file" / "errors_hybrid-flsqr-g.csv")) == 3

    assert run_cli(tmp_path, ["deblur-wavelet", "--config", str(config), "--iters", "1"], out="flag") == EXIT_OK
    assert len(read_csv(tmp_path / "flag" / "errors_hybrid-flsqr-g.csv")) == 2
    assert read_manifest(tmp_path / "flag")["config"]["iters"] == 1


def test_unknown_config_key(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("sise = 16\n")
    assert run_cli(tmp_path, ["deblur-wavelet", "--config", str(config)]) == EXIT_USAGE


def test_manifest_config_reproduces_the_run(tmp_path):
    args = SMALL_WAVELET + ["--solvers", "hybrid-flsqr-g", "--seed", "11"]
    assert run_cli(tmp_path, args, out="first") == EXIT_OK
    manifest = tmp_path / "first" / "manifest.json"
    assert run_cli(tmp_path, ["deblur-wavelet", "--config", str(manifest)], out="second") == EXIT_OK
    assert csv_bytes(tmp_path / "first") == csv_bytes(tmp_path / "second")


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "5")
    assert run_cli(tmp_path, SMALL_WAVELET + ["--solvers", "hybrid-flsqr-g"]) == EXIT_OK
    assert read_manifest(tmp_path / "out")["seed"] == 5


def test_dynamic_run_writes_frames(tmp_path):
    args = SMALL_DYNAMIC + ["--solvers", "hybrid-flsqr-g,hybrid-flsqr-c,hybrid-fgmres-c"]
    assert run_cli(tmp_path, args) == EXIT_OK
    out = tmp_path / "out"
    for t in range(3):
        assert (out / "hybrid-flsqr-g" / f"recon_t{t}.pgm").exists()
        assert (out / f"x_true_t{t}.pgm").exists()
    solvers = read_manifest(out)["metadata"]["solvers"]
    assert solvers["hybrid-flsqr-c"]["tau_lambda"] == 1.2
    assert solvers["hybrid-fgmres-c"]["tau_lambda"] == 0.8


def test_tau_lambda_flag(tmp_path):
    assert run_cli(tmp_path, SMALL_DYNAMIC + ["--solvers", "hybrid-flsqr-c", "--tau-lambda", "2.5"]) == EXIT_OK
    assert read_manifest(tmp_path / "out")["metadata"]["solvers"]["hybrid-flsqr-c"]["tau_lambda"] == 2.5


def test_anomaly_run_writes_components(tmp_path):
    assert run_cli(tmp_path, SMALL_ANOMALY + ["--gamma", "2.0"]) == EXIT_OK
    out = tmp_path / "out"
    for name in ("hybrid-sd", "hybrid-sd-g"):
        for image in ("avg.pgm", "xi.pgm", "s.pgm"):
            assert (out / name / image).exists()
        for _, lam, alpha in read_csv(out / f"lambda_{name}.csv")[1:]:
            assert float(alpha) == pytest.approx(2.0 * float(lam), rel=1e-11)
    assert (out / "s_true_avg.pgm").exists()


def test_fgmres_on_saved_rectangular_problem(tmp_path):
    assert run_cli(tmp_path, SMALL_ANOMALY + ["--solvers", "hybrid-sd-g"], out="anomaly") == EXIT_OK
    saved = str(tmp_path / "anomaly" / "problem")
    args = ["dynamic-deblur", "--problem", saved, "--solvers", "hybrid-fgmres-g", "--iters", "2"]
    assert run_cli(tmp_path, args) == EXIT_USAGE
    args = ["dynamic-deblur", "--problem", saved, "--solvers", "hybrid-flsqr-g", "--iters", "2"]
    assert run_cli(tmp_path, args, out="reloaded") == EXIT_OK


def test_command_entry_points(tmp_path):
    common = ["--iters", "1", "--log-dir", str(tmp_path / "logs")]
    assert cmd_deblur_wavelet(["--size", "16", "--solvers", "hybrid-flsqr-g", "--out", str(tmp_path / "w"),
                               *common]) == EXIT_OK
    assert (tmp_path / "w" / "errors_hybrid-flsqr-g.csv").exists()
    assert cmd_anomaly(["--strategy", "G1", *common]) == EXIT_USAGE


def test_malformed_image_is_a_runtime_failure(tmp_path):
    image = tmp_path / "broken.pgm"
    image.write_text("P2\n4 4\n255\n1 2 3\n")
    assert run_cli(tmp_path, SMALL_WAVELET + ["--image", str(image)]) == EXIT_RUNTIME


def test_corrupt_saved_problem_is_a_runtime_failure(tmp_path):
    assert run_cli(tmp_path, SMALL_DYNAMIC + ["--solvers", "hybrid-flsqr-g"], out="first") == EXIT_OK
    saved = tmp_path / "first" / "problem"
    (saved / "b.txt").write_text("1.0\n2.0\n")
    args = ["dynamic-deblur", "--problem", str(saved), "--solvers", "hybrid-flsqr-g", "--iters", "1"]
    assert run_cli(tmp_path, args) == EXIT_RUNTIME


def test_gmres_family_on_wavelet_problem_warns(tmp_path, caplog):
    assert run_cli(tmp_path, SMALL_WAVELET + ["--solvers", "hybrid-flsqr-g"], out="lsqr") == EXIT_OK
    assert not [r for r in caplog.records if "GMRES family" in r.getMessage()]
    assert run_cli(tmp_path, SMALL_WAVELET + ["--solvers", "hybrid-fgmres-g"], out="gmres") == EXIT_OK
    warnings = [r for r in caplog.records if "GMRES family" in r.getMessage()]
    assert len(warnings) == 1 and warnings[0].levelname == "WARNING"

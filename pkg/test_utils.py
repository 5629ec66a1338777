import json
import logging
import math
import os
from datetime import datetime, timedelta

import numpy as np
import pytest

import csv_utils
import file_utils
import json_utils
import log_utils
import manifest_utils
from date_utils import DateUtils
from progress_utils import ProgressTracker, format_time


##############################
### FILES
##############################

def test_pgm_write_then_read(tmp_path):
    image = np.array([[0.0, 0.5, 1.0], [0.25, 0.75, 1.0]])
    path = file_utils.write_pgm(image, "img.pgm", str(tmp_path / "images"))
    assert path == str(tmp_path / "images" / "img.pgm")
    with open(path) as f:
        assert f.read().startswith("P2\n3 2\n255\n0 128 255\n")
    np.testing.assert_allclose(file_utils.read_pgm(path), image, atol=1.0 / 255)


def test_pgm_scaling_window(tmp_path):
    path = file_utils.write_pgm(np.array([[-1.0, 0.5, 2.0]]), "w.pgm", str(tmp_path), vmin=0.0, vmax=1.0)
    with open(path) as f:
        assert f.read().splitlines()[3] == "0 128 255"
    path = file_utils.write_pgm(np.full((2, 2), 3.0), "flat.pgm", str(tmp_path))
    np.testing.assert_array_equal(file_utils.read_pgm(path), 0.0)


def test_pgm_needs_a_2d_image(tmp_path):
    with pytest.raises(ValueError):
        file_utils.write_pgm(np.ones(4), "v.pgm", str(tmp_path))


def test_read_pgm_skips_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_text("P2\n# made by hand\n2 1\n10\n5 10 # end\n")
    np.testing.assert_allclose(file_utils.read_pgm(str(path)), [[0.5, 1.0]])


@pytest.mark.parametrize("text", ["P5\n1 1\n255\n0\n", "P2\n2 2\n255\n0 0 0\n", "P2\n1 1\n0\n0\n", "P2\nx 1\n9\n0\n"],
                         ids=["binary", "short", "maxval", "header"])
def test_read_pgm_rejects_malformed_files(tmp_path, text):
    path = tmp_path / "bad.pgm"
    path.write_text(text)
    with pytest.raises(ValueError):
        file_utils.read_pgm(str(path))


def test_sanitize_filename():
    assert file_utils.sanitize_filename('a/b:c*?.csv') == "a_b_c__.csv"
    assert file_utils.sanitize_filename("hybrid-flsqr-g") == "hybrid-flsqr-g"


def test_load_key_value_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# settings\n\nsnapshot-every = 5\nsolvers = a,b   # two\nimage =\n")
    assert file_utils.load_key_value_file(str(path)) == {"snapshot_every": "5", "solvers": "a,b", "image": ""}


@pytest.mark.parametrize("text", ["size 64\n", " = 3\n"], ids=["no-equals", "empty-key"])
def test_load_key_value_file_rejects_bad_lines(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ValueError):
        file_utils.load_key_value_file(str(path))


##############################
### CSV / JSON
##############################

@pytest.mark.parametrize("value, expected", [
    (None, ""),
    (True, "1"),
    (7, "7"),
    (0.5, "5.000000000000e-01"),
    (np.float64(-2.0), "-2.000000000000e+00"),
    (math.nan, ""),
    ("G1", "G1"),
])
def test_format_value(value, expected):
    assert csv_utils.format_value(value) == expected


def test_write_rows(tmp_path):
    path = str(tmp_path / "nested" / "rows.csv")
    rows = [{"k": 1, "lambda": 0.25, "extra": "ignored"}, {"k": 2, "lambda": None}]
    assert csv_utils.write_rows(path, ["k", "lambda", "alpha"], rows) == path
    with open(path, newline="") as f:
        assert f.read() == "k,lambda,alpha\n1,2.500000000000e-01,\n2,,\n"


def test_json_save_and_load(tmp_path):
    data = {"x": np.arange(3), "scale": np.float64(1.5), "path": tmp_path / "a"}
    path = json_utils.save_to_json_file(data, "data.json", str(tmp_path))
    assert json_utils.load_json_data(path) == {"x": [0, 1, 2], "scale": 1.5, "path": str(tmp_path / "a")}


def test_json_missing_file(tmp_path):
    missing = str(tmp_path / "sub" / "missing.json")
    assert json_utils.load_json_data(missing) == {}
    assert not os.path.exists(missing)


def test_json_invalid_file(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert json_utils.load_json_data(str(broken)) == {}


##############################
### MANIFEST
##############################

def test_manifest_success(tmp_path):
    out = str(tmp_path)
    context = manifest_utils.create_run_context("anomaly", {"iters": 3}, seed=4, metadata={"note": "x"})
    manifest_utils.add_output_file(context, out, os.path.join(out, "sub", "a.csv"))
    manifest = manifest_utils.finalize_run(context, out, total_items=1)
    assert manifest.status is manifest_utils.RunStatus.SUCCESS

    with open(tmp_path / "manifest.json") as f:
        data = json.load(f)
    assert data["status"] == "success"
    assert data["seed"] == 4
    assert data["config"] == {"iters": 3}
    assert data["files"] == sorted([os.path.join("sub", "a.csv"), "manifest.json", "manifest.txt"])
    assert data["duration_seconds"] >= 0.0
    report = (tmp_path / "manifest.txt").read_text()
    assert "Status: SUCCESS" in report
    assert "iters = 3" in report


def test_manifest_partial_and_failed(tmp_path):
    context = manifest_utils.create_run_context("deblur-wavelet", {})
    manifest_utils.add_partial_item(context, "flsqr-g", "breakdown at iteration 2")
    manifest = manifest_utils.finalize_run(context, str(tmp_path / "p"), total_items=2)
    assert manifest.status is manifest_utils.RunStatus.PARTIAL
    assert manifest.error_messages == ["flsqr-g: breakdown at iteration 2"]

    context = manifest_utils.create_run_context("deblur-wavelet", {})
    manifest_utils.add_failed_item(context, "a", "boom")
    assert manifest_utils.finalize_run(context, str(tmp_path / "f1"), 2).status is manifest_utils.RunStatus.PARTIAL
    manifest_utils.add_failed_item(context, "b", "boom")
    assert manifest_utils.finalize_run(context, str(tmp_path / "f2"), 2).status is manifest_utils.RunStatus.FAILED


@pytest.mark.parametrize("seconds, expected", [(5, "5s"), (65, "1m 5s"), (3725, "1h 2m 5s")])
def test_format_duration(seconds, expected):
    assert manifest_utils.format_duration(timedelta(seconds=seconds)) == expected


##############################
### PROGRESS / DATES / LOGGING
##############################

def test_progress_tracker_counts(caplog):
    caplog.set_level(logging.INFO)
    with ProgressTracker(total=4, description="Test") as progress:
        for _ in range(3):
            progress.increment()
        progress.update(failed=1)
    assert progress.stats.completed == 3 and progress.stats.failed == 1
    assert progress.stats.progress_ratio == pytest.approx(1.0)
    assert progress.stats.remaining == 0
    assert "(1 of 4 lost to failed runs)" in caplog.records[-1].getMessage()


def test_progress_with_nothing_to_do():
    progress = ProgressTracker(total=0)
    assert progress.stats.progress_ratio == 1.0
    assert progress.stats.eta is None


@pytest.mark.parametrize("td, expected", [(None, "N/A"), (timedelta(seconds=75), "01:15"),
                                          (timedelta(hours=2, seconds=3), "02:00:03")])
def test_format_time(td, expected):
    assert format_time(td) == expected


def test_day_offsets_from_numbers_and_dates():
    np.testing.assert_array_equal(DateUtils.day_offsets([3, 5, 10]), [0.0, 2.0, 7.0])
    np.testing.assert_allclose(DateUtils.day_offsets(["2024-02-28", "2024-03-01 12:00"]), [0.0, 2.5])
    assert DateUtils.day_offsets([]).size == 0


def test_date_range():
    dates = DateUtils.date_range("2024-12-31", 3)
    assert dates == [datetime(2024, 12, 31), datetime(2025, 1, 1), datetime(2025, 1, 2)]
    np.testing.assert_array_equal(DateUtils.day_offsets(dates), [0.0, 1.0, 2.0])


def test_to_datetime_rejects_unknown_types():
    with pytest.raises(ValueError):
        DateUtils.to_datetime([2024, 1, 1])


def test_setup_logging_replaces_its_handlers(tmp_path):
    root = logging.getLogger()
    try:
        log_utils.setup_logging("first", logging.DEBUG, str(tmp_path))
        first = list(log_utils._installed_handlers)
        log_utils.setup_logging("second", logging.INFO, str(tmp_path))
        assert len(log_utils._installed_handlers) == 2
        assert all(h in root.handlers for h in log_utils._installed_handlers)
        assert not any(h in root.handlers for h in first)
        names = sorted(os.listdir(tmp_path))
        assert len(names) == 2
        assert names[0].startswith("first_") and names[1].startswith("second_")
        assert root.level == logging.INFO
    finally:
        for handler in log_utils._installed_handlers:
            root.removeHandler(handler)
            handler.close()
        log_utils._installed_handlers.clear()

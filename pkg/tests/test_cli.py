import csv
import json
import shutil
import subprocess

import jsonschema
import numpy as np
import pytest

from mvldl.cli import load_schema, main
from mvldl.dataset import load_dataset
from mvldl.metrics import METRIC_NAMES

SMALL = ["--n", "30", "--views", "2", "--labels", "3"]
FAST = ["--folds", "3", "--fold-indices", "0"]


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("generate", *SMALL, "--seed", 3, "--out", root / "d") == 0
    return root / "d"


def test_generate_layout(tmp_path, capsys):
    assert run("generate", "--n", 200, "--views", 3, "--labels", 5, "--seed", 7, "--out", tmp_path / "d") == 0
    for v in range(3):
        assert (tmp_path / "d" / "views" / f"view_{v}.csv").exists()
    assert (tmp_path / "d" / "labels.csv").exists()
    assert "n=200 V=3 q=5" in capsys.readouterr().out
    ds = load_dataset(tmp_path / "d")
    assert (ds.n, ds.V, ds.q, ds.l) == (200, 3, 5, 200)


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("generate", *SMALL, "--seed", 9, "--labeled-ratio", 0.2, "--out", tmp_path / name) == 0
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_generated_mask_keeps_shadow_truth(tmp_path):
    run("generate", *SMALL, "--seed", 9, "--labeled-ratio", 0.2, "--out", tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    assert ds.l == 6 and ds.truth is not None
    assert np.all(ds.labels[ds.unlabeled] == 0)


@pytest.mark.parametrize("argv", [
    ["generate", "--views", "0"],
    ["generate", "--n", "3", "--labels", "4"],
    ["generate", "--noise", "-1"],
])
def test_generate_parameter_errors(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "d") == 2


def test_usage_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("generate", "--n", "many", "--out", tmp_path)
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("generate", *SMALL, "--out", blocker / "d") == 1


def test_missing_dataset(tmp_path):
    assert run("cv", "--data", tmp_path / "nope", "--out", tmp_path / "r.json") == 1


def test_train_then_predict(tmp_path, data):
    model = tmp_path / "m.json"
    assert run("train", "--data", data, "--labeled-ratio", 0.2, "--out", model, "--trace", tmp_path / "t.csv",
               "--dump-similarity", tmp_path / "s.csv") == 0
    jsonschema.validate(json.loads(model.read_text()), load_schema("model"))
    trace = read_csv(tmp_path / "t.csv")
    assert trace[0] == ["iteration", "step", "objective"] and trace[1][1] == "init"
    assert run("predict", "--model", model, "--data", data, "--out", tmp_path / "p.csv") == 0
    rows = read_csv(tmp_path / "p.csv")
    assert len(rows) == 31
    values = np.array(rows[1:], dtype=float)
    np.testing.assert_allclose(values.sum(axis=1), 1.0, atol=1e-12)
    assert values.min() >= 0
    # the same samples passed as per-view CSV files give the same rows
    views = sorted((data / "views").glob("view_*.csv"))
    assert run("predict", "--model", model, "--views", *views, "--out", tmp_path / "p2.csv") == 0
    assert (tmp_path / "p2.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_predict_dimension_mismatch(tmp_path, data):
    model = tmp_path / "m.json"
    run("train", "--data", data, "--labeled-ratio", 0.2, "--max-iter", 2, "--out", model)
    other = tmp_path / "other"
    run("generate", "--n", 30, "--views", 2, "--labels", 3, "--dims", "4,4", "--out", other)
    assert run("predict", "--model", model, "--data", other, "--out", tmp_path / "p.csv") == 1


def test_train_rejects_bad_hyperparameters(tmp_path, data):
    assert run("train", "--data", data, "--lambda", 0, "--out", tmp_path / "m.json") == 2
    assert run("train", "--data", data, "--k", 30, "--out", tmp_path / "m.json") == 2


def test_cv_report_and_determinism(tmp_path, data):
    args = ["cv", "--data", data, *FAST, "--seed", 3]
    assert run(*args, "--out", tmp_path / "a.json", "--csv", tmp_path / "a.csv") == 0
    assert run(*args, "--out", tmp_path / "b.json", "--csv", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    doc = json.loads((tmp_path / "a.json").read_text())
    jsonschema.validate(doc, load_schema("cv_report"))
    assert list(doc["metrics"]) == list(METRIC_NAMES)
    assert all({"mean", "std"} <= set(v) for v in doc["metrics"].values())
    assert len(read_csv(tmp_path / "a.csv")) == 2


def test_cv_parallel_matches_serial(tmp_path, data):
    base = ["cv", "--data", data, "--folds", 3, "--fold-indices", "0,1", "--max-iter", 3]
    run(*base, "--out", tmp_path / "a.json")
    run(*base, "--jobs", 2, "--out", tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_cv_fully_labeled(tmp_path, data):
    assert run("cv", "--data", data, *FAST, "--labeled-ratio", 1.0, "--out", tmp_path / "r.json") == 0


def test_cv_on_masked_dataset(tmp_path):
    run("generate", *SMALL, "--labeled-ratio", 0.5, "--out", tmp_path / "d")
    assert run("cv", "--data", tmp_path / "d", *FAST, "--max-iter", 2, "--out", tmp_path / "r.json") == 0


def test_sweep_row_counts(tmp_path, data):
    assert run("sweep", "--data", data, *FAST, "--max-iter", 3, "--ratios", "0.05,0.10,0.15,0.20,0.25",
               "--out", tmp_path / "r.csv", "--json", tmp_path / "r.json") == 0
    rows = read_csv(tmp_path / "r.csv")
    assert len(rows) == 1 + 5 and rows[0][0] == "labeled_ratio" and len(rows[0]) == 13
    jsonschema.validate(json.loads((tmp_path / "r.json").read_text()), load_schema("sweep_report"))
    assert run("sweep", "--data", data, *FAST, "--max-iter", 3, "--lambda-grid", "1e-3,1e-2,1e-1,1,1e1,1e2,1e3",
               "--out", tmp_path / "l.csv") == 0
    rows = read_csv(tmp_path / "l.csv")
    assert len(rows) == 1 + 7 and [float(r[0]) for r in rows[1:]] == [1e-3, 1e-2, 1e-1, 1, 1e1, 1e2, 1e3]


def test_ablate_variants(tmp_path, data):
    assert run("ablate", "--data", data, *FAST, "--variant", "bogus", "--out", tmp_path / "x.json") == 2
    assert run("ablate", "--data", data, *FAST, "--variant", "no-sigma", "--out", tmp_path / "s.json") == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["variant"] == "no-sigma" and doc["hyperparams"]["sigma"] == 0.0
    assert doc["hyperparams"]["gamma"] == 100.0
    run("ablate", "--data", data, *FAST, "--variant", "full", "--out", tmp_path / "f.json")
    run("cv", "--data", data, *FAST, "--out", tmp_path / "c.json")
    full, cv = json.loads((tmp_path / "f.json").read_text()), json.loads((tmp_path / "c.json").read_text())
    assert full["metrics"] == cv["metrics"] and full["per_fold"] == cv["per_fold"]


def test_console_script(tmp_path):
    exe = shutil.which("mvldl")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "generate", "--views", "0", "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 2 and "V must be at least 1" in out.stderr
    assert subprocess.run([exe, "--version"], capture_output=True, text=True).stdout.startswith("mvldl ")

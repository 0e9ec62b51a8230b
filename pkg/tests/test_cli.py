import json

import numpy as np
import pytest

from pearl.cli import main
from pearl.data import load_embeddings


def run_cli(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture()
def corpus_path(tmp_path):
    path = tmp_path / "corpus.pear"
    rc = run_cli(["synth", "--classes", "3", "--dim", "8", "--per-class", "30",
                  "--sigma", "0.4", "--gamma", "0.6", "--seed", "7",
                  "--out", str(path)])
    assert rc == 0
    return path


class TestSynth:
    def test_writes_valid_magic(self, corpus_path):
        assert corpus_path.read_bytes()[:4] == b"PEAR"
        ds = load_embeddings(corpus_path, "binary")
        assert (ds.n, ds.d, ds.C) == (90, 8, 3)

    def test_seed_repetition_is_byte_identical(self, tmp_path):
        args = ["synth", "--classes", "2", "--dim", "4", "--per-class", "5",
                "--seed", "3"]
        a, b = tmp_path / "a.pear", tmp_path / "b.pear"
        assert run_cli(args + ["--out", str(a)]) == 0
        assert run_cli(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_single_class_is_usage_error(self, tmp_path):
        rc = run_cli(["synth", "--classes", "1", "--out", str(tmp_path / "x.pear")])
        assert rc == 1

    def test_unwritable_path_is_data_error(self, tmp_path):
        rc = run_cli(["synth", "--out", str(tmp_path / "no" / "dir" / "x.pear")])
        assert rc == 2

    def test_unknown_flag_is_usage_error(self, tmp_path):
        rc = run_cli(["synth", "--bogus", "1", "--out", str(tmp_path / "x.pear")])
        assert rc == 1


class TestFit:
    def test_fit_writes_model_and_trace(self, corpus_path, tmp_path):
        model = tmp_path / "model.pear"
        rc = run_cli(["fit", "--data", str(corpus_path), "--budget", "30",
                      "--seed", "1", "--out-model", str(model),
                      "--max_epochs", "8", "--patience", "8"])
        assert rc == 0
        assert model.exists()
        lines = [json.loads(l) for l in
                 (tmp_path / "model.pear.trace.jsonl").read_text().splitlines()]
        tail = lines[-1]
        epochs = lines[:-1]
        vals = [e["val_total"] for e in epochs]
        assert epochs[tail["best_epoch"]]["val_total"] == min(vals)

    def test_budget_too_large_is_data_error(self, corpus_path, tmp_path):
        rc = run_cli(["fit", "--data", str(corpus_path), "--budget", "1000",
                      "--seed", "1", "--out-model", str(tmp_path / "m.pear")])
        assert rc == 2


class TestTransform:
    def test_preserves_header_shape(self, corpus_path, tmp_path):
        model = tmp_path / "model.pear"
        assert run_cli(["fit", "--data", str(corpus_path), "--budget", "30",
                        "--seed", "1", "--out-model", str(model),
                        "--max_epochs", "5", "--patience", "5"]) == 0
        out = tmp_path / "refined.pear"
        assert run_cli(["transform", "--data", str(corpus_path),
                        "--model", str(model), "--out", str(out)]) == 0
        src = load_embeddings(corpus_path, "binary")
        dst = load_embeddings(out, "binary")
        assert (dst.n, dst.d) == (src.n, src.d)
        assert np.array_equal(dst.labels, src.labels)

    def test_dimension_mismatch_is_data_error(self, corpus_path, tmp_path):
        model = tmp_path / "model.pear"
        assert run_cli(["fit", "--data", str(corpus_path), "--budget", "30",
                        "--seed", "1", "--out-model", str(model),
                        "--max_epochs", "3", "--patience", "3"]) == 0
        other = tmp_path / "other.pear"
        assert run_cli(["synth", "--classes", "2", "--dim", "5",
                        "--per-class", "4", "--out", str(other)]) == 0
        rc = run_cli(["transform", "--data", str(other), "--model", str(model),
                      "--out", str(tmp_path / "x.pear")])
        assert rc == 2


class TestEvaluate:
    def _evaluate(self, corpus_path, report, jobs="1"):
        return run_cli([
            "evaluate", "--data", str(corpus_path), "--folds", "2",
            "--budgets", "24", "--k", "1,3", "--methods", "raw,l2",
            "--base-seed", "4", "--jobs", jobs, "--quiet",
            "--report", str(report),
        ])

    def test_raw_l2_aggregates_match(self, corpus_path, tmp_path):
        report = tmp_path / "report.jsonl"
        assert self._evaluate(corpus_path, report) == 0
        rows = [json.loads(l) for l in report.read_text().splitlines()]
        agg = [r for r in rows if r.get("aggregate")]
        purity = {r["method"]: r["mean"] for r in agg
                  if r["metric"] == "purity" and r["k"] == 1}
        assert purity["raw"] == purity["l2"]

    def test_reruns_and_jobs_are_byte_identical(self, corpus_path, tmp_path):
        r1, r2, r3 = (tmp_path / f"r{i}.jsonl" for i in range(3))
        assert self._evaluate(corpus_path, r1) == 0
        assert self._evaluate(corpus_path, r2) == 0
        assert self._evaluate(corpus_path, r3, jobs="4") == 0
        assert r1.read_bytes() == r2.read_bytes() == r3.read_bytes()

    def test_unknown_method_is_usage_error(self, corpus_path, tmp_path):
        rc = run_cli(["evaluate", "--data", str(corpus_path),
                      "--methods", "raw,bogus",
                      "--report", str(tmp_path / "r.jsonl")])
        assert rc == 1

    def test_missing_data_is_data_error(self, tmp_path):
        rc = run_cli(["evaluate", "--data", str(tmp_path / "none.pear"),
                      "--report", str(tmp_path / "r.jsonl")])
        assert rc == 2

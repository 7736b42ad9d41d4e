import csv

import numpy as np
import pytest

from rosanna import cli
from rosanna.bench import evaluate
from rosanna.dataset import load_vectors, read_ground_truth
from rosanna.index import load_index


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def files(tmp_path):
    base, queries = tmp_path / "base.fvecs", tmp_path / "q.fvecs"
    assert run("gen", "--n", 2000, "--k", 8, "--out", base, "--seed", 1) == 0
    assert run("gen", "--n", 50, "--k", 8, "--out", queries, "--seed", 2) == 0
    return tmp_path, base, queries


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestCli:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            run("gen", "--bogus")
        assert info.value.code == 1

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as info:
            run()
        assert info.value.code == 1

    def test_missing_file_is_io_error(self, tmp_path):
        assert run("gt", "--base", tmp_path / "nope.fvecs", "--queries", tmp_path / "q.fvecs") == 2

    def test_corrupt_index_is_io_error(self, files):
        tmp, base, queries = files
        (tmp / "bad.idx").write_bytes(b"garbage")
        assert run("search", "--index", tmp / "bad.idx", "--base", base, "--queries", queries) == 2

    def test_bad_value_is_usage_error(self, files):
        tmp, base, _ = files
        assert run("build", "--base", base, "--g", 20, "--out", tmp / "x.idx") == 1

    def test_gt_search_check(self, files, capsys):
        tmp, base, queries = files
        gt_path, idx_path, out = tmp / "gt.csv", tmp / "i.idx", tmp / "res.csv"
        assert run("gt", "--base", base, "--queries", queries, "--out", gt_path) == 0
        assert run("build", "--base", base, "--g", 3, "--r", 4, "--out", idx_path) == 0
        capsys.readouterr()
        assert run("search", "--index", idx_path, "--base", base, "--queries", queries,
                   "--c", 2, "--check-gt", gt_path, "--out", out) == 0
        line = capsys.readouterr().out.strip().splitlines()
        assert line[0] == "recall_at_1,candidate_fraction"
        recall = float(line[1].split(",")[0])
        rows = _rows(out)
        assert len(rows) == 50
        index = load_index(idx_path, load_vectors(base))
        ref = evaluate(index, load_vectors(queries).data, read_ground_truth(gt_path), c=2, repeats=1)
        assert recall == pytest.approx(ref.recall_at_1)

    def test_grid_config_reproducible(self, files):
        tmp, base, queries = files
        cfg = tmp / "grid.cfg"
        cfg.write_text(f"base={base}\nqueries={queries}\ng-list=1,2\nr-list=1,2\nc-list=1,4\n"
                       "repeats=1\nseed=7\n")
        a, b = tmp / "a.csv", tmp / "b.csv"
        assert run("grid", "--config", cfg, "--out", a) == 0
        assert run("grid", "--config", cfg, "--out", b) == 0
        ra, rb = _rows(a), _rows(b)
        assert len(ra) == 8
        for x, y in zip(ra, rb):
            for col in ("g", "r", "c", "recall_at_1", "candidate_fraction"):
                assert x[col] == y[col]

    def test_unknown_config_key(self, files):
        tmp, _, _ = files
        cfg = tmp / "bad.cfg"
        cfg.write_text("colour=red\n")
        with pytest.raises(SystemExit) as info:
            run("grid", "--config", cfg)
        assert info.value.code == 1

    def test_osstats_energy(self, tmp_path):
        out = tmp_path / "e.csv"
        assert run("osstats", "energy", "--k", 8, "--out", out) == 0
        rows = _rows(out)
        assert len(rows) == 8
        assert float(rows[-1]["cumulative"]) == pytest.approx(1.0)

    def test_pca_and_kmeans(self, files, capsys):
        tmp, base, _ = files
        assert run("pca", "--base", base, "--out", tmp / "p.csv") == 0
        assert len(_rows(tmp / "p.csv")) == 8
        assert run("kmeans", "--base", base, "--m", 4, "--out", tmp / "k.csv",
                   "--centroids", tmp / "c.fvecs") == 0
        hist = [float(r["distortion"]) for r in _rows(tmp / "k.csv")]
        assert hist == sorted(hist, reverse=True)
        assert load_vectors(tmp / "c.fvecs").n == 4

    def test_osstats_cdf_stdout(self, capsys):
        assert run("osstats", "cdf", "--k", 3, "--points", 5) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "x,cdf_1,cdf_2,cdf_3"
        assert len(lines) == 6

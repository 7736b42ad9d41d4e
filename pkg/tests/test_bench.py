import io

import numpy as np
import pytest

from rosanna.bench import (CSV_COLUMNS, DEFAULT_C_LIST, DEFAULT_R_LIST, GridSpec, RunRecord,
                           default_g_list, evaluate, pareto_envelope, read_config, read_csv,
                           recall_at_1, run_grid, write_csv)
from rosanna.cones import cone_count
from rosanna.dataset import GroundTruth, SyntheticSpec, gen_synthetic, linear_scan_batch
from rosanna.index import build


def rec(recall, speed, **kw):
    return RunRecord(g=kw.get("g", 1), r=1, c=1, recall_at_1=recall, speedup_wallclock=speed,
                     candidate_fraction=0.1, build_time_rel=0.0, memory_overhead_rel=0.0)


@pytest.fixture(scope="module")
def small():
    base = gen_synthetic(SyntheticSpec("gaussian", 3000, 6, seed=5))
    queries = gen_synthetic(SyntheticSpec("gaussian", 100, 6, seed=6)).data
    return base, queries, linear_scan_batch(base, queries)


class TestEvaluate:
    def test_exhaustive_recall_one(self, small):
        base, queries, gt = small
        idx = build(base, 2, 1)
        r = evaluate(idx, queries, gt, c=cone_count(6, 2), repeats=1)
        assert r.recall_at_1 == 1.0
        assert r.candidate_fraction == 1.0

    def test_empty_results_score_wrong(self):
        gt = GroundTruth(np.array([0, 1]), np.array([1.0, 2.0]))
        assert recall_at_1(np.array([np.inf, 2.0]), gt) == 0.5

    def test_distance_ties_count(self):
        gt = GroundTruth(np.array([0]), np.array([2.0]))
        assert recall_at_1(np.array([2.0 * (1 + 1e-7)]), gt) == 1.0
        assert recall_at_1(np.array([2.0 * (1 + 1e-5)]), gt) == 0.0

    def test_fallback(self, small):
        base, queries, gt = small
        idx = build(base, 6, 1)
        plain = evaluate(idx, queries, gt, c=1, repeats=1)
        fb = evaluate(idx, queries, gt, c=1, repeats=1, fallback=True)
        assert fb.recall_at_1 >= plain.recall_at_1

    def test_memory_overhead_ratio(self, small):
        base, _, _ = small
        # int32 ids against float32 vectors: R / K of the data size
        for r in (1, 4, 8):
            idx = build(base, 2, r)
            ratio = idx.memory_bytes(ids_only=True) / base.nbytes
            assert ratio == pytest.approx(r / base.k)
            assert idx.memory_bytes() / base.nbytes < 1.5 * r / base.k + 0.05


class TestGrid:
    def test_default_grid_size(self):
        assert len(default_g_list(16)) * len(DEFAULT_R_LIST) * len(DEFAULT_C_LIST) == 320

    def test_small_grid(self, small):
        base, queries, gt = small
        spec = GridSpec(base, queries, g_list=(1, 2, 7), r_list=(1, 2), c_list=(1, 4),
                        ground_truth=gt, repeats=1)
        recs = run_grid(spec)
        # g=7 > k=6 is skipped
        assert len(recs) == 8
        assert {(x.g, x.r, x.c) for x in recs} == {(g, r, c) for g in (1, 2) for r in (1, 2)
                                                  for c in (1, 4)}

    def test_two_stage_grid(self, small):
        base, queries, gt = small
        spec = GridSpec(base, queries, g_list=(2,), r_list=(1,), c_list=(2,), ground_truth=gt,
                        repeats=1, m=4, w_list=(1, 4))
        recs = run_grid(spec)
        assert [(x.m, x.w) for x in recs] == [(4, 1), (4, 4)]
        assert recs[1].recall_at_1 >= recs[0].recall_at_1

    def test_empty_list_rejected(self, small):
        base, queries, _ = small
        with pytest.raises(ValueError):
            GridSpec(base, queries, r_list=())


def _dominance_filter(records):
    kept = []
    for a in records:
        dominated = any(
            b.recall_at_1 >= a.recall_at_1 and b.speedup_wallclock >= a.speedup_wallclock
            and (b.recall_at_1 > a.recall_at_1 or b.speedup_wallclock > a.speedup_wallclock)
            for b in records)
        if not dominated:
            kept.append(a)
    return kept


class TestPareto:
    def test_single(self):
        r = rec(0.5, 10)
        assert pareto_envelope([r]) == [r]

    def test_dominated_removed(self):
        a, b = rec(0.9, 20), rec(0.8, 10)
        assert pareto_envelope([b, a]) == [a]

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        # coarse values so ties occur
        recs = [rec(float(rng.integers(0, 10)) / 10, float(rng.integers(1, 20)), g=i)
                for i in range(100)]
        got = pareto_envelope(recs)
        want = _dominance_filter(recs)
        assert {id(x) for x in got} == {id(x) for x in want}
        assert [x.recall_at_1 for x in got] == sorted(x.recall_at_1 for x in got)


class TestCsv:
    def test_header_and_round_trip(self, tmp_path):
        recs = [rec(0.5, 10.0), RunRecord(2, 4, 8, 0.9, 3.5, 0.2, 0.1, 0.3, m=16, w=2)]
        buf = io.StringIO()
        write_csv(buf, recs)
        assert buf.getvalue().splitlines()[0] == ",".join(CSV_COLUMNS)
        write_csv(tmp_path / "x.csv", recs)
        back = read_csv(tmp_path / "x.csv")
        assert [(x.g, x.r, x.c, x.m, x.w) for x in back] == [(1, 1, 1, None, None), (2, 4, 8, 16, 2)]
        assert back[1].recall_at_1 == 0.9

    def test_config(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nr-list = 1,2\n\nseed=3  # trailing\n")
        assert read_config(p) == {"r_list": "1,2", "seed": "3"}
        p.write_text("oops\n")
        with pytest.raises(ValueError):
            read_config(p)

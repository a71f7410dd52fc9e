import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mirage_lab.aes_tt import expand_key
from mirage_lab.config import ExperimentConfig
from mirage_lab.leakage_analysis import (BinMode, Counting, DegenerateTemplate, InvalidRank,
                                         TraceSet, bin_index, build_template, consume, correlate,
                                         ge_curve, group_by_plaintext, guess_scores,
                                         guessing_entropy, heatmap, heatmap_correlation,
                                         profile_templates, rank_key_byte, read_heatmap_csv,
                                         timing_histogram, write_ge_csv, write_heatmap_csv,
                                         write_histogram_csv)
from mirage_lab.occupancy_attack import ParseError, TraceRecord, write_trace_file

from oracles import FIPS_INV_SBOX

KEY = expand_key(bytes(range(16)))


def synthetic(n, key=KEY, seed=0, leak=True):
    """Records whose cycles depend on the last-round bin of byte 0 (plus noise)."""
    rng = np.random.default_rng(seed)
    k10 = key.last_round_key
    out = []
    for _ in range(n):
        ct = rng.integers(0, 256, 16, dtype=np.uint8).tobytes()
        b = ct[0] ^ k10[0]
        cycles = int(1000 + (5 * (b % 17) if leak else 0) + rng.integers(0, 3))
        out.append(TraceRecord(rng.bytes(16), ct, cycles, 42))
    return out


def test_bin_index_examples():
    assert bin_index(0x00, 0x3A, BinMode.XOR_ONLY) == 0x3A
    assert all(bin_index(k, k) == 0 for k in range(256))
    assert bin_index(0x00, 0x63, BinMode.SBOX_INV) == 0x00
    assert all(bin_index(0, c, "sbox") == FIPS_INV_SBOX[c] for c in range(256))


def test_template_mean_and_counts():
    recs = [TraceRecord(bytes(16), bytes([5] + [0] * 15), c, 0) for c in (100, 200)]
    t = build_template(recs, 0, 0)
    assert t.means[5] == 150 and t.counts[5] == 2
    assert t.counts.sum() == 2 and np.isnan(t.means[4])
    with pytest.raises(ValueError):
        build_template([], 0, 0)


def test_256_distinct_bins():
    recs = [TraceRecord(bytes(16), bytes([i] + [0] * 15), i, 0) for i in range(256)]
    assert (build_template(recs, 0, 0).counts == 1).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 255), st.integers(0, 15))
def test_modes_are_bin_permutations(seed, k, pos):
    recs = synthetic(300, seed=seed)
    a = build_template(recs, k, pos, BinMode.XOR_ONLY)
    b = build_template(recs, k, pos, BinMode.SBOX_INV)
    assert sorted(a.counts) == sorted(b.counts)
    np.testing.assert_allclose(np.sort(a.means[a.populated]), np.sort(b.means[b.populated]))
    inv = np.array(FIPS_INV_SBOX)
    np.testing.assert_array_equal(b.counts[inv], a.counts)


def test_self_correlation_rank_one():
    recs = synthetic(3000)
    prof = build_template(recs, KEY.last_round_key[0], 0)
    r = rank_key_byte(prof, recs, 0, true_key_byte=KEY.last_round_key[0])
    assert r.true_rank == 1
    assert r.scores[KEY.last_round_key[0]] == pytest.approx(1.0)


def test_scores_match_pearson_oracle():
    prof_recs = synthetic(2000, seed=1)
    vic = synthetic(700, seed=2)
    prof = build_template(prof_recs, KEY.last_round_key[0], 0)
    scores = guess_scores(prof, vic, 0)
    for g in (0, 17, KEY.last_round_key[0], 255):
        gt = build_template(vic, g, 0)
        both = gt.populated & prof.populated
        want = stats.pearsonr(gt.means[both], prof.means[both])[0]
        assert scores[g] == pytest.approx(want, abs=1e-9)
        assert correlate(gt, prof) == pytest.approx(want, abs=1e-9)


def test_constant_data_is_degenerate_and_ties_by_guess():
    recs = [TraceRecord(bytes(16), bytes([i % 256] * 16), 500, 0) for i in range(1000)]
    prof = build_template(recs, 0, 0)
    with pytest.raises(DegenerateTemplate):
        correlate(prof, prof)
    r = rank_key_byte(prof, recs, 0, true_key_byte=200)
    assert np.isneginf(r.scores).all()
    assert r.order.tolist() == list(range(256))
    assert r.true_rank == 201


def test_too_few_overlapping_bins():
    recs = [TraceRecord(bytes(16), bytes([i] + [0] * 15), i, 0) for i in range(5)]
    t = build_template(recs, 0, 0)
    with pytest.raises(DegenerateTemplate, match="overlapping"):
        correlate(t, t)


def test_bin_mode_rank_equivalence():
    prof = synthetic(3000, seed=3)
    vic = synthetic(800, seed=4)
    for pos in (0, 5):
        ra = rank_key_byte(build_template(prof, KEY.last_round_key[pos], pos, "xor"), vic, pos, "xor")
        rb = rank_key_byte(build_template(prof, KEY.last_round_key[pos], pos, "sbox"), vic, pos, "sbox")
        np.testing.assert_allclose(ra.scores, rb.scores, atol=1e-12)
        assert ra.order.tolist() == rb.order.tolist()


def test_guessing_entropy_identities():
    assert guessing_entropy([1] * 16).ge_bits == 0
    assert guessing_entropy([256] * 16).ge_bits == 128
    r = guessing_entropy([2] * 16)
    assert r.ge_bits == 16 and r.ge_percent == 12.5
    with pytest.raises(InvalidRank):
        guessing_entropy([0] + [1] * 15)
    with pytest.raises(InvalidRank):
        guessing_entropy([257] + [1] * 15)
    with pytest.raises(InvalidRank):
        guessing_entropy([1] * 15)


@given(st.lists(st.integers(1, 256), min_size=16, max_size=16))
def test_ge_bounds(ranks):
    r = guessing_entropy(ranks)
    assert 0 <= r.ge_bits <= 128
    assert (r.ge_bits == 0) == all(x == 1 for x in ranks)
    assert r.ge_percent == pytest.approx(r.ge_bits / 128 * 100)


def _files(sizes):
    rec = TraceRecord(bytes(16), bytes(16), 1, 0)
    return [[rec] * n for n in sizes]


@pytest.mark.parametrize("max_traces,glob,buggy", [(500, 500, 3000), (2000, 2000, 6000)])
def test_counting_six_files(max_traces, glob, buggy):
    files = _files([1000] * 6)
    assert len(consume(files, max_traces, Counting.GLOBAL)) == glob
    assert len(consume(files, max_traces, "per-file-buggy")) == buggy


@given(st.lists(st.integers(0, 50), min_size=1, max_size=8), st.integers(1, 120))
def test_monotone_consumption(sizes, m):
    files = _files(sizes)
    assert len(consume(files, m, Counting.PER_FILE_BUGGY)) == sum(min(m, s) for s in sizes)
    assert len(consume(files, m, Counting.GLOBAL)) == min(m, sum(sizes))
    with pytest.raises(ValueError):
        consume(files, 0)


def test_ge_curve_from_files(tmp_path):
    cfg = ExperimentConfig()
    prof = synthetic(4000, seed=5)
    templates = profile_templates(prof, KEY)
    paths = []
    vic = synthetic(600, seed=6)
    for i in range(6):
        paths.append(write_trace_file(tmp_path / f"v.{i}.csv", cfg, KEY, vic[100 * i:100 * i + 100]))
    buggy = ge_curve(templates, paths, 50, Counting.PER_FILE_BUGGY)
    good = ge_curve(templates, paths, 50, Counting.GLOBAL)
    assert buggy[-1][0] == 300 and good[-1][0] == 50
    steps = ge_curve(templates, paths, 600, Counting.GLOBAL, step=200)
    assert [u for u, _ in steps] == [200, 400, 600]
    # byte 0 carries the synthetic leak
    assert steps[-1][1].ranks[0] == 1


def test_counting_modes_agree_on_one_short_file(tmp_path):
    cfg = ExperimentConfig()
    templates = profile_templates(synthetic(2000, seed=7), KEY)
    p = write_trace_file(tmp_path / "v.csv", cfg, KEY, synthetic(150, seed=8))
    a = ge_curve(templates, [p], 400, Counting.GLOBAL)
    b = ge_curve(templates, [p], 400, Counting.PER_FILE_BUGGY)
    assert a == b and a[0][0] == 150


def test_ge_curve_parse_error(tmp_path):
    cfg = ExperimentConfig()
    templates = profile_templates(synthetic(500), KEY)
    p = write_trace_file(tmp_path / "v.csv", cfg, KEY, synthetic(20))
    with open(p, "a") as fh:
        fh.write("broken\n")
    with pytest.raises(ParseError) as info:
        ge_curve(templates, [p], 10)
    assert info.value.lineno == 22


def test_ge_curve_needs_key():
    templates = profile_templates(synthetic(500), KEY)
    with pytest.raises(ValueError, match="key"):
        ge_curve(templates, [synthetic(20)], 10)


def _const_template(pos, v, n=256):
    recs = [TraceRecord(bytes(16), bytes([i] * 16), v, 0) for i in range(n)]
    return build_template(recs, 0, pos)


def test_heatmap_constant_and_single():
    hm = heatmap([_const_template(i, 7) for i in range(16)])
    assert hm.shape == (16, 16) and (hm == 7).all()
    with pytest.raises(ValueError):
        heatmap([_const_template(0, 7)])


def test_heatmap_single_contributor_and_missing():
    recs = [TraceRecord(bytes(16), bytes([i] + [0] * 15), 10 * i, 0) for i in range(200)]
    # byte position 0 sees bins 0..199; positions 1..15 only see bin 0
    ts = [build_template(recs, 0, p) for p in range(16)]
    hm = heatmap(ts)
    flat = hm.ravel()
    np.testing.assert_array_equal(flat[1:200], ts[0].means[1:200])
    assert np.isnan(flat[200:]).all()


def test_heatmap_correlation_nan_safe():
    a = np.arange(256, dtype=float).reshape(16, 16)
    b = a.copy()
    b[0, 0] = np.nan
    assert heatmap_correlation(a, b) == pytest.approx(1.0)
    assert np.isnan(heatmap_correlation(a, np.ones((16, 16))))


def test_histogram_shapes():
    h = timing_histogram({"a": [5]})
    assert h.counts["a"].tolist() == [1]
    h = timing_histogram({"a": [10] * 100, "b": [20] * 100, "c": [15] * 50})
    assert len(h.edges) == 65
    assert all((c > 0).sum() == 1 for c in h.counts.values())
    h = timing_histogram({"x": list(range(1000))})
    assert (h.counts["x"] > 0).sum() == 64
    with pytest.raises(ValueError):
        timing_histogram({})


def test_group_by_plaintext():
    recs = [TraceRecord(bytes([i % 3] * 16), bytes(16), i, 0) for i in range(9)]
    g = group_by_plaintext(recs)
    assert len(g) == 3 and g[bytes(16).hex()] == [0, 3, 6]


def test_csv_formats(tmp_path):
    grid = np.arange(256, dtype=float).reshape(16, 16)
    grid[3, 4] = np.nan
    write_heatmap_csv(tmp_path / "h.csv", grid, "meta=1")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 17
    assert all(len(ln.split(",")) == 16 for ln in lines[1:])
    assert lines[4].split(",")[4] == ""
    back = read_heatmap_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(np.isnan(back), np.isnan(grid))
    np.testing.assert_allclose(back[~np.isnan(back)], grid[~np.isnan(grid)])

    write_ge_csv(tmp_path / "g.csv", [(10, guessing_entropy([2] * 16))])
    assert (tmp_path / "g.csv").read_text().splitlines()[1:] == [
        "traces_used,ge_bits,ge_percent", "10,16.0000,12.5000"]

    write_histogram_csv(tmp_path / "s.csv", timing_histogram({"p": [1, 2]}, bins=2))
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[1] == "group,bin_lo,bin_hi,count" and len(rows) == 4


def test_traceset_head():
    ts = TraceSet.from_records(synthetic(10))
    assert len(ts) == 10 and len(ts.head(3)) == 3 and ts.cts.shape == (10, 16)

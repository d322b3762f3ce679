import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthid.bioeval import (
    ScoreSet,
    build_protocol,
    collect_scores,
    compute_eer,
    compute_fmr_point,
    cosine,
    embed,
    histogram_export,
    identification_top1,
    linkage_from_scores,
    linkage_lines,
    linkage_report,
    percent,
    read_histogram_csv,
    read_report,
    read_scores_csv,
    verification_accuracy,
    verification_report,
    write_histogram_csv,
    write_report,
    write_scores_csv,
)
from synthid.datagen import LabeledDataset, derive_subset, fit_generator, make_authentic, sample_synthetic
from synthid.embedder import ClassificationHead, ModelConfig, forward, init_model
from synthid.errors import DegenerateInputError, DimensionError, ProtocolError


# ------------------------------------------------------------ sweep oracle


def sweep_candidates(genuine, imposter):
    u = sorted(set(genuine) | set(imposter))
    cands = set(u)
    for lo, hi in zip(u, u[1:]):
        cands.add(lo + (hi - lo) / 2.0)
    cands.add(math.nextafter(u[-1], math.inf))
    return sorted(cands)


def sweep_rates(genuine, imposter, t):
    fmr = Fraction(sum(1 for s in imposter if s >= t), len(imposter))
    fnmr = Fraction(sum(1 for s in genuine if s < t), len(genuine))
    return fmr, fnmr


def oracle_eer(genuine, imposter):
    best = None
    for t in sweep_candidates(genuine, imposter):
        fmr, fnmr = sweep_rates(genuine, imposter, t)
        gap = abs(fmr - fnmr)
        if best is None or gap < best[0]:
            best = (gap, (fmr + fnmr) / 2, t)
    return best[1], best[2]


def oracle_fmr_point(genuine, imposter, bound):
    best = None
    for t in sweep_candidates(genuine, imposter):
        fmr, fnmr = sweep_rates(genuine, imposter, t)
        if fmr <= Fraction(repr(bound)) and (best is None or fnmr < best[0]):
            best = (fnmr, t)
    return best


def oracle_accuracy(genuine, imposter):
    best = None
    total = len(genuine) + len(imposter)
    for t in sweep_candidates(genuine, imposter):
        correct = sum(1 for s in genuine if s >= t) + sum(1 for s in imposter if s < t)
        if best is None or correct > best[0]:
            best = (correct, t)
    return Fraction(best[0], total), best[1]


def random_score_set(seed):
    rng = np.random.default_rng(seed)
    ng, ni = rng.integers(5, 501, size=2)
    g = np.clip(rng.normal(0.5, 0.25, ng), -1, 1)
    i = np.clip(rng.normal(0.0, 0.25, ni), -1, 1)
    if seed % 3 == 0:
        # coarse grid to force ties within and across the lists
        g, i = np.round(g, 1), np.round(i, 1)
    return ScoreSet(g, i)


EXAMPLE = ScoreSet([0.9, 0.8, 0.7], [0.75, 0.4, 0.2])


class TestMetricExamples:
    def test_eer_example(self):
        eer, _ = compute_eer(EXAMPLE)
        assert eer == float(Fraction(1, 3))
        assert verification_report(EXAMPLE).eer == Fraction(1, 3)

    def test_fmr_point_example(self):
        fnmr, t = compute_fmr_point(EXAMPLE, 0.001)
        assert fnmr == float(Fraction(1, 3)) and t > 0.75

    def test_separated(self):
        s = ScoreSet([0.9, 0.8], [0.1, -0.2, 0.3])
        assert compute_eer(s)[0] == 0.0
        assert compute_fmr_point(s, 0.01)[0] == 0.0 and compute_fmr_point(s, 0.001)[0] == 0.0
        assert verification_accuracy(s)[0] == 1.0

    def test_identical_lists(self):
        s = ScoreSet([0.1, 0.5, 0.3], [0.1, 0.5, 0.3])
        assert compute_eer(s)[0] == 0.5
        s = ScoreSet([0.2, 0.4], [0.2, 0.4, 0.6, 0.8, 0.1])
        assert verification_accuracy(s)[0] == pytest.approx(5 / 7, rel=1e-15)

    def test_empty(self):
        with pytest.raises(ProtocolError):
            compute_eer(ScoreSet([0.5], []))
        with pytest.raises(ProtocolError):
            compute_fmr_point(ScoreSet([], [0.5]), 0.01)


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(50))
    def test_against_sweep(self, seed):
        s = random_score_set(seed)
        g, i = s.genuine.tolist(), s.imposter.tolist()
        eer, t = oracle_eer(g, i)
        assert compute_eer(s) == (float(eer), t)
        assert verification_report(s).eer == eer
        for bound in (0.01, 0.001):
            fnmr, t = oracle_fmr_point(g, i, bound)
            assert compute_fmr_point(s, bound) == (float(fnmr), t)
        acc, t = oracle_accuracy(g, i)
        assert verification_accuracy(s) == (float(acc), t)


class TestMetricProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_report_ranges(self, seed):
        r = verification_report(random_score_set(seed))
        assert 0 <= r.eer <= 1 and 0 <= r.fmr100 <= r.fmr1000 <= 1

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_high_genuine_never_raises_fnmr(self, seed):
        s = random_score_set(seed)
        t = float(np.median(s.genuine))
        before = np.mean(s.genuine < t)
        after = np.mean(np.append(s.genuine, 1.0) < t)
        assert after <= before

    @pytest.mark.parametrize("factor", [2.0**-7, 0.5, 4.0, 2.0**20])
    def test_embedding_scale_invariance(self, factor):
        rng = np.random.default_rng(1)
        emb = rng.standard_normal((30, 5))
        labels = np.repeat(np.arange(10), 3)
        base = collect_scores(emb[:10], labels[:10], emb[10:], labels[10:])
        scaled = collect_scores(factor * emb[:10], labels[:10], factor * emb[10:], labels[10:])
        assert base.genuine.tobytes() == scaled.genuine.tobytes()
        assert verification_report(base) == verification_report(scaled)


class TestEmbedAndScores:
    def test_embed_empty_and_zero_model(self):
        m = init_model(ModelConfig(6, (4,), 3))
        assert embed(m, np.zeros((0, 6))).shape == (0, 3)
        for p in m.params():
            p[...] = 0
        assert not embed(m, np.ones((2, 6))).any()
        with pytest.raises(DimensionError):
            embed(m, np.ones((2, 5)))

    def test_embed_matches_rowwise(self, rng):
        m = init_model(ModelConfig(6, (4,), 3, init_seed=2))
        x = rng.standard_normal((5, 6))
        rows = np.vstack([forward(m, x[k : k + 1])[0] for k in range(5)])
        np.testing.assert_allclose(embed(m, x), rows, rtol=1e-13)

    def test_cosine(self):
        assert cosine([0.3, 0.4], [0.3, 0.4]) == 1.0
        assert cosine([1, 0], [0, 1]) == 0.0
        assert cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), rel=1e-15)
        with pytest.raises(DegenerateInputError):
            cosine([0, 0], [1, 0])

    def test_protocol(self):
        ds = LabeledDataset(np.eye(6), [0, 0, 0, 1, 1, 1], 2)
        p = build_protocol(ds)
        assert len(p.references) == 4 and len(p.probes) == 2
        assert not set(p.references) & set(p.probes)
        with pytest.raises(ProtocolError):
            build_protocol(LabeledDataset(np.eye(4), [0, 0, 1, 1], 2))

    def test_protocol_prefix_stable(self):
        gen = fit_generator(make_authentic(5, 4, 16, 0.2, seed=0), 0.5, 0.2, seed=1)
        ds = sample_synthetic(gen, 20, seed=2)
        sub = derive_subset(ds, 10)
        np.testing.assert_array_equal(ds.samples[build_protocol(ds).references], sub.samples[build_protocol(sub).references])

    def test_collect_counts(self, rng):
        s = collect_scores(rng.standard_normal((1, 3)), [0], rng.standard_normal((1, 3)), [0])
        assert (s.genuine.size, s.imposter.size) == (1, 0)
        s = collect_scores(rng.standard_normal((4, 3)), [0, 1, 2, 3], rng.standard_normal((5, 3)), [4, 5, 6, 7, 8])
        assert (s.genuine.size, s.imposter.size) == (0, 20)
        assert np.all(np.abs(s.imposter) <= 1.0)


class TestIdentification:
    def test_one_hot(self):
        head = ClassificationHead(np.eye(4))
        assert identification_top1(np.eye(4), np.arange(4), head) == 1.0

    def test_ties_are_errors(self):
        head = ClassificationHead(np.eye(2))
        assert identification_top1(np.array([[1.0, 1.0]]), [0], head) == 0.0

    def test_chance_level(self):
        rng = np.random.default_rng(0)
        head = ClassificationHead(rng.standard_normal((8, 10)))
        emb = rng.standard_normal((5000, 8))
        acc = identification_top1(emb, rng.integers(0, 10, 5000), head)
        assert abs(acc - 0.1) < 0.02

    def test_dimension(self):
        with pytest.raises(DimensionError):
            identification_top1(np.ones((2, 3)), [0, 1], ClassificationHead(np.eye(4)))


class TestLinkage:
    def test_full_leakage_no_noise(self):
        auth = make_authentic(20, 5, 16, 0.0, seed=0)
        syn = sample_synthetic(fit_generator(auth, 1.0, 0.0, seed=1), 5, seed=2)
        r = linkage_report(auth, syn, None)
        assert r.cross.eer == r.intra_authentic.eer == 0

    def test_zero_leakage_is_chance(self):
        auth = make_authentic(100, 5, 64, 0.1, seed=0)
        syn = sample_synthetic(fit_generator(auth, 0.0, 0.1, seed=1), 5, seed=2)
        assert abs(float(linkage_report(auth, syn, None).cross.eer) - 0.5) < 0.05

    def test_operating_point_arithmetic(self):
        # 89 of 100 genuine scores sit inside the imposter range, below its top 0.1%
        cross = ScoreSet(np.r_[np.full(89, 0.0), np.full(11, 0.9)], np.linspace(-0.9, 0.5, 1000))
        r = linkage_from_scores(EXAMPLE, EXAMPLE, cross)
        assert r.expected_nonmatches_per_100 == 100 * r.cross.fmr1000
        assert float(r.expected_nonmatches_per_100) == 89.0

    def test_report_file(self, tmp_path):
        r = linkage_from_scores(EXAMPLE, EXAMPLE, EXAMPLE)
        write_report(tmp_path / "r.txt", linkage_lines(r))
        d = read_report(tmp_path / "r.txt")
        assert d["intra_authentic.eer"] == "33.333"
        assert {k.split(".")[0] for k in d if "." in k} == {"intra_authentic", "intra_synthetic", "cross"}
        assert "expected_nonmatches_per_100" in d

    def test_percent(self):
        assert percent(Fraction(7614, 100000)) == "7.614"


class TestExports:
    def test_all_ones_single_bin(self):
        _, g, i = histogram_export(ScoreSet([1.0, 1.0], [1.0]))
        assert np.count_nonzero(g) == 1 and g.sum() == 2 and i.sum() == 1

    def test_conservation_and_round_trip(self, tmp_path):
        s = random_score_set(4)
        edges, g, i = histogram_export(s, bins=20)
        assert g.sum() == s.genuine.size and i.sum() == s.imposter.size
        np.testing.assert_allclose(np.diff(edges), 0.1, atol=1e-15)
        write_histogram_csv(tmp_path / "h.csv", edges, g, i)
        e2, g2, i2 = read_histogram_csv(tmp_path / "h.csv")
        assert e2.tobytes() == edges.tobytes()
        np.testing.assert_array_equal(g2, g)
        np.testing.assert_array_equal(i2, i)

    def test_scores_round_trip(self, tmp_path):
        s = random_score_set(7)
        write_scores_csv(tmp_path / "s.csv", s)
        back = read_scores_csv(tmp_path / "s.csv")
        assert back.genuine.tobytes() == s.genuine.tobytes()
        assert back.imposter.tobytes() == s.imposter.tobytes()

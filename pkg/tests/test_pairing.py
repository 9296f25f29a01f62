import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import label, make_image, make_text
from decoclip.findings import FindingLabel
from decoclip.pairing import (Batch, DecoupledSampler, DegenerateLabelError, InsufficientDataError,
                              PairedSampler, SentenceRecord, build_pool_matrix, build_soft_targets,
                              count_supervision_pairs, decoupled_sample, read_matrix,
                              semantic_similarity, sidecar_path, similarity_matrix,
                              soft_targets_from_similarity, write_matrix)


def multi_hot(rng, n):
    """Random non-degenerate labels that respect No Finding exclusivity."""
    out = np.zeros((n, 14))
    for i in range(n):
        if rng.random() < 0.15:
            out[i, 0] = 1
        else:
            k = rng.integers(1, 4)
            out[i, 1 + rng.choice(13, k, replace=False)] = 1
    return out


class TestSimilarity:
    def test_identical(self):
        assert semantic_similarity(label("Edema"), label("Edema")) == pytest.approx(1.0)

    def test_disjoint(self):
        assert semantic_similarity(label("Edema"), label("Cardiomegaly")) == 0.0

    def test_partial_overlap(self):
        s = semantic_similarity(label("Edema", "Cardiomegaly"), label("Edema"))
        assert s == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_zero_label_raises(self):
        with pytest.raises(DegenerateLabelError):
            semantic_similarity(np.zeros(14), label("Edema").to_array())

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(0)
        a, b = multi_hot(rng, 6), multi_hot(rng, 7)
        s = similarity_matrix(a, b)
        for i in range(6):
            for j in range(7):
                assert s[i, j] == pytest.approx(semantic_similarity(a[i], b[j]), abs=1e-15)


class TestSoftTargets:
    def test_two_by_two_hand_values(self):
        bundle = build_soft_targets(([label("Edema"), label("Cardiomegaly")],
                                     [label("Edema"), label("Cardiomegaly")]))
        hi, lo = math.e / (math.e + 1), 1 / (math.e + 1)
        np.testing.assert_allclose(bundle.y_v2t, [[hi, lo], [lo, hi]], atol=1e-15)
        assert hi == pytest.approx(0.7311, abs=1e-4)

    def test_symmetric_s_gives_transposed_targets(self):
        rng = np.random.default_rng(1)
        labs = multi_hot(rng, 8)
        b = soft_targets_from_similarity(similarity_matrix(labs, labs))
        np.testing.assert_allclose(b.y_v2t, b.y_t2v.T, atol=1e-15)

    def test_transposed_bundle(self):
        rng = np.random.default_rng(2)
        b = soft_targets_from_similarity(similarity_matrix(multi_hot(rng, 5), multi_hot(rng, 5)))
        t = b.transposed()
        np.testing.assert_array_equal(t.s, b.s.T)
        np.testing.assert_array_equal(t.y_v2t, b.y_t2v.T)

    def test_batch_input(self):
        imgs = [make_image(i, label("Edema" if i % 2 else "Cardiomegaly")) for i in range(4)]
        txts = [make_text(i, "there is mild edema", label("Edema")) for i in range(4)]
        b = build_soft_targets(Batch(imgs, txts))
        np.testing.assert_allclose(b.y_v2t, 0.25, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 12)),
              elements=st.floats(-1, 1, allow_nan=False)))
def test_targets_are_distributions(s):
    b = soft_targets_from_similarity(s)
    np.testing.assert_allclose(b.y_v2t.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(b.y_t2v.sum(axis=0), 1, atol=1e-12)
    assert (b.y_v2t > 0).all() and (b.y_t2v > 0).all()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-1, 1, allow_nan=False)),
       st.floats(-5, 5, allow_nan=False))
def test_targets_shift_invariant(s, c):
    a = soft_targets_from_similarity(s)
    b = soft_targets_from_similarity(s + c)
    np.testing.assert_allclose(a.y_v2t, b.y_v2t, atol=1e-12)
    np.testing.assert_allclose(a.y_t2v, b.y_t2v, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_row_argmax_follows_similarity(seed):
    rng = np.random.default_rng(seed)
    s = similarity_matrix(multi_hot(rng, 5), multi_hot(rng, 5))
    y = soft_targets_from_similarity(s).y_v2t
    for i in range(5):
        assert set(np.flatnonzero(y[i] == y[i].max())) == set(np.flatnonzero(s[i] == s[i].max()))


class TestSupervisionCount:
    def test_worked_example(self):
        assert count_supervision_pairs(2, 3, 3) == 25

    def test_paired_only(self):
        assert count_supervision_pairs(4, 0, 0) == 16

    def test_negative(self):
        with pytest.raises(ValueError):
            count_supervision_pairs(-1, 0, 0)

    def test_brute_force(self):
        for n, m, h in [(0, 0, 0), (1, 2, 3), (5, 0, 7), (3, 3, 0)]:
            images = list(range(n + m))
            texts = list(range(n + h))
            assert count_supervision_pairs(n, m, h) == len([(i, j) for i in images for j in texts])


def _pools(n_img=5, n_txt=5):
    imgs = [make_image(i, label("Edema")) for i in range(n_img)]
    txts = [make_text(i, f"mild edema number {i}", label("Edema")) for i in range(n_txt)]
    return imgs, txts


class TestSampler:
    def test_deterministic_per_step(self):
        imgs, txts = _pools(20, 30)
        a = DecoupledSampler(imgs, txts, 4, seed=7)
        b = DecoupledSampler(imgs, txts, 4, seed=7)
        for step in (1, 2, 99):
            for x, y in zip(a.indices(step), b.indices(step)):
                np.testing.assert_array_equal(x, y)
        assert not np.array_equal(a.indices(1)[0], a.indices(2)[0]) or \
            not np.array_equal(a.indices(1)[1], a.indices(2)[1])

    def test_no_replacement(self):
        imgs, txts = _pools(5, 5)
        s = DecoupledSampler(imgs, txts, 5, seed=0)
        for step in range(50):
            ii, tt = s.indices(step)
            assert sorted(ii) == list(range(5)) and sorted(tt) == list(range(5))

    def test_insufficient_data(self):
        imgs, txts = _pools(3, 10)
        with pytest.raises(InsufficientDataError):
            DecoupledSampler(imgs, txts, 4)

    def test_batch_size_two_minimum(self):
        imgs, txts = _pools()
        with pytest.raises(ValueError):
            DecoupledSampler(imgs, txts, 1)

    def test_decoupled_sample_reproducible(self):
        imgs, txts = _pools(10, 10)
        a = decoupled_sample(imgs, txts, 3, rng_seed=5)
        b = decoupled_sample(imgs, txts, 3, rng_seed=5)
        assert [r.id for r in a.images] == [r.id for r in b.images]
        assert [r.id for r in a.texts] == [r.id for r in b.texts]

    def test_stratified_balances_findings(self):
        imgs = [make_image(i, label("Edema" if i < 90 else "Cardiomegaly")) for i in range(100)]
        txts = [make_text(i, "there is mild edema", label("Edema")) for i in range(100)]
        s = DecoupledSampler(imgs, txts, 10, seed=0, mode="stratified")
        rare = np.mean([sum(imgs[i].label.names == ["Cardiomegaly"] for i in s.indices(k)[0])
                        for k in range(300)])
        assert 3.5 < rare < 6.5  # uniform would give 1

    def test_paired_sampler_keeps_pairs(self, small_corpus):
        s = PairedSampler(small_corpus.images, small_corpus.texts, 8, seed=0)
        batch = s.sample(3)
        assert [r.study_id for r in batch.images] == [r.study_id for r in batch.texts]

    def test_cartesian_coverage(self):
        imgs, txts = _pools(5, 5)
        s = DecoupledSampler(imgs, txts, 2, seed=0)
        seen = set()
        for step in range(10_000):
            ii, tt = s.indices(step)
            seen.update((int(i), int(j)) for i in ii for j in tt)
            if len(seen) == 25:
                break
        assert seen == {(i, j) for i in range(5) for j in range(5)}


def test_records_reject_degenerate():
    with pytest.raises(DegenerateLabelError):
        SentenceRecord("t", "nothing to see here", FindingLabel.from_array([0] * 14))
    with pytest.raises(ValueError):
        SentenceRecord("t", "too short", label("Edema"))


class TestMatrixFile:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(0).normal(size=(4, 3))
        path = write_matrix(m, tmp_path / "m.f32", {"note": "x"})
        assert path.stat().st_size == 4 * 3 * 4
        back, meta = read_matrix(path)
        np.testing.assert_array_equal(back, m.astype("<f4"))
        assert meta["rows"] == 4 and meta["cols"] == 3 and meta["note"] == "x"

    def test_checksum_detects_corruption(self, tmp_path):
        path = write_matrix(np.ones((2, 2)), tmp_path / "m.f32", {})
        blob = bytearray(path.read_bytes())
        blob[0] ^= 1
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError):
            read_matrix(path)

    def test_pool_matrix(self, tmp_path):
        labs_i = [label("Edema"), label("Edema", "Cardiomegaly")]
        labs_t = [label("Edema"), label("Fracture"), label("Cardiomegaly")]
        path = build_pool_matrix(["a", "b"], labs_i, ["x", "y", "z"], labs_t, tmp_path / "s.f32")
        s, meta = read_matrix(path)
        assert meta["row_ids"] == ["a", "b"] and meta["col_ids"] == ["x", "y", "z"]
        np.testing.assert_allclose(s, [[1, 0, 0], [2 ** -0.5, 0, 2 ** -0.5]], atol=1e-7)
        assert sidecar_path(path).exists()

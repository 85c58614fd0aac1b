import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmscore.alignment import (
    alignment_error,
    build_sequences,
    cost_matrix,
    dtw,
    linear_baseline,
    path_cost,
    rows_for_columns,
)
from cmscore.layers import l2_normalize
from cmscore.synthdata import DEFAULT_FONTS, gen_piece, render_piece_spectrogram, render_unrolled_staff


def enumerate_min_path_cost(cost):
    """Brute-force oracle: minimum total cost over every monotone path."""
    R, C = cost.shape
    best = [np.inf]

    def walk(r, c, acc):
        acc += cost[r, c]
        if acc >= best[0]:
            return
        if r == R - 1 and c == C - 1:
            best[0] = acc
            return
        if r + 1 < R and c + 1 < C:
            walk(r + 1, c + 1, acc)
        if r + 1 < R:
            walk(r + 1, c, acc)
        if c + 1 < C:
            walk(r, c + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def assert_valid_path(path, R, C):
    assert tuple(path[0]) == (0, 0)
    assert tuple(path[-1]) == (R - 1, C - 1)
    steps = set(map(tuple, np.diff(path, axis=0)))
    assert steps <= {(1, 0), (0, 1), (1, 1)}


class TestBuildSequences:
    @pytest.fixture
    def piece_assets(self):
        piece = gen_piece(31, note_count=30)
        staff, xs = render_unrolled_staff(piece)
        spec = render_piece_spectrogram(piece, DEFAULT_FONTS[3])
        return piece, staff, xs, spec

    def test_window_count_formula(self, piece_assets):
        _, staff, xs, spec = piece_assets
        padded = np.ones((180, 2000), dtype=np.float32)
        padded[:, : staff.shape[1]] = staff[:, :2000]
        seq = build_sequences(padded, spec, hop_img=50, hop_aud=10)
        assert len(seq.image_windows) == (2000 - 200) // 50 + 1 == 37

    def test_hop_equal_to_width_gives_one_window(self, piece_assets):
        _, staff, _, spec = piece_assets
        seq = build_sequences(staff, spec, hop_img=staff.shape[1], hop_aud=spec.shape[1])
        assert len(seq.image_windows) == 1
        assert len(seq.audio_windows) == 1

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            build_sequences(np.ones((180, 100)), np.ones((92, 100)))
        with pytest.raises(ValueError, match="too short"):
            build_sequences(np.ones((180, 300)), np.ones((92, 20)))

    def test_ground_truth_at_onset_equals_stored_x(self, piece_assets):
        piece, staff, xs, spec = piece_assets
        onsets = piece.onset_frames()
        # audio window ending exactly at note 5's onset
        target = int(onsets[5])
        start = target - 41
        assert start >= 0
        seq = build_sequences(staff, spec, hop_img=50, hop_aud=1,
                              note_x=xs, onset_frames=onsets)
        col = np.nonzero(seq.audio_end_frames == target)[0][0]
        assert seq.true_x[col] == xs[5]

    def test_ground_truth_interpolates_between_onsets(self, piece_assets):
        piece, staff, xs, spec = piece_assets
        onsets = piece.onset_frames()
        seq = build_sequences(staff, spec, hop_img=50, hop_aud=1,
                              note_x=xs, onset_frames=onsets)
        mid = (onsets[3] + onsets[4]) / 2.0
        col = np.argmin(np.abs(seq.audio_end_frames - mid))
        t = seq.audio_end_frames[col]
        expected = np.interp(t, onsets.astype(float), xs.astype(float))
        assert seq.true_x[col] == pytest.approx(expected)


class TestCostMatrix:
    def test_identical_single_embedding(self):
        v = l2_normalize(np.array([[1.0, 2.0, 3.0]]))
        assert cost_matrix(v, v) == pytest.approx(np.array([[0.0]]), abs=1e-12)

    def test_orthogonal_pair(self):
        X = np.eye(2)
        c = cost_matrix(X, X)
        assert c[0, 1] == 1.0 and c[1, 0] == 1.0

    def test_matches_elementwise_recompute(self, rng):
        X = l2_normalize(rng.standard_normal((10, 6)))
        Y = l2_normalize(rng.standard_normal((12, 6)))
        c = cost_matrix(X, Y)
        assert c.shape == (10, 12)
        for r in range(10):
            for co in range(12):
                assert c[r, co] == pytest.approx(1.0 - float(X[r] @ Y[co]), abs=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cost_matrix(np.zeros((0, 4)), np.ones((2, 4)))


class TestDtw:
    def test_zero_matrix_canonical_path(self):
        path, cost = dtw(np.zeros((3, 5)))
        assert cost == 0.0
        assert_valid_path(path, 3, 5)
        # diagonal-preferring backtrace: edge moves first, then all-diagonal
        assert [tuple(p) for p in path] == [(0, 0), (0, 1), (0, 2), (1, 3), (2, 4)]

    def test_identity_favoring_matrix(self):
        c = np.ones((3, 3))
        np.fill_diagonal(c, 0.0)
        path, cost = dtw(c)
        assert cost == 0.0
        assert [tuple(p) for p in path] == [(0, 0), (1, 1), (2, 2)]

    def test_500_random_small_matrices_match_enumeration(self, rng):
        for _ in range(500):
            R = int(rng.integers(1, 7))
            C = int(rng.integers(1, 7))
            c = rng.choice([0.0, 0.5, 1.0], size=(R, C))
            path, cost = dtw(c)
            assert cost == pytest.approx(enumerate_min_path_cost(c), abs=1e-12)
            assert cost == pytest.approx(path_cost(path, c), abs=1e-12)
            assert_valid_path(path, R, C)

    def test_cost_at_most_linear_baseline(self, rng):
        for _ in range(50):
            R = int(rng.integers(1, 12))
            C = int(rng.integers(1, 12))
            c = rng.random((R, C))
            _, cost = dtw(c)
            assert cost <= path_cost(linear_baseline(R, C), c) + 1e-12

    def test_scaling_invariance_of_path(self, rng):
        c = rng.random((8, 9))
        p1, _ = dtw(c)
        p2, _ = dtw(2.0 * c)
        assert np.array_equal(p1, p2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dtw(np.zeros((0, 3)))

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_path_always_valid(self, seed):
        r = np.random.default_rng(seed)
        R = int(r.integers(1, 15))
        C = int(r.integers(1, 15))
        path, _ = dtw(r.random((R, C)))
        assert_valid_path(path, R, C)


class TestLinearBaseline:
    def test_square_is_exact_diagonal(self):
        path = linear_baseline(4, 4)
        assert [tuple(p) for p in path] == [(0, 0), (1, 1), (2, 2), (3, 3)]

    def test_single_row(self):
        path = linear_baseline(1, 5)
        assert [tuple(p) for p in path] == [(0, c) for c in range(5)]

    def test_single_column(self):
        path = linear_baseline(4, 1)
        assert [tuple(p) for p in path] == [(r, 0) for r in range(4)]

    def test_rounding_rule_r5_c9(self):
        # rows from round-half-up of c*(R-1)/(C-1)
        path = linear_baseline(5, 9)
        rows = rows_for_columns(path, 9)
        assert list(rows) == [0, 1, 1, 2, 2, 3, 3, 4, 4]

    @given(st.integers(1, 40), st.integers(1, 40))
    @settings(max_examples=60, deadline=None)
    def test_always_valid_path(self, R, C):
        assert_valid_path(linear_baseline(R, C), R, C)


class TestAlignmentError:
    def test_perfect_path_zero_error(self):
        centers = np.array([100.0, 150.0, 200.0])
        path = np.array([(0, 0), (1, 1), (2, 2)])
        res = alignment_error(path, centers, centers, ref_width=800.0)
        assert np.all(res.errors == 0.0)
        assert res.summary["median"] == 0.0

    def test_constant_half_width_offset(self):
        centers = np.array([100.0, 150.0, 200.0])
        true = centers + 400.0
        path = np.array([(0, 0), (1, 1), (2, 2)])
        res = alignment_error(path, true, centers, ref_width=800.0)
        assert np.allclose(res.errors, 0.5)
        assert res.summary["median"] == 0.5
        assert res.summary["max"] == 0.5

    def test_median_row_used_for_multi_matched_columns(self):
        # column 0 matched by rows 0..2: lower median row is 1
        path = np.array([(0, 0), (1, 0), (2, 0), (3, 1)])
        rows = rows_for_columns(path, 2)
        assert list(rows) == [1, 3]

    def test_errors_can_exceed_one(self):
        centers = np.array([0.0, 2000.0])
        path = np.array([(0, 0), (1, 1)])
        res = alignment_error(path, np.array([1200.0, 0.0]), centers, ref_width=835.0)
        assert res.errors[0] > 1.0

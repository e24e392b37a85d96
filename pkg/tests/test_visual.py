import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avphon.errors import DataError
from avphon.features import WindowGrid
from avphon.visual import (
    EigenmouthBasis,
    VideoClip,
    extract_visual_features,
    fit_pca,
    match_frames,
    project,
    reconstruct,
    to_grayscale,
)

SHAPE = (100, 150)


def random_frames(n, seed):
    return np.random.default_rng(seed).integers(0, 256, size=(n, *SHAPE)).astype(np.uint8)


@pytest.fixture(scope="module")
def basis4():
    return fit_pca(random_frames(30, 0), k=4)


class TestGrayscale:
    @pytest.mark.parametrize("rgb,expected", [((255, 255, 255), 255), ((0, 0, 0), 0),
                                              ((100, 100, 100), 100), ((255, 0, 0), 76)])
    def test_values(self, rgb, expected):
        assert to_grayscale(*rgb) == expected

    def test_vectorized(self):
        px = np.array([[[255, 255, 255], [0, 0, 0]]], dtype=np.uint8)
        out = to_grayscale(px[..., 0], px[..., 1], px[..., 2])
        assert out.dtype == np.uint8 and out.tolist() == [[255, 0]]


class TestPca:
    def test_two_pattern_subspace(self):
        rng = np.random.default_rng(1)
        mean = rng.uniform(50, 200, SHAPE[0] * SHAPE[1])
        q, _ = np.linalg.qr(rng.standard_normal((SHAPE[0] * SHAPE[1], 2)))
        coeffs = rng.standard_normal((20, 2)) * [300.0, 100.0]
        frames = mean + coeffs @ q.T
        basis = fit_pca(frames, k=2)
        recon = reconstruct(project(frames, basis), basis)
        assert np.max(np.abs(recon - frames)) < 1e-6

    def test_identical_frames_rejected(self):
        frames = np.repeat(random_frames(1, 2), 6, axis=0)
        with pytest.raises(DataError, match="rank 0"):
            fit_pca(frames, k=1)

    def test_rank_deficient_lists_achievable_k(self):
        base = random_frames(3, 3).astype(float)
        frames = np.concatenate([base, base, base])
        with pytest.raises(DataError, match="achievable k is 1..2"):
            fit_pca(frames, k=4)

    def test_too_few_frames(self):
        with pytest.raises(DataError, match="at least 5 frames"):
            fit_pca(random_frames(4, 0), k=4)

    def test_against_covariance_eigendecomposition(self):
        # small frames keep the explicit covariance tractable
        rng = np.random.default_rng(5)
        frames = rng.normal(size=(25, 6, 8)) * np.linspace(1, 4, 48).reshape(6, 8)
        basis = fit_pca(frames, k=4, shape=(6, 8))
        x = frames.reshape(25, -1)
        cov = np.cov(x, rowvar=False)
        w, v = np.linalg.eigh(cov)
        np.testing.assert_allclose(basis.explained_variance, w[::-1][:4], rtol=1e-9)
        for i in range(4):
            assert abs(abs(basis.components[i] @ v[:, -1 - i]) - 1) < 1e-9
        assert np.all(np.diff(basis.explained_variance) <= 0)

    def test_orthonormal_and_sign(self, basis4):
        gram = basis4.components @ basis4.components.T
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-6)
        for c in basis4.components:
            assert c[np.argmax(np.abs(c))] > 0

    @given(st.integers(0, 2**31), st.integers(1, 5))
    @settings(max_examples=100, deadline=None)
    def test_orthonormality_and_determinism_property(self, seed, k):
        rng = np.random.default_rng(seed)
        frames = rng.normal(size=(k + 1 + rng.integers(0, 10), 10, 15))
        a = fit_pca(frames, k=k, shape=(10, 15))
        b = fit_pca(frames.copy(), k=k, shape=(10, 15))
        np.testing.assert_allclose(a.components @ a.components.T, np.eye(k), atol=1e-6)
        assert np.array_equal(a.components, b.components)
        assert np.array_equal(a.mean, b.mean)

    def test_serialization_round_trip(self, basis4):
        back = EigenmouthBasis.from_bytes(basis4.to_bytes())
        assert np.array_equal(back.components, basis4.components)
        assert np.array_equal(back.mean, basis4.mean)
        assert np.array_equal(back.explained_variance, basis4.explained_variance)


class TestProjection:
    def test_mean_projects_to_zero(self, basis4):
        np.testing.assert_allclose(project(basis4.mean, basis4), 0, atol=1e-9)

    def test_component_coefficient(self, basis4):
        np.testing.assert_allclose(project(basis4.mean + 2 * basis4.components[0], basis4),
                                   [2, 0, 0, 0], atol=1e-9)

    def test_least_squares(self, basis4):
        f = random_frames(1, 99)[0].astype(float).ravel()
        sol, *_ = np.linalg.lstsq(basis4.components.T, f - basis4.mean, rcond=None)
        np.testing.assert_allclose(project(f, basis4), sol, atol=1e-8)

    def test_dimension_mismatch(self, basis4):
        with pytest.raises(DataError):
            project(np.zeros((10, 10)), basis4)

    @given(st.floats(0, 1), st.integers(0, 1000))
    @settings(max_examples=100, deadline=None)
    def test_linearity(self, basis4, alpha, seed):
        f, g = random_frames(2, seed).astype(float)
        lhs = project(alpha * f + (1 - alpha) * g, basis4)
        rhs = alpha * project(f, basis4) + (1 - alpha) * project(g, basis4)
        np.testing.assert_allclose(lhs, rhs, atol=1e-7)


class TestMatching:
    def test_sixty_fps_tie(self):
        grid = WindowGrid(10)
        ts = np.arange(120) / 60
        idx = match_frames(grid, ts)
        # window 8 is centered at 0.08 + 0.0125 = 0.0925 -> frame 5 (0.0833); use an explicit grid
        class G:
            centers = np.array([0.100])
        assert match_frames(G, ts)[0].tolist() == [5, 6, 7]
        assert idx[8, 1] == 5

    def test_prev_clamps(self):
        idx = match_frames(WindowGrid(1), np.array([0.0, 1 / 60]))
        assert idx[0].tolist() == [0, 0, 1]

    def test_next_clamps(self):
        grid = WindowGrid(98)
        ts = np.arange(59) / 60  # last frame 0.9667 s precedes the last center 0.9825 s
        idx = match_frames(grid, ts)
        assert idx[-1].tolist() == [57, 58, 58]

    def test_no_preceding_frame(self):
        with pytest.raises(DataError):
            match_frames(WindowGrid(3), np.array([0.5, 0.6]))


class TestExtraction:
    def test_static_video(self, basis4):
        frame = random_frames(1, 7)[0]
        clip = VideoClip(np.repeat(frame[None], 60, axis=0), np.arange(60) / 60)
        seq = extract_visual_features(clip, WindowGrid(98), basis4)
        assert seq.vectors.shape == (98, 12)
        assert np.all(seq.vectors[:, 4:] == 0)

    def test_shared_triples_identical(self, basis4):
        clip = VideoClip(random_frames(60, 8), np.arange(60) / 60)
        grid = WindowGrid(98)
        seq = extract_visual_features(clip, grid, basis4)
        idx = match_frames(grid, clip.timestamps)
        for i in range(97):
            if (idx[i] == idx[i + 1]).all():
                assert np.array_equal(seq.vectors[i], seq.vectors[i + 1])
        assert len(seq) == grid.n_windows

    def test_difference_columns(self, basis4):
        clip = VideoClip(random_frames(20, 9), np.arange(20) / 60)
        grid = WindowGrid(25)
        seq = extract_visual_features(clip, grid, basis4)
        idx = match_frames(grid, clip.timestamps)
        p = project(clip.frames, basis4)
        i = 10
        np.testing.assert_allclose(seq.vectors[i, :4], p[idx[i, 1]])
        np.testing.assert_allclose(seq.vectors[i, 4:8], p[idx[i, 1]] - p[idx[i, 0]])
        np.testing.assert_allclose(seq.vectors[i, 8:], p[idx[i, 2]] - p[idx[i, 1]])

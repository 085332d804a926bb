import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualrcc.pipeline import PipelineConfig
from dualrcc.toy import sample_batch
from dualrcc.tradeoff import (LinearAutoencoder, blend, distortion_curve, fit_mse_encoder, load_decoder_matrix,
                              mse, perceptual_encoder, save_decoder_matrix)


class TestEncoders:
    def test_identity(self):
        assert np.allclose(fit_mse_encoder(np.eye(5)), np.eye(5), atol=1e-15)

    def test_orthonormal(self, rng):
        Q, _ = np.linalg.qr(rng.normal(size=(20, 6)))
        assert np.allclose(fit_mse_encoder(Q), Q.T, atol=1e-13)
        assert np.allclose(perceptual_encoder(Q), Q.T, atol=1e-13)

    def test_mse_optimal_against_random_probes(self, rng):
        D = rng.normal(size=(64, 16))
        X = rng.normal(size=(200, 64))
        E = fit_mse_encoder(D)
        best = np.mean((X - X @ (D @ E).T) ** 2)
        for _ in range(100):
            Ep = E + 0.05 * rng.normal(size=E.shape)
            assert best <= np.mean((X - X @ (D @ Ep).T) ** 2)

    def test_rank_deficient(self):
        D = np.ones((8, 2))
        with pytest.raises(ValueError):
            fit_mse_encoder(D)

    def test_wide_rejected(self):
        with pytest.raises(ValueError):
            fit_mse_encoder(np.ones((2, 8)))

    def test_pinv_residual(self, rng):
        ae = LinearAutoencoder.from_decoder(rng.normal(size=(30, 8)))
        assert ae.pinv_residual() < 1e-12


class TestBlend:
    def test_endpoints(self, rng):
        z, zt = rng.normal(size=7), rng.normal(size=7)
        assert blend(z, zt, 1.0).tobytes() == z.tobytes()
        assert blend(z, zt, 0.0).tobytes() == zt.tobytes()

    def test_midpoint(self):
        assert blend(np.array(2.0), np.array(0.0), 0.5) == 1.0

    @given(st.floats(-1, 2))
    def test_range(self, tau):
        if 0 <= tau <= 1:
            blend(np.zeros(2), np.ones(2), tau)
        else:
            with pytest.raises(ValueError):
                blend(np.zeros(2), np.ones(2), tau)


def test_decoder_matrix_io(tmp_path, rng):
    D = rng.normal(size=(9, 4))
    save_decoder_matrix(tmp_path / "d.bin", D)
    assert (tmp_path / "d.bin").stat().st_size == 16 + 8 * 36
    assert load_decoder_matrix(tmp_path / "d.bin").tobytes() == D.tobytes()


def test_decoder_matrix_truncated(tmp_path):
    (tmp_path / "d.bin").write_bytes(b"\x02" + b"\x00" * 20)
    with pytest.raises(ValueError):
        load_decoder_matrix(tmp_path / "d.bin")


def test_distortion_curve_single_tau(toy):
    b = sample_batch(toy, 2, seed=0)
    rows = distortion_curve(b.x, [0.5], PipelineConfig(T_E=4), toy, b.conditions())
    assert len(rows) == 1 and rows[0][0] == 0.5
    assert rows[0][1] > 0 and rows[0][2] > 0


def test_mse():
    assert mse([1, 2], [1, 4]) == 2.0

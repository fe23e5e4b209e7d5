import numpy as np
import pytest

from odsep.errors import ConfigurationError
from odsep.wavio import read_wav, write_wav


def test_float32_round_trip_mono(tmp_path):
    rng = np.random.default_rng(0)
    x = 0.5 * rng.standard_normal(4000)
    path = tmp_path / "mono.wav"
    write_wav(path, x, 8000, sample_format="float32")
    y, sr = read_wav(path)
    assert sr == 8000 and y.shape == (4000,)
    np.testing.assert_allclose(y, x, atol=1e-7)


def test_float32_round_trip_multichannel(tmp_path):
    rng = np.random.default_rng(1)
    x = 0.3 * rng.standard_normal((3, 2500))
    path = tmp_path / "multi.wav"
    write_wav(path, x, 8000)
    y, sr = read_wav(path)
    assert y.shape == (3, 2500)
    np.testing.assert_allclose(y, x, atol=1e-7)


def test_pcm16_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    x = np.round(np.clip(rng.standard_normal(1000) * 0.4, -1, 1) * 32767) / 32767
    path = tmp_path / "pcm.wav"
    write_wav(path, x, 8000, sample_format="pcm16")
    y, _ = read_wav(path)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_pcm16_clips_out_of_range(tmp_path):
    path = tmp_path / "clip.wav"
    write_wav(path, np.array([2.0, -2.0]), 8000, sample_format="pcm16")
    y, _ = read_wav(path)
    np.testing.assert_allclose(y, [1.0, -1.0], atol=1e-12)


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        write_wav(tmp_path / "x.wav", np.zeros(10), 8000, sample_format="pcm24")

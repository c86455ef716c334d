"""Time-frequency features: DSP oracles, log floors, shapes and the cache format."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import fft as sfft

from sonoscope import features as tf
from sonoscope.errors import FormatError, RangeError, TooShortError
from sonoscope.features import EPS, FeatureKind, FeatureMap, FrameParams
from sonoscope.signal_io import Segment

RATE = 16000
SEG_LEN = 48000
P = FrameParams()


def tone(freq, amp=1.0, n=SEG_LEN, rate=RATE, phase=0.3):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / rate + phase)


def seg_of(x):
    return Segment(np.asarray(x, dtype=np.float64), "r", 0, 0, RATE)


@pytest.fixture(scope="module")
def noise():
    return np.random.default_rng(5).uniform(-0.5, 0.5, SEG_LEN)


class TestFraming:
    def test_defaults(self):
        assert (P.window_len, P.hop_len) == (4000, 1024)
        assert FrameParams.for_rate(16000, 250, 64) == P

    @pytest.mark.parametrize("n, expected", [(48000, 43), (4000, 1), (5023, 1), (5024, 2)])
    def test_frame_count(self, n, expected):
        assert tf.frame_count(n, P) == expected

    def test_too_short(self):
        with pytest.raises(TooShortError):
            tf.frame_count(3999, P)
        with pytest.raises(TooShortError):
            tf.stft_complex(np.zeros(3999))

    @pytest.mark.parametrize("win, hop", [(100, 0), (100, 101)])
    def test_bad_params(self, win, hop):
        with pytest.raises(RangeError):
            FrameParams(win, hop)


class TestSTFT:
    def test_matches_direct_dft(self):
        p = FrameParams(64, 16)
        x = np.random.default_rng(0).standard_normal(200)
        X = tf.stft_complex(x, p)
        n = np.arange(64)
        w = 0.5 - 0.5 * np.cos(2 * np.pi * n / 64)  # periodic Hann
        assert X.shape == (33, (200 - 64) // 16 + 1)
        for t in range(X.shape[1]):
            frame = w * x[t * 16: t * 16 + 64]
            for k in range(33):
                direct = np.sum(frame * np.exp(-2j * np.pi * k * n / 64))
                assert abs(X[k, t] - direct) < 1e-10

    def test_parseval(self, noise):
        X = tf.stft_complex(noise, P)
        w = tf._hann(P.window_len)
        n_fft = P.window_len
        for t in range(X.shape[1]):
            frame = w * noise[t * P.hop_len: t * P.hop_len + n_fft]
            energy = np.sum(frame ** 2)
            mag2 = np.abs(X[:, t]) ** 2
            spectral = (mag2[0] + mag2[-1] + 2 * mag2[1:-1].sum()) / n_fft
            assert abs(spectral - energy) / energy < 1e-6

    def test_zero_input(self):
        assert not np.any(tf.stft_complex(np.zeros(SEG_LEN)))
        fm = tf.stft_feature(np.zeros(SEG_LEN))
        assert fm.shape == (48, 43)
        np.testing.assert_allclose(fm.values, -200.0)

    def test_tone_peak_bin(self):
        X = np.abs(tf.stft_complex(tone(1000.0)))
        assert np.all(np.argmax(X, axis=0) == 250)

    def test_low_bins_only(self):
        # a 1 kHz tone sits far above the 48 kept bins (< 188 Hz)
        fm = tf.stft_feature(tone(100.0))
        assert np.all(np.argmax(fm.values, axis=0) == 25)

    def test_gain_adds_20_db(self, noise):
        a = tf.stft_feature(noise).values.astype(np.float64)
        b = tf.stft_feature(10 * noise * 0.09).values.astype(np.float64)
        c = tf.stft_feature(noise * 0.09).values.astype(np.float64)
        np.testing.assert_allclose(b - c, 20.0, atol=1e-3)
        assert a.shape == b.shape


class TestMel:
    def test_mel_of_1khz(self):
        assert tf.hz_to_mel(1000.0) == pytest.approx(999.99, abs=0.01)
        assert tf.mel_to_hz(tf.hz_to_mel(1234.5)) == pytest.approx(1234.5)

    def test_filterbank_rows(self):
        fb = tf.mel_filterbank(44, 4000, 16000, 0.0, 8000.0)
        assert fb.shape == (44, 2001)
        assert np.all(fb >= 0)
        np.testing.assert_allclose(fb.max(axis=1), 1.0)
        for row in fb:
            nz = np.flatnonzero(row)
            assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1))
        assert np.all(fb @ np.ones(2001) > 0)

    def test_centers_equally_spaced_in_mel(self):
        c = tf.hz_to_mel(tf.mel_center_frequencies(44, 0.0, 8000.0))
        np.testing.assert_allclose(np.diff(c), np.diff(c)[0])

    @pytest.mark.parametrize("f_min, f_max", [(-1.0, 8000.0), (500.0, 500.0), (0.0, 9000.0)])
    def test_bad_range(self, f_min, f_max):
        with pytest.raises(RangeError):
            tf.mel_filterbank(44, 4000, 16000, f_min, f_max)

    def test_zero_input(self):
        fm = tf.mel_spectrogram(np.zeros(SEG_LEN))
        assert fm.shape == (44, 43)
        np.testing.assert_allclose(fm.values, np.log(EPS), rtol=1e-6)

    @pytest.mark.parametrize("freq", [1000.0, 350.0, 4200.0])
    def test_tone_lands_in_nearest_filter(self, freq):
        centers = tf.mel_center_frequencies(44, 0.0, 8000.0)
        nearest = int(np.argmin(np.abs(tf.hz_to_mel(centers) - tf.hz_to_mel(freq))))
        fm = tf.mel_spectrogram(tone(freq))
        assert np.all(np.argmax(fm.values, axis=0) == nearest)

    def test_composition_with_stft(self, noise):
        X = tf.stft_complex(noise)
        fb = tf.mel_filterbank(44, 4000, 16000, 0.0, 8000.0)
        expected = np.log(fb @ np.abs(X) ** 2 + EPS)
        np.testing.assert_allclose(tf.mel_spectrogram(noise).values, expected, rtol=1e-6)


def naive_dct(v):
    n = len(v)
    k = np.arange(n)[:, None]
    basis = np.cos(np.pi * k * (2 * np.arange(n)[None, :] + 1) / (2 * n))
    scale = np.full(n, np.sqrt(2 / n))
    scale[0] = np.sqrt(1 / n)
    return scale * (basis @ v)


class TestDCT:
    def test_ones(self):
        c = tf.dct_ii(np.ones(8), 8)
        assert c[0] == pytest.approx(np.sqrt(8))
        np.testing.assert_allclose(c[1:], 0.0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=70), st.data())
    def test_matches_direct_sum(self, values, data):
        v = np.array(values)
        keep = data.draw(st.integers(1, len(v)))
        np.testing.assert_allclose(tf.dct_ii(v, keep), naive_dct(v)[:keep], atol=1e-9)

    def test_inverse(self):
        v = np.random.default_rng(2).standard_normal(44)
        back = sfft.idct(tf.dct_ii(v), type=2, norm="ortho")
        assert np.max(np.abs(back - v)) < 1e-10

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal(16), rng.standard_normal(16)
        np.testing.assert_allclose(tf.dct_ii(a + b), tf.dct_ii(a) + tf.dct_ii(b), atol=1e-12)

    def test_columnwise(self):
        m = np.random.default_rng(4).standard_normal((44, 5))
        out = tf.dct_ii(m, 16, axis=0)
        for j in range(5):
            np.testing.assert_allclose(out[:, j], naive_dct(m[:, j])[:16], atol=1e-12)

    @pytest.mark.parametrize("keep", [0, 9])
    def test_bad_keep(self, keep):
        with pytest.raises(RangeError):
            tf.dct_ii(np.ones(8), keep)


class TestMFCC:
    def test_zero_input(self):
        fm = tf.mfcc(np.zeros(SEG_LEN))
        assert fm.shape == (16, 43)
        np.testing.assert_allclose(fm.values[0], np.sqrt(44) * np.log(EPS), rtol=1e-6)
        np.testing.assert_allclose(fm.values[1:], 0.0, atol=1e-4)

    def test_is_dct_of_log_mel(self, noise):
        mel = tf.mel_spectrogram(noise)
        expected = tf.dct_ii(mel.values, 16, axis=0).astype(np.float32)
        np.testing.assert_array_equal(tf.mfcc(noise).values, expected)


class TestGammatone:
    def test_erb(self):
        assert tf.erb(1000.0) == pytest.approx(132.639)

    def test_centers(self):
        fc = tf.gammatone_center_frequencies()
        assert fc.size == 64
        assert fc[0] == pytest.approx(50.0) and fc[-1] == pytest.approx(8000.0)
        np.testing.assert_allclose(np.diff(tf.hz_to_erb_rate(fc)), np.diff(tf.hz_to_erb_rate(fc))[0])

    def test_unit_gain_at_center(self):
        fc, g = tf.gammatone_impulse_responses(RATE)
        t = np.arange(g.shape[1]) / RATE
        for k in (0, 20, 40, 63):
            response = np.sum(g[k] * np.exp(-2j * np.pi * fc[k] * t))
            assert abs(response) == pytest.approx(1.0, rel=1e-9)

    def test_zero_input(self):
        fm = tf.gfcc(np.zeros(SEG_LEN))
        assert fm.shape == (64, 43)
        np.testing.assert_allclose(fm.values[0], 8 * np.log(EPS), rtol=1e-6)
        np.testing.assert_allclose(fm.values[1:], 0.0, atol=1e-4)

    @pytest.mark.parametrize("freq", [1000.0, 220.0, 3000.0])
    def test_tone_lands_in_nearest_channel(self, freq):
        fc = tf.gammatone_center_frequencies()
        energies = tf.gammatone_log_energies(tone(freq))
        assert np.all(np.argmax(energies, axis=0) == np.argmin(np.abs(fc - freq)))

    def test_gfcc_is_dct_of_energies(self, noise):
        expected = tf.dct_ii(tf.gammatone_log_energies(noise), 64, axis=0).astype(np.float32)
        np.testing.assert_array_equal(tf.gfcc(noise).values, expected)


def direct_qtransform_bin(x, frame, freq, length, hop=1024, rate=RATE):
    """Literal inner product of one centred, Hann-windowed kernel with the signal."""
    n = np.arange(length)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / (length - 1))
    offsets = n - length // 2
    pos = frame * hop + offsets
    inside = (pos >= 0) & (pos < x.size)
    xs = np.where(inside, x[np.clip(pos, 0, x.size - 1)], 0.0)
    value = np.sum(xs * w * np.exp(-2j * np.pi * freq * offsets / rate)) / w.sum()
    return 20 * np.log10(abs(value) + EPS)


class TestConstantQ:
    def test_geometry(self):
        assert tf.cqt_q() == pytest.approx(11.0488, abs=1e-4)
        f = tf.qtransform_frequencies()
        assert f[0] == 31.25 and f[32] == pytest.approx(500.0)
        assert f[63] == pytest.approx(31.25 * 2 ** (63 / 8)) and f[63] < 8000
        assert tf.qtransform_lengths(RATE)[0] == 5657

    def test_vqt_geometry(self):
        assert tf.vqt_gamma() == pytest.approx(20.70, abs=0.01)
        f = tf.qtransform_frequencies()
        q_vqt = f / tf.qtransform_bandwidths(tf.vqt_gamma())
        assert q_vqt[0] == pytest.approx(1.33, abs=0.01)
        alpha = 2 ** (1 / 8) - 1
        ratio = q_vqt / tf.cqt_q()
        np.testing.assert_allclose(ratio, 1 / (1 + tf.vqt_gamma() / (alpha * f)))
        assert np.all(np.diff(ratio) > 0)
        # within 5% once alpha * f exceeds 19 * gamma, i.e. above ~4.35 kHz
        assert np.all(ratio[f > 19 * tf.vqt_gamma() / alpha] > 0.95)
        assert np.all(ratio[f > 2000] > 0.89)
        assert np.all(tf.qtransform_lengths(RATE, tf.vqt_gamma()) <= tf.qtransform_lengths(RATE))
        assert tf.qtransform_lengths(RATE, tf.vqt_gamma())[0] < tf.qtransform_lengths(RATE)[0]

    @pytest.mark.parametrize("fn", [tf.cqt, tf.vqt])
    def test_shape_and_floor(self, fn):
        fm = fn(np.zeros(SEG_LEN))
        assert fm.shape == (64, SEG_LEN // 1024 + 1)
        np.testing.assert_allclose(fm.values, -200.0)

    @pytest.mark.parametrize("fn", [tf.cqt, tf.vqt])
    def test_500hz_tone_in_bin_32(self, fn):
        fm = fn(tone(500.0))
        interior = fm.values[:, 6:-6]
        assert np.all(np.argmax(interior, axis=0) == 32)

    def test_unit_tone_magnitude(self):
        fm = tf.cqt(tone(500.0))
        np.testing.assert_allclose(fm.values[32, 6:-6], 20 * np.log10(0.5), atol=0.05)

    @pytest.mark.parametrize("gamma", [0.0, None])
    def test_matches_direct_inner_product(self, noise, gamma):
        gamma = tf.vqt_gamma() if gamma is None else gamma
        fm = tf.vqt(noise) if gamma else tf.cqt(noise)
        f = tf.qtransform_frequencies()
        lengths = tf.qtransform_lengths(RATE, gamma)
        for frame in (0, 1, 23, 46):
            for k in (0, 17, 40, 63):
                expected = direct_qtransform_bin(noise, frame, f[k], lengths[k])
                assert fm.values[k, frame] == pytest.approx(expected, abs=1e-3)

    def test_top_bin_above_nyquist(self):
        with pytest.raises(RangeError):
            tf.qtransform_kernels(8000)


class TestExtraction:
    def test_all_kinds(self, noise):
        out = tf.extract_features(seg_of(noise))
        assert list(out) == list(FeatureKind)
        expected = {"MS": (44, 43), "MFCC": (16, 43), "STFT": (48, 43),
                    "GFCC": (64, 43), "CQT": (64, 47), "VQT": (64, 47)}
        assert {k.name: fm.shape for k, fm in out.items()} == expected
        for fm in out.values():
            assert fm.values.dtype == np.float32 and np.all(np.isfinite(fm.values))

    def test_matches_individual_extractors(self, noise):
        out = tf.extract_features(noise)
        singles = {FeatureKind.MS: tf.mel_spectrogram, FeatureKind.MFCC: tf.mfcc,
                   FeatureKind.STFT: tf.stft_feature, FeatureKind.GFCC: tf.gfcc,
                   FeatureKind.CQT: tf.cqt, FeatureKind.VQT: tf.vqt}
        for kind, fn in singles.items():
            np.testing.assert_array_equal(out[kind].values, fn(noise).values)

    def test_deterministic(self, noise):
        a = tf.extract_features(noise)
        b = tf.extract_features(noise.copy())
        for k in a:
            assert tf.feature_map_to_bytes(a[k]) == tf.feature_map_to_bytes(b[k])

    def test_subset(self, noise):
        assert list(tf.extract_features(noise, [FeatureKind.VQT, FeatureKind.MS])) == \
            [FeatureKind.VQT, FeatureKind.MS]


class TestFeatureMap:
    def test_wrong_bin_count(self):
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((40, 43)), FeatureKind.MS)

    def test_non_finite(self):
        v = np.zeros((16, 3))
        v[2, 1] = np.inf
        with pytest.raises(ValueError):
            FeatureMap(v, FeatureKind.MFCC)


class TestCacheFormat:
    def test_layout(self):
        v = np.arange(16 * 3, dtype=np.float32).reshape(16, 3)
        raw = tf.feature_map_to_bytes(FeatureMap(v, FeatureKind.MFCC))
        assert raw[:4] == b"TFFM"
        assert struct.unpack_from("<IBII", raw, 4) == (1, 1, 16, 3)
        np.testing.assert_array_equal(np.frombuffer(raw[17:], dtype="<f4"), v.ravel())

    def test_round_trip(self, tmp_path, noise):
        fm = tf.cqt(noise)
        tf.save_feature_map(tmp_path / "x.tffm", fm)
        back = tf.load_feature_map(tmp_path / "x.tffm")
        assert back.kind is FeatureKind.CQT
        np.testing.assert_array_equal(back.values, fm.values)

    @pytest.mark.parametrize("mutate", [
        lambda raw: b"XFFM" + raw[4:],
        lambda raw: raw[:4] + struct.pack("<I", 2) + raw[8:],
        lambda raw: raw[:8] + bytes([9]) + raw[9:],
        lambda raw: raw[:-1],
        lambda raw: raw[:10],
    ])
    def test_corrupt(self, mutate):
        raw = tf.feature_map_to_bytes(FeatureMap(np.zeros((48, 2)), FeatureKind.STFT))
        with pytest.raises(FormatError):
            tf.feature_map_from_bytes(mutate(raw))

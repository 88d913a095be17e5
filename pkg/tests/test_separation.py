import numpy as np
import pytest
import scipy.signal

from conftest import SR, click_train, energy, sine
from stemcal import _backend
from stemcal.separation import (
    STEMS,
    StemSet,
    StemTarget,
    aggregate,
    butterworth_lowpass,
    butterworth_sos,
    hpss,
    hpss_masks,
    ingest_stems,
    map_target,
    naive_separate,
)
from stemcal.signal import Waveform, stft, write_wav


def _steady_rms(w, skip=0.5):
    x = np.asarray(w.samples)[int(skip * SR):]
    return float(np.sqrt(np.mean(x**2)))


def test_sustained_sine_goes_harmonic():
    h, p = hpss(stft(sine(440.0), 2048, 512))
    assert energy(h) / (energy(h) + energy(p)) >= 0.9


def test_click_train_goes_percussive():
    h, p = hpss(stft(click_train(), 2048, 512))
    assert energy(p) / (energy(h) + energy(p)) >= 0.9


def test_masks_margin_one_cover_every_bin(rng):
    mag = np.abs(rng.standard_normal((60, 80)))
    mh, mp = hpss_masks(mag, margin=1.0)
    assert np.all(mh | mp)


def test_masks_binary_and_never_amplify(rng):
    s = stft(Waveform(rng.standard_normal(2 * SR), SR), 2048, 512)
    mh, mp = hpss_masks(s.magnitude, margin=3.0)
    assert mh.dtype == bool and mp.dtype == bool
    assert not np.any(mh & mp)
    assert np.all(np.abs(s.bins * mh) <= s.magnitude)


def test_hpss_errors():
    with pytest.raises(ValueError):
        hpss_masks(np.ones((40, 40)), margin=0.5)
    with pytest.raises(ValueError, match="too short"):
        hpss(stft(Waveform(np.ones(4000), SR), 2048, 512))


def test_butterworth_matches_scipy_design():
    for order in (1, 2, 3, 4, 6):
        ours = butterworth_sos(300.0, SR, order)
        ref = scipy.signal.butter(order, 300.0, fs=SR, output="sos")
        _, h_ours = scipy.signal.sosfreqz(ours, worN=4096, fs=SR)
        _, h_ref = scipy.signal.sosfreqz(ref, worN=4096, fs=SR)
        np.testing.assert_allclose(np.abs(h_ours), np.abs(h_ref), atol=1e-9)


def test_butterworth_minus_3db_by_sine():
    ratio = _steady_rms(butterworth_lowpass(sine(300.0))) / _steady_rms(sine(300.0))
    assert abs(20 * np.log10(ratio) - 20 * np.log10(1 / np.sqrt(2))) <= 0.5


def test_butterworth_dc_gain():
    out = butterworth_lowpass(Waveform(np.ones(SR), SR))
    assert abs(out.samples[-1] - 1.0) < 1e-3


def test_butterworth_stopband():
    ratio = _steady_rms(butterworth_lowpass(sine(3000.0))) / _steady_rms(sine(3000.0))
    assert 20 * np.log10(ratio) <= -60


def test_butterworth_errors():
    w = Waveform(np.ones(100), SR)
    for cutoff in (0.0, -5.0, SR / 2, SR):
        with pytest.raises(ValueError):
            butterworth_lowpass(w, cutoff)
    with pytest.raises(ValueError):
        butterworth_lowpass(w, 300.0, 0)


def test_sosfilt_backends_agree_with_scipy(rng, backend):
    sos = butterworth_sos(300.0, SR, 4)
    x = rng.standard_normal(5000)
    np.testing.assert_allclose(
        _backend.sosfilt(sos, x, backend=backend), scipy.signal.sosfilt(sos, x), atol=1e-12
    )


def test_naive_separate_silence():
    stems = naive_separate(Waveform(np.zeros(2 * SR), SR))
    assert stems.origin == "naive_dsp"
    for name in STEMS:
        assert np.all(stems[name].samples == 0)


def test_naive_separate_impulse_train():
    stems = naive_separate(click_train())
    total = sum(energy(stems[n]) for n in STEMS)
    assert energy(stems["drums"]) / total >= 0.9


def test_naive_separate_energy_bound(rng):
    # content outside the low-pass transition band, where the residual path has gain <= 1
    corpus = [
        sine(1000.0),
        sine(2500.0),
        click_train(),
        Waveform(rng.standard_normal(2 * SR) * 0.1, SR),
        Waveform(sine(1200.0).samples + click_train().samples + sine(3100.0, amp=0.2).samples, SR),
    ]
    for mix in corpus:
        stems = naive_separate(mix)
        assert sum(energy(stems[n]) for n in STEMS) <= 1.9 * energy(mix)


@pytest.mark.parametrize("freq", [60.0, 110.0, 220.0, 440.0, 1000.0, 4000.0])
def test_naive_separate_tone_energy_follows_filter_response(freq):
    # a tone passes HPSS intact, then bass gets |H|^2 and vocals/others get |1 - H|^2
    _, h = scipy.signal.sosfreqz(butterworth_sos(300.0, SR, 4), worN=[freq], fs=SR)
    predicted = abs(h[0]) ** 2 + (1 + 0.8**2) * abs(1 - h[0]) ** 2
    mix = sine(freq)
    stems = naive_separate(mix)
    measured = sum(energy(stems[n]) for n in STEMS) / energy(mix)
    assert measured == pytest.approx(predicted, rel=0.03)


def test_naive_separate_is_deterministic(rng):
    mix = Waveform(rng.standard_normal(2 * SR), SR)
    a, b = naive_separate(mix), naive_separate(mix)
    for name in STEMS:
        assert a[name].samples.tobytes() == b[name].samples.tobytes()


def test_naive_separate_leakage_structure(rng):
    stems = naive_separate(Waveform(rng.standard_normal(2 * SR), SR))
    np.testing.assert_array_equal(stems["others"].samples, 0.8 * stems["vocals"].samples)


def test_naive_separate_rejects_stereo():
    with pytest.raises(ValueError):
        naive_separate(Waveform(np.zeros((SR, 2)), SR))


def test_ingest_stems_aligns_lengths(tmp_path, rng):
    mix = Waveform(rng.standard_normal(1000), SR)
    for i, name in enumerate(STEMS):
        write_wav(tmp_path / f"{name}.wav", Waveform(rng.uniform(-1, 1, 800 + 100 * i).astype(np.float32), SR))
    stems = ingest_stems(tmp_path, mix)
    assert stems.origin == "ingested"
    assert {len(stems[n]) for n in STEMS} == {1000}
    assert np.all(stems["vocals"].samples[800:] == 0)


def test_ingest_stems_resamples(tmp_path):
    mix = Waveform(np.zeros(1600), SR)
    for name in STEMS:
        write_wav(tmp_path / f"{name}.wav", Waveform(np.ones(800, np.float32) * 0.5, 8000))
    stems = ingest_stems(tmp_path, mix)
    assert stems.sample_rate == SR
    np.testing.assert_allclose(stems["bass"].samples[:1500], 0.5, atol=1e-6)


def test_ingest_stems_missing_file(tmp_path):
    write_wav(tmp_path / "vocals.wav", Waveform(np.zeros(10, np.float32), SR))
    with pytest.raises(FileNotFoundError):
        ingest_stems(tmp_path, Waveform(np.zeros(10), SR))


@pytest.mark.parametrize(
    "label,category",
    [
        ("male voice", "vocals"),
        ("violin", "others"),
        ("drums", "drums"),
        ("Electric Bass Guitar", "bass"),
        ("bass clarinet", "others"),
        ("tenor saxophone", "others"),
        ("Hi-Hat", "drums"),
        ("sub-bass", "bass"),
        ("female singer with piano", "vocals"),
        ("steel drums", "others"),
    ],
)
def test_map_target(label, category):
    target = map_target(label)
    assert target == StemTarget(category, label)


def test_map_target_rejects_empty():
    for label in ("", "   "):
        with pytest.raises(ValueError):
            map_target(label)


def _stems(rng, n=500):
    return StemSet({name: Waveform(rng.standard_normal(n), SR) for name in STEMS}, "ingested")


def test_aggregate_vocals_sums_others(rng):
    stems = _stems(rng)
    tgt, con = aggregate(stems, StemTarget("vocals", "voice"))
    np.testing.assert_array_equal(tgt.samples, stems["vocals"].samples)
    expected = stems["bass"].samples + stems["drums"].samples + stems["others"].samples
    np.testing.assert_allclose(con.samples, expected, atol=1e-12)


def test_aggregate_silent_non_targets(rng):
    stems = StemSet(
        {n: Waveform(rng.standard_normal(100) if n == "drums" else np.zeros(100), SR) for n in STEMS},
        "ingested",
    )
    _, con = aggregate(stems, StemTarget("drums", "kick"))
    assert np.all(con.samples == 0)


def test_aggregate_linear(rng):
    stems = _stems(rng)
    doubled = StemSet({n: Waveform(2 * stems[n].samples, SR) for n in STEMS}, "ingested")
    for name in STEMS:
        t1, c1 = aggregate(stems, StemTarget(name, name))
        t2, c2 = aggregate(doubled, StemTarget(name, name))
        np.testing.assert_array_equal(t2.samples, 2 * t1.samples)
        np.testing.assert_array_equal(c2.samples, 2 * c1.samples)


def test_aggregate_partition_exact_on_float32_grid(rng):
    # float32 stems summed in float64 are exact, so the partition identity is bitwise
    stems = StemSet(
        {n: Waveform(rng.uniform(-1, 1, 2000).astype(np.float32), SR) for n in STEMS}, "ingested"
    )
    total = sum(np.asarray(stems[n].samples, dtype=np.float64) for n in STEMS)
    for name in STEMS:
        tgt, con = aggregate(stems, StemTarget(name, name))
        np.testing.assert_array_equal(tgt.samples + con.samples, total)


def test_stemset_validation(rng):
    good = {n: Waveform(np.zeros(10), SR) for n in STEMS}
    with pytest.raises(ValueError):
        StemSet({k: v for k, v in good.items() if k != "bass"}, "ingested")
    with pytest.raises(ValueError):
        StemSet({**good, "bass": Waveform(np.zeros(11), SR)}, "ingested")
    with pytest.raises(ValueError):
        StemSet(good, "neural")

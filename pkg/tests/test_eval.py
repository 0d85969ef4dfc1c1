from dataclasses import dataclass

import numpy as np
import pytest

from oracles import multiscale_distance
from semcodec.errors import ConfigurationError, ShapeError
from semcodec.evaluation import (clip_features, eval_reconstruction, probe_eval, spectral_distance,
                                 stratified_split)
from semcodec.pipeline import checkpoint_hash, save_checkpoint
from semcodec.synthcorpus import default_classes, generate_corpus


def test_identical_and_symmetric(tone):
    a = tone(1.0, 440)
    b = tone(1.0, 660)
    assert spectral_distance(a, a) == (0.0, 0.0)
    assert spectral_distance(a, b) == spectral_distance(b, a)
    with pytest.raises(ShapeError):
        spectral_distance(a, a[:-1])


def test_against_loop_oracle(tone):
    a = tone(1.0, 440)
    b = tone(1.0, 300) + 0.01 * np.random.default_rng(0).normal(size=a.size)
    assert spectral_distance(a, b) == pytest.approx(multiscale_distance(a, b), rel=1e-6)


def test_ordering_silence_vs_attenuation(tone):
    a = tone(1.0, 440)
    quieter = a * 10 ** (-3 / 20)
    silent = np.zeros_like(a)
    for dist in (spectral_distance, multiscale_distance):
        far, near = dist(a, silent), dist(a, quieter)
        assert far[0] > near[0] and far[1] > near[1]


@dataclass
class FakeClip:
    samples: np.ndarray
    domain: str
    class_label: int


def test_passthrough_report_is_zero(tiny):
    clips = generate_corpus(1, default_classes(1.0), seed=9)[::4]
    rep = eval_reconstruction(clips, tiny[0], reconstruct=lambda x: x)
    assert rep.mel_distance == 0.0 and rep.stft_distance == 0.0
    assert set(rep.per_domain) == {"speech_like", "music_like", "general"}
    assert rep.kbps == pytest.approx(25 * (6 + 4) / 1000)   # K=2, N_s=64, N_a=16
    assert rep.tokens_per_second == 50
    assert rep.to_text().startswith("mel_distance=0.0000")
    assert rep.to_csv().splitlines()[0].startswith("scope,clips,mel_distance")


def test_real_report_is_positive(tiny):
    clips = generate_corpus(1, default_classes(1.0), seed=9)[:2]
    rep = eval_reconstruction(clips, tiny[0], seed=1)
    assert rep.mel_distance > 0 and np.isfinite(rep.stft_distance)


def test_stratified_split():
    labels = np.repeat(np.arange(4), 10)
    tr, te = stratified_split(labels, 0.2, seed=0)
    assert np.bincount(labels[te]).tolist() == [2, 2, 2, 2]
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(40))


def test_random_labels_near_chance():
    rng = np.random.default_rng(0)
    n, classes = 400, 4
    clips = [FakeClip(None, "general", int(c)) for c in rng.integers(0, classes, n)]
    res = probe_eval(clips, None, features=rng.normal(size=(n, 16)), seed=1)
    sigma = np.sqrt(0.25 * 0.75 / res.test_size)
    assert abs(res.accuracy - 0.25) <= 3 * sigma


def test_probe_needs_two_classes():
    clips = [FakeClip(None, "general", 1)] * 5
    with pytest.raises(ConfigurationError):
        probe_eval(clips, None, features=np.zeros((5, 3)))


def test_probe_leaves_codec_untouched(tiny, tmp_path):
    codec = tiny[0]
    save_checkpoint(tmp_path / "a.smcw", codec)
    clips = generate_corpus(3, [c for c in default_classes(1.0) if c.class_label >= 8], seed=2)
    for layer in ("semantic_only", "acoustic_only", "both"):
        res = probe_eval(clips, codec, layer)
        assert 0.0 <= res.accuracy <= 1.0 and res.classes == 4
    save_checkpoint(tmp_path / "b.smcw", codec)
    assert checkpoint_hash(tmp_path / "a.smcw") == checkpoint_hash(tmp_path / "b.smcw")
    f = clip_features(clips[:2], codec, "both")
    assert f.shape == (2, 2 * codec.config.stacked_dim)

from collections import Counter

import numpy as np
import pytest

from oracles import least_squares_classifier, mean_logmel
from semcodec.errors import ConfigurationError
from semcodec.synthcorpus import (CLASS_DOMAIN, CLASS_NAMES, ClipSpec, Domain, clip_seed,
                                  default_classes, generate_clip, generate_corpus, read_corpus,
                                  write_corpus)


def test_clip_determinism_and_length():
    spec = ClipSpec(Domain.MUSIC, 5, 2.56, seed=123)
    a, b = generate_clip(spec), generate_clip(spec)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.samples.size == 40960


@pytest.mark.parametrize("label", sorted(CLASS_NAMES))
def test_every_recipe_bounded(label):
    clip = generate_clip(ClipSpec(CLASS_DOMAIN[label], label, 0.7, seed=label))
    assert clip.samples.size == 11200
    assert np.all(np.isfinite(clip.samples))
    assert np.max(np.abs(clip.samples)) <= 1.0
    assert np.max(np.abs(clip.samples)) > 0.0


def test_unknown_class():
    with pytest.raises(ConfigurationError):
        ClipSpec(Domain.GENERAL, 42)
    with pytest.raises(ConfigurationError):
        ClipSpec(Domain.GENERAL, 8, duration_s=0.0)


def test_corpus_counts_and_domains():
    classes = [ClipSpec(CLASS_DOMAIN[c], c, 0.2) for c in (0, 4, 8, 9)]
    clips = generate_corpus(10, classes, seed=1)
    assert len(clips) == 40
    assert Counter(c.class_label for c in clips) == {0: 10, 4: 10, 8: 10, 9: 10}
    full = generate_corpus(2, default_classes(0.1), seed=0)
    hist = Counter(c.domain for c in full)
    assert hist == {Domain.SPEECH: 8, Domain.MUSIC: 8, Domain.GENERAL: 8}


def test_corpus_seed_rule_and_sensitivity():
    classes = [ClipSpec(Domain.GENERAL, 10, 0.3)]
    a = generate_corpus(3, classes, seed=5)
    assert [c.seed for c in a] == [clip_seed(5, 10, i) for i in range(3)]
    assert generate_corpus(3, classes, seed=5)[2].samples.tobytes() == a[2].samples.tobytes()
    b = generate_corpus(3, classes, seed=6)
    assert any(x.samples.tobytes() != y.samples.tobytes() for x, y in zip(a, b))


def test_corpus_errors():
    with pytest.raises(ConfigurationError):
        generate_corpus(3, [])
    with pytest.raises(ConfigurationError):
        generate_corpus(0)


def test_manifest_roundtrip(tmp_path):
    clips = generate_corpus(1, default_classes(0.1), seed=2)
    manifest = write_corpus(clips, tmp_path)
    lines = manifest.read_text().splitlines()
    assert len(lines) == 12
    name, domain, label = lines[9].split("\t")
    assert (domain, label) == ("general", "9")
    back = read_corpus(tmp_path)
    assert [c.class_label for c in back] == [c.class_label for c in clips]
    assert np.max(np.abs(back[3].samples - clips[3].samples)) <= 1 / 32768


def test_chirps_linearly_separable():
    classes = [ClipSpec(Domain.GENERAL, 8), ClipSpec(Domain.GENERAL, 9)]
    clips = generate_corpus(100, classes, seed=11)
    x = np.stack([mean_logmel(c.samples) for c in clips])
    y = np.array([c.class_label for c in clips])
    order = np.random.default_rng(0).permutation(y.size)
    tr, te = order[:100], order[100:]
    acc = np.mean(least_squares_classifier(x[tr], y[tr], x[te]) == y[te])
    assert acc >= 0.99

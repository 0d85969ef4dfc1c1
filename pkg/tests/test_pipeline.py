import math
from decimal import Decimal

import numpy as np
import pytest

from semcodec import bitstream
from semcodec.audio_io import Waveform
from semcodec.errors import ConfigurationError, EmptyInputError
from semcodec.pipeline import (CodecConfig, decode_file, encode_file, load_checkpoint, overlap_add,
                               pairs_for_duration, parse_config_text, plan_chunks, save_checkpoint,
                               train_codec, window_mel)


def ceil_pairs(seconds, K):
    # independent decimal arithmetic: ceil(seconds * (512 / K) / 10.24)
    return math.ceil(Decimal(str(seconds)) * Decimal(512) / K / Decimal("10.24"))


@pytest.mark.parametrize("seconds,K,expected", [(10.24, 1, 512), (5.0, 1, 250), (20.48, 1, 1024),
                                                (0.5, 2, 13), (2.56, 2, 64), (25.0, 4, 313)])
def test_pair_count_rule(seconds, K, expected):
    n = int(round(seconds * 16000))
    assert pairs_for_duration(n, K) == expected == ceil_pairs(seconds, K)


def test_config_geometry_and_text():
    desk = CodecConfig.desk()
    assert (desk.window_frames, desk.patches_per_window, desk.pairs_per_window) == (256, 128, 64)
    assert desk.stride_pairs == 60 and desk.samples_per_pair == 640
    paper = CodecConfig.paper()
    assert (paper.window_s, paper.pairs_per_window, paper.stride_pairs) == (10.24, 512, 480)
    assert paper.stride_pairs * paper.samples_per_pair == 153600   # 9.6 s
    assert CodecConfig.from_text(desk.to_text()) == desk
    assert parse_config_text("lr = 0.01  # comment\nacoustic_enabled = false\n") == {
        "lr": 0.01, "acoustic_enabled": False}
    with pytest.raises(ConfigurationError):
        parse_config_text("nonsense = 3")
    with pytest.raises(ConfigurationError):
        CodecConfig.desk(overlap_fraction=0.5)


def test_crossfade_gains_sum_to_one():
    for n in (1000, 40960, 123457, 400000):
        plan = plan_chunks(n, 40960, 38400)
        total = overlap_add([np.ones(40960)] * plan.count, plan)
        assert plan.total >= n
        assert np.all(total == 1.0)
    plan = plan_chunks(100000, 40960, 38400)
    g0, g1 = plan.gains(0), plan.gains(1)
    t = g1[:plan.overlap]
    assert np.all(np.diff(t) > 0) and np.all(g0[-plan.overlap:] == 1.0 - t)


def test_encode_lengths_and_header(tiny):
    codec = tiny[0]
    for seconds in (0.5, 2.56, 6.0):
        x = np.random.default_rng(0).normal(0, 0.1, int(seconds * 16000))
        pkt = encode_file(Waveform(x), codec)
        assert pkt.header.token_pairs == ceil_pairs(seconds, 2)
        assert pkt.header.original_sample_count == x.size
        assert pkt.header.semantic_vocab == 64 and pkt.header.acoustic_vocab == 16
    with pytest.raises(EmptyInputError):
        encode_file(Waveform(np.zeros(0)), codec)


def test_encode_never_runs_the_decoder(tiny, monkeypatch):
    codec = tiny[0]

    def boom(*a, **k):
        raise AssertionError("decoder invoked during encode")

    monkeypatch.setattr(type(codec.denoiser), "__call__", boom)
    monkeypatch.setattr(codec, "sample_mels", boom)
    encode_file(Waveform(np.ones(5000) * 0.1), codec)


@pytest.mark.parametrize("seconds", [0.5, 2.56, 7.3])
def test_decode_exact_length(tiny, seconds):
    codec = tiny[0]
    x = np.random.default_rng(1).normal(0, 0.1, int(round(seconds * 16000)))
    y = decode_file(encode_file(Waveform(x), codec), codec, seed=2)
    assert len(y) == x.size
    assert np.all(np.isfinite(y.samples))


def test_silent_packet_bounded(tiny):
    codec = tiny[0]
    y = decode_file(encode_file(Waveform(np.zeros(9000)), codec), codec, seed=0)
    assert len(y) == 9000 and np.all(np.isfinite(y.samples))


def test_decode_rejects_mismatched_packet(tiny):
    codec = tiny[0]
    h = bitstream.PacketHeader(4, 64, 16, 1, 640)
    with pytest.raises(ConfigurationError):
        decode_file(bitstream.pack([0], [0], h), codec)


def test_seam_has_no_discontinuity(tiny, tone):
    codec = tiny[0]
    x = tone(5.0, 500.0)
    mel = window_mel(x[:codec.config.window_samples])
    y = decode_file(encode_file(Waveform(x), codec), codec, seed=0,
                    mel_fn=lambda E: np.repeat(mel[None], E.shape[0], axis=0)).samples
    step = np.abs(np.diff(y))
    seam = codec.config.stride_pairs * codec.config.samples_per_pair
    ov = codec.config.window_samples - seam
    seam_rms = np.sqrt(np.mean(step[seam:seam + ov] ** 2))
    inner_rms = np.sqrt(np.mean(step[2000:seam - 2000] ** 2))
    assert seam_rms <= 2 * inner_rms


def test_checkpoint_roundtrip(tiny, tmp_path):
    codec = tiny[0]
    a, b = tmp_path / "a.smcw", tmp_path / "b.smcw"
    save_checkpoint(a, codec)
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.store.step == codec.store.step
    assert np.array_equal(loaded.vq.ema_sum, codec.vq.ema_sum)
    with pytest.raises(ConfigurationError):
        load_checkpoint(a, expected=codec.config.replace(embed_dim=32))
    with pytest.raises(bitstream.CorruptionError):
        data = bytearray(a.read_bytes())
        data[100] ^= 1
        b.write_bytes(bytes(data))
        load_checkpoint(b)


def test_resume_matches_uninterrupted(tmp_path):
    from conftest import build_tiny
    full, windows, val = build_tiny(steps=8)
    half, _, _ = build_tiny(steps=4)
    save_checkpoint(tmp_path / "h.smcw", half)
    resumed = load_checkpoint(tmp_path / "h.smcw")
    train_codec(resumed, windows, val, steps=4)
    assert resumed.store.step == 8
    for (n1, p1), (_, p2) in zip(full.store, resumed.store):
        assert np.array_equal(p1.data, p2.data), n1


def test_training_log_and_frozen_parts():
    from conftest import build_tiny
    codec, windows, val = build_tiny(steps=0)
    before = codec.digests()
    hist = train_codec(codec, windows, val, steps=20)
    assert codec.digests() == before
    logged = [h for h in hist if "recon" in h]
    assert len(logged) == 4
    assert set().union(*(h["sizes"] for h in logged)) == {8, 16, 32, 64}
    assert all(np.isfinite(h["recon"]) and h["recon"] >= 0 and h["commit"] >= 0 for h in logged)
    assert hist[0]["step"] == 0 and "val_loss" in hist[0]

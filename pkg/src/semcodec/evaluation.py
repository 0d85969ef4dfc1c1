"""Reconstruction metrics, reconstruction reports and the frozen-feature probe."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import bitstream
from .audio_io import SAMPLE_RATE, Waveform
from .errors import ConfigurationError, ShapeError
from .nn import tensor as T
from .nn.layers import Dense, ParamStore
from .nn.optim import adam_step
from .spectral import mel_filterbank, stft

SCALES = (512, 1024, 2048)
DIST_MELS = 64
LOG_FLOOR = 1e-5


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def _log_spectra(x: np.ndarray, n_fft: int):
    mag = np.abs(stft(x, n_fft, n_fft // 4))
    fb = mel_filterbank(n_fft, DIST_MELS, SAMPLE_RATE, 0.0, SAMPLE_RATE / 2)
    return np.log(np.maximum(mag, LOG_FLOOR)), np.log(np.maximum(mag @ fb.T, LOG_FLOOR))


def spectral_distance(a, b) -> tuple:
    """(mel_distance, stft_distance): mean L1 between log spectra, averaged over three window sizes."""
    a, b = _samples(a), _samples(b)
    if a.shape != b.shape:
        raise ShapeError(f"spectral_distance: lengths {a.shape[0]} and {b.shape[0]} differ")
    mel_d, lin_d = [], []
    for n_fft in SCALES:
        la, ma = _log_spectra(a, n_fft)
        lb, mb = _log_spectra(b, n_fft)
        lin_d.append(np.mean(np.abs(la - lb)))
        mel_d.append(np.mean(np.abs(ma - mb)))
    return float(np.mean(mel_d)), float(np.mean(lin_d))


# -- reconstruction report ---------------------------------------------------

@dataclass
class MetricReport:
    mel_distance: float
    stft_distance: float
    kbps: float
    tokens_per_second: float
    per_domain: dict = field(default_factory=dict)   # domain -> (mel, stft, n)
    per_clip: list = field(default_factory=list)     # (domain, label, mel, stft)

    def to_text(self) -> str:
        lines = [f"mel_distance={self.mel_distance:.4f}", f"stft_distance={self.stft_distance:.4f}",
                 f"kbps={self.kbps:.4f}", f"tokens_per_second={self.tokens_per_second:g}"]
        for d, (m, s, n) in sorted(self.per_domain.items()):
            lines.append(f"domain={d} clips={n} mel_distance={m:.4f} stft_distance={s:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scope", "clips", "mel_distance", "stft_distance", "kbps", "tokens_per_second"])
        w.writerow(["overall", len(self.per_clip), f"{self.mel_distance:.6f}",
                    f"{self.stft_distance:.6f}", f"{self.kbps:.6f}", f"{self.tokens_per_second:g}"])
        for d, (m, s, n) in sorted(self.per_domain.items()):
            w.writerow([d, n, f"{m:.6f}", f"{s:.6f}", f"{self.kbps:.6f}", f"{self.tokens_per_second:g}"])
        return buf.getvalue()


def eval_reconstruction(clips, codec, seed: int = 0, steps: int | None = None,
                        w: float | None = None, vocab: int | None = None,
                        reconstruct=None) -> MetricReport:
    """Encode and decode every clip, then aggregate distances per domain.

    ``reconstruct(samples) -> samples`` replaces the codec round trip (harness checks).
    """
    from .pipeline import decode_file, encode_file

    rows = []
    header = None
    for i, clip in enumerate(clips):
        x = np.asarray(clip.samples, dtype=np.float64)
        if reconstruct is not None:
            y = _samples(reconstruct(x))
        else:
            pkt = encode_file(Waveform(x), codec, vocab)
            header = pkt.header
            y = decode_file(pkt, codec, seed=seed + 1000 * i, steps=steps, w=w).samples
        m, s = spectral_distance(x, y)
        rows.append((getattr(clip.domain, "value", str(clip.domain)), clip.class_label, m, s))
    if not rows:
        raise ConfigurationError("no clips to evaluate")
    if header is None and codec is not None:
        c = codec.config
        header = bitstream.PacketHeader(c.stack_factor, vocab or c.semantic_vocab, c.acoustic_vocab, 0, 0)
    rate = bitstream.bitrate_report(header) if header is not None else {"kbps_total": 0.0,
                                                                        "tokens_per_second": 0.0}
    per = {}
    for d in sorted({r[0] for r in rows}):
        sel = [r for r in rows if r[0] == d]
        per[d] = (float(np.mean([r[2] for r in sel])), float(np.mean([r[3] for r in sel])), len(sel))
    return MetricReport(float(np.mean([r[2] for r in rows])), float(np.mean([r[3] for r in rows])),
                        rate["kbps_total"], rate["tokens_per_second"], per, rows)


# -- probe -------------------------------------------------------------------

LAYER_CONFIGS = ("semantic_only", "acoustic_only", "both")


@dataclass
class ProbeResult:
    layer_config: str
    accuracy: float
    classes: int
    train_size: int
    test_size: int


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0):
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = max(1, int(round(test_fraction * idx.size)))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(train), np.sort(test)


def clip_features(clips, codec, layer_config: str = "both", vocab: int | None = None) -> np.ndarray:
    """Time-averaged quantized features per clip from the frozen codec."""
    from .pipeline import split_windows

    if layer_config not in LAYER_CONFIGS:
        raise ConfigurationError(f"layer_config must be one of {LAYER_CONFIGS}")
    D = codec.config.stacked_dim
    out = []
    for clip in clips:
        rows = [codec.encode_window(w, vocab).features
                for w in split_windows(np.asarray(clip.samples, dtype=np.float64),
                                       codec.config.window_samples)]
        E = np.concatenate(rows).mean(axis=0)
        out.append({"semantic_only": E[:D], "acoustic_only": E[D:], "both": E}[layer_config])
    return np.stack(out)


def train_probe(x_train, y_train, x_test, y_test, hidden: int = 128, epochs: int = 300,
                lr: float = 1e-2, seed: int = 0) -> float:
    """Two linear layers with a tanh between them, full-batch Adam; returns test accuracy."""
    classes = np.unique(y_train)
    if classes.size < 2:
        raise ConfigurationError("probe needs at least two classes")
    mu, sd = x_train.mean(axis=0), x_train.std(axis=0) + 1e-8
    xtr, xte = (x_train - mu) / sd, (x_test - mu) / sd
    lookup = {c: i for i, c in enumerate(classes)}
    onehot = np.eye(classes.size)[[lookup[c] for c in y_train]]
    rng = np.random.default_rng(seed)
    store = ParamStore()
    l1 = Dense(store, "probe.l1", xtr.shape[1], hidden, "tanh", rng)
    l2 = Dense(store, "probe.l2", hidden, classes.size, rng=rng)
    for _ in range(epochs):
        store.zero_grad()
        p = T.softmax(l2(l1(xtr)), axis=-1)
        loss = T.mul(T.tsum(T.mul(onehot, T.log(p))), -1.0 / xtr.shape[0])
        loss.backward()
        adam_step(store, lr)
    with T.no_grad():
        pred = classes[np.argmax(l2(l1(xte)).data, axis=1)]
    return float(np.mean(pred == np.asarray(y_test)))


def probe_eval(clips, codec, layer_config: str = "both", vocab: int | None = None,
               seed: int = 0, features: np.ndarray | None = None) -> ProbeResult:
    """80/20 stratified split, frozen features, MLP probe. Codec parameters are only read."""
    labels = np.array([c.class_label for c in clips])
    if np.unique(labels).size < 2:
        raise ConfigurationError("probe needs at least two classes")
    x = features if features is not None else clip_features(clips, codec, layer_config, vocab)
    tr, te = stratified_split(labels, 0.2, seed)
    acc = train_probe(x[tr], labels[tr], x[te], labels[te], seed=seed)
    return ProbeResult(layer_config, acc, int(np.unique(labels).size), tr.size, te.size)

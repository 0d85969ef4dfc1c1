"""End-to-end codec: configuration, joint training, checkpoints and file encode/decode."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import bitstream
from .audio_io import SAMPLE_RATE, Waveform
from .clustering import (DOMAIN_TAGS, CodebookFamily, EnsembleCodebook, build_family,
                         nearest_centroid)
from .diffusion import (CFGConfig, Denoiser, LatentCoder, build_schedule, ddim_sample,
                        diffusion_loss)
from .errors import ConfigurationError, EmptyInputError, NumericError, StateError
from .features import SurrogateExtractor, stack
from .nn import checkpoint as ckpt
from .nn import tensor as T
from .nn.layers import ParamStore
from .nn.optim import adam_step
from .quantizers import (AcousticEncoder, AcousticVQ, EncoderOutput, acoustic_quantize,
                         ema_update, semantic_quantize, usage_fraction)
from .spectral import SpectralConfig, griffin_lim, patchify, waveform_to_logmel
from .synthcorpus import Domain

log = logging.getLogger(__name__)


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class CodecConfig:
    window_s: float = 2.56
    overlap_fraction: float = 0.0625
    embed_dim: int = 64
    stack_factor: int = 2
    semantic_base: int = 64
    semantic_vocab: int = 512
    acoustic_vocab: int = 512
    acoustic_enabled: bool = True
    acoustic_hidden: int = 128
    learnable_semantic_vq: bool = False
    ema_decay: float = 0.99
    schedule_steps: int = 1000
    sampler_steps: int = 50
    guidance: float = 3.0
    p_drop: float = 0.1
    cfg_literal: bool = False
    latent_block_t: int = 16
    latent_block_f: int = 8
    latent_dim: int = 8
    denoiser_hidden: int = 128
    denoiser_blocks: int = 2
    denoiser_heads: int = 4
    lr: float = 1e-3
    warmup_steps: int = 100
    batch_size: int = 8
    train_steps: int = 2000
    commit_weight: float = 1.0
    log_every: int = 50
    eval_every: int = 100
    griffin_lim_iters: int = 32
    kmeans_max_points: int = 20000
    kmeans_max_iters: int = 100
    extractor_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        frames = self.window_frames
        if abs(frames - self.window_s * 100) > 1e-9 or frames % 16:
            raise ConfigurationError("window must cover a whole number of 16-frame patch rows")
        if not 0.0 <= self.overlap_fraction < 0.5:
            raise ConfigurationError("overlap_fraction must lie in [0, 0.5)")
        if self.patches_per_window % self.stack_factor:
            raise ConfigurationError("patches per window not divisible by stack factor")
        stride = self.pairs_per_window * (1 - self.overlap_fraction)
        if abs(stride - round(stride)) > 1e-9:
            raise ConfigurationError("decode stride must be a whole number of token pairs")
        if self.window_s not in bitstream.WINDOW_CONFIGS.values():
            raise ConfigurationError(f"window_s must be one of {sorted(bitstream.WINDOW_CONFIGS.values())}")
        if self.semantic_vocab not in self.family_sizes and not self.learnable_semantic_vq:
            raise ConfigurationError(f"semantic_vocab {self.semantic_vocab} not in {self.family_sizes}")
        if not self.acoustic_enabled and self.acoustic_vocab != 1:
            raise ConfigurationError("acoustic_vocab must be 1 when the acoustic layer is disabled")
        CFGConfig(self.guidance, self.p_drop, self.cfg_literal)

    # derived geometry
    @property
    def window_frames(self) -> int:
        return int(round(self.window_s * 100))

    @property
    def window_samples(self) -> int:
        return self.window_frames * 160

    @property
    def patches_per_window(self) -> int:
        return (self.window_frames // 16) * (128 // 16)

    @property
    def pairs_per_window(self) -> int:
        return self.patches_per_window // self.stack_factor

    @property
    def stride_pairs(self) -> int:
        return int(round(self.pairs_per_window * (1 - self.overlap_fraction)))

    @property
    def samples_per_pair(self) -> int:
        return self.window_samples // self.pairs_per_window

    @property
    def stacked_dim(self) -> int:
        return self.stack_factor * self.embed_dim

    @property
    def family_sizes(self) -> list:
        return [self.semantic_base * m for m in (1, 2, 4, 8)]

    @property
    def window_config_id(self) -> int:
        return next(k for k, v in bitstream.WINDOW_CONFIGS.items() if v == self.window_s)

    @classmethod
    def desk(cls, **overrides) -> "CodecConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "CodecConfig":
        base = dict(window_s=10.24, stack_factor=1, semantic_base=4096, semantic_vocab=32768,
                    acoustic_vocab=8192, acoustic_hidden=0, lr=1e-4, warmup_steps=5000,
                    train_steps=200000)
        base.update(overrides)
        return cls(**base)

    def replace(self, **kw) -> "CodecConfig":
        return dataclasses.replace(self, **kw)

    # key = value text
    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n"
                       for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str, base: "CodecConfig | None" = None) -> "CodecConfig":
        kw = parse_config_text(text)
        return (base or cls()).replace(**kw)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(CodecConfig)}


def parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind in ("bool", bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def load_config(path, base: CodecConfig | None = None) -> CodecConfig:
    return CodecConfig.from_text(Path(path).read_text(), base)


# -- front end ---------------------------------------------------------------

SPECTRAL = SpectralConfig()


def window_mel(samples: np.ndarray) -> np.ndarray:
    return waveform_to_logmel(Waveform(np.asarray(samples, dtype=np.float64)), SPECTRAL).values


def split_windows(samples: np.ndarray, window: int) -> np.ndarray:
    """Non-overlapping windows; the last one is zero-padded."""
    n = samples.shape[0]
    if n == 0:
        raise EmptyInputError("no samples to encode")
    count = -(-n // window)
    out = np.zeros(count * window)
    out[:n] = samples
    return out.reshape(count, window)


# -- codec bundle ------------------------------------------------------------

class Codec:
    """All models needed to encode and decode, frozen parts included."""

    def __init__(self, config: CodecConfig, family: CodebookFamily | None, latent: LatentCoder,
                 extractor: SurrogateExtractor | None = None):
        c = config
        self.config = c
        self.extractor = extractor or SurrogateExtractor(256, c.embed_dim, c.extractor_seed)
        if self.extractor.embed_dim != c.embed_dim:
            raise ConfigurationError("extractor embed_dim does not match config")
        if family is not None and (family.stack_factor != c.stack_factor
                                   or family.embed_dim != c.embed_dim
                                   or family.sizes != c.family_sizes):
            raise ConfigurationError(
                f"codebook family (K={family.stack_factor}, E={family.embed_dim}, sizes "
                f"{family.sizes}) does not match config (K={c.stack_factor}, E={c.embed_dim}, "
                f"sizes {c.family_sizes})")
        self.family = family
        self.latent = latent
        D = c.stacked_dim
        self.store = ParamStore()
        self.encoder = (AcousticEncoder(self.store, D, c.acoustic_hidden or None, seed=c.seed + 1)
                        if c.acoustic_enabled else None)
        self.vq = AcousticVQ(c.acoustic_vocab, D, c.ema_decay, seed=c.seed + 2)
        if not c.acoustic_enabled:
            self.vq.reset(np.zeros((1, D)))
        self.semantic_vq = (AcousticVQ(c.semantic_vocab, D, c.ema_decay, seed=c.seed + 3)
                            if c.learnable_semantic_vq else None)
        tb, fb, dz = latent.latent_shape(c.window_frames, SPECTRAL.n_mels)
        self.latent_tokens, self.latent_width = tb, fb * dz
        self.denoiser = Denoiser(self.store, self.latent_width, 2 * D, c.denoiser_hidden,
                                 c.denoiser_blocks, c.denoiser_heads, seed=c.seed + 4,
                                 latent_tokens=tb, cond_rows=c.pairs_per_window)
        self.sched = build_schedule(c.schedule_steps)
        self.vq_ready = not c.acoustic_enabled
        self.history: list = []

    # frozen-part fingerprints
    def digests(self) -> dict:
        fam = hashlib.sha256(self.family.state_bytes() if self.family else b"").hexdigest()
        return {"extractor": hashlib.sha256(self.extractor.state_bytes()).hexdigest(),
                "family": fam, "latent": self.latent.digest()}

    def semantic_codebook(self, vocab: int | None = None):
        vocab = vocab or self.config.semantic_vocab
        if self.semantic_vq is not None:
            if vocab != self.semantic_vq.size:
                raise ConfigurationError(f"learned semantic codebook has {self.semantic_vq.size} entries")
            return self.semantic_vq.codebook
        if self.family is None:
            raise StateError("no semantic codebook family loaded")
        return self.family.get(vocab).centroids

    def stacked_features(self, window_samples: np.ndarray) -> np.ndarray:
        mel = window_mel(window_samples)
        return self._stacked_from_mel(mel)

    def _stacked_from_mel(self, mel: np.ndarray) -> np.ndarray:
        feats = self.extractor(patchify(mel, 16))
        return stack(feats, self.config.stack_factor).vectors

    def _acoustic(self, Y: np.ndarray, E_s: np.ndarray):
        """Batched (B, rows, D) -> (c_a, E_a) without gradients."""
        if self.encoder is None:
            return np.zeros(Y.shape[:2], dtype=np.int64), np.zeros_like(Y)
        with T.no_grad():
            Y_A = self.encoder(Y, E_s).data
        c_a, E_a = acoustic_quantize(Y_A.reshape(-1, Y.shape[-1]), self.vq)
        return c_a.reshape(Y.shape[:2]), E_a.reshape(Y.shape)

    def encode_window(self, window_samples: np.ndarray, vocab: int | None = None) -> EncoderOutput:
        Y = self.stacked_features(window_samples)
        return self.encode_features(Y, vocab)

    def encode_features(self, Y: np.ndarray, vocab: int | None = None) -> EncoderOutput:
        sq = semantic_quantize(Y, self.semantic_codebook(vocab))
        c_a, E_a = self._acoustic(Y[None], sq.features[None])
        return EncoderOutput(np.concatenate([sq.tokens, c_a[0]]),
                             np.concatenate([sq.features, E_a[0]], axis=1), sq, c_a[0])

    def condition(self, c_s, c_a, vocab: int | None = None) -> np.ndarray:
        """Condition rows [E_s | E_a] looked up from token indices."""
        E_s = self.semantic_codebook(vocab)[np.asarray(c_s)]
        E_a = self.vq.codebook[np.asarray(c_a)]
        return np.concatenate([E_s, E_a], axis=-1)

    def sample_mels(self, E: np.ndarray, seed: int, steps: int | None = None,
                    w: float | None = None, batch: int = 16) -> np.ndarray:
        """DDIM-sample mel windows for a batch of conditions (B, rows, 2D)."""
        c = self.config
        steps = steps or c.sampler_steps
        w = c.guidance if w is None else w
        outs = []
        for i in range(0, E.shape[0], batch):
            part = E[i:i + batch]
            z = ddim_sample(self.sched, steps, part, w, seed + i, self.denoiser, c.cfg_literal,
                            shape=(part.shape[0], self.latent_tokens, self.latent_width))
            outs.append(self.latent.decode(z.reshape(part.shape[0], self.latent_tokens, -1,
                                                     self.latent.d_z)))
        return np.concatenate(outs)


# -- corpus preparation ------------------------------------------------------

@dataclass
class WindowSet:
    Y: np.ndarray        # (W, rows, D) stacked features
    mel: np.ndarray      # (W, frames, mels)
    z0: np.ndarray       # (W, tb, width)
    labels: np.ndarray   # (W,) class label of the source clip
    domains: list


def prepare_windows(codec_or_config, clips, latent: LatentCoder | None = None,
                    extractor: SurrogateExtractor | None = None) -> WindowSet:
    if isinstance(codec_or_config, Codec):
        cfg, latent, extractor = codec_or_config.config, codec_or_config.latent, codec_or_config.extractor
    else:
        cfg = codec_or_config
        extractor = extractor or SurrogateExtractor(256, cfg.embed_dim, cfg.extractor_seed)
    Ys, mels, labels, domains = [], [], [], []
    for clip in clips:
        for win in split_windows(np.asarray(clip.samples, dtype=np.float64), cfg.window_samples):
            mel = window_mel(win)
            mels.append(mel)
            Ys.append(stack(extractor(patchify(mel, 16)), cfg.stack_factor).vectors)
            labels.append(clip.class_label)
            domains.append(Domain(clip.domain))
    mel = np.stack(mels)
    z0 = None
    if latent is not None and latent.fitted:
        z0 = latent.encode(mel).reshape(mel.shape[0], mel.shape[1] // latent.block_t, -1)
    return WindowSet(np.stack(Ys), mel, z0, np.array(labels), domains)


def fit_family(config: CodecConfig, windows: WindowSet) -> CodebookFamily:
    feats = {}
    for d in (Domain.GENERAL, Domain.SPEECH, Domain.MUSIC):
        sel = [i for i, x in enumerate(windows.domains) if x == d]
        feats[d] = windows.Y[sel].reshape(-1, config.stacked_dim)
    return build_family(feats, config.semantic_base, config.stack_factor, config.seed,
                        config.kmeans_max_points, config.kmeans_max_iters)


def fit_latent(config: CodecConfig, windows: WindowSet) -> LatentCoder:
    return LatentCoder(config.latent_block_t, config.latent_block_f, config.latent_dim).fit(windows.mel)


# -- training ----------------------------------------------------------------

def _validation_loss(codec: Codec, val: dict) -> float:
    E_s = val["E_s"]
    _, E_a = codec._acoustic(val["Y"], E_s)
    E = np.concatenate([E_s, E_a], axis=-1)
    with T.no_grad():
        loss = diffusion_loss(codec.denoiser, val["z0"], E, codec.sched, n=val["n"],
                              eps=val["eps"], keep=np.ones(E.shape[0]))
    return float(loss.data)


def _init_vq(codec: Codec, train: WindowSet, E_s: np.ndarray, seed: int) -> None:
    rng = np.random.default_rng([seed, 7])
    take = rng.permutation(train.Y.shape[0])[:64]
    with T.no_grad():
        Y_A = codec.encoder(train.Y[take], E_s[take]).data
    codec.vq.init_from_data(Y_A.reshape(-1, Y_A.shape[-1]), seed)
    codec.vq_ready = True


def train_codec(codec: Codec, train: WindowSet, val: WindowSet | None = None,
                steps: int | None = None, callback=None) -> list:
    """Jointly train acoustic encoder, EMA codebook and denoiser; returns the log.

    Each batch draws one semantic codebook size uniformly from the family.
    Step randomness is seeded by (seed, step), so a resumed run continues the
    same sequence.
    """
    c = codec.config
    if not codec.latent.fitted:
        raise StateError("latent coder must be fitted and frozen before codec training")
    if codec.family is None and codec.semantic_vq is None:
        raise StateError("semantic codebook family is missing")
    if train.z0 is None:
        raise StateError("training windows lack latents; prepare them with the fitted coder")
    steps = c.train_steps if steps is None else steps
    D = c.stacked_dim
    if codec.semantic_vq is not None:
        sizes = [c.semantic_vocab]
        if codec.store.step == 0 and not codec.history:
            codec.semantic_vq.init_from_data(train.Y.reshape(-1, D), c.seed)
        es_cache = None
    else:
        sizes = c.family_sizes
        es_cache = {s: codec.family.get(s).centroids[
            nearest_centroid(train.Y.reshape(-1, D), codec.family.get(s).centroids)[0]
        ].reshape(train.Y.shape) for s in sizes}
    if not codec.vq_ready:
        _init_vq(codec, train, es_cache[sizes[0]] if es_cache else train.Y, c.seed)

    vset = None
    if val is not None and val.z0 is not None:
        vrng = np.random.default_rng([c.seed, 99])
        nv = val.Y.shape[0]
        vset = {"Y": val.Y, "z0": val.z0, "eps": vrng.normal(size=val.z0.shape),
                "n": np.linspace(1, c.schedule_steps, nv).round().astype(np.int64),
                "E_s": codec.semantic_codebook()[
                    nearest_centroid(val.Y.reshape(-1, D), codec.semantic_codebook())[0]
                ].reshape(val.Y.shape)}
    start = codec.store.step
    if vset is not None and start == 0 and not any("val_loss" in h for h in codec.history):
        codec.history.append({"step": 0, "val_loss": _validation_loss(codec, vset)})

    acc = {"recon": [], "commit": [], "usage": [], "sizes": []}
    nw = train.Y.shape[0]
    B = min(c.batch_size, nw)
    for step in range(start + 1, start + steps + 1):
        rng = np.random.default_rng([c.seed, step])
        size = sizes[int(rng.integers(len(sizes)))]
        idx = rng.choice(nw, B, replace=False)
        Yb = train.Y[idx]
        codec.store.zero_grad()
        if codec.semantic_vq is not None:
            c_s, Esb = acoustic_quantize(Yb.reshape(-1, D), codec.semantic_vq)
            Esb = Esb.reshape(Yb.shape)
        else:
            Esb = es_cache[size][idx]
        commit = None
        if codec.encoder is not None:
            Y_A = codec.encoder(Yb, Esb)
            flat = Y_A.data.reshape(-1, D)
            c_a, E_a = acoustic_quantize(flat, codec.vq)
            E_a = E_a.reshape(Y_A.shape)
            commit = T.mul(T.sum_squares(Y_A, E_a), 1.0 / Y_A.data.size)
            E = T.concat([Esb, T.straight_through(Y_A, E_a)], axis=-1)
        else:
            E = np.concatenate([Esb, np.zeros_like(Esb)], axis=-1)
        recon = diffusion_loss(codec.denoiser, train.z0[idx], E, codec.sched, rng, p_drop=c.p_drop)
        total = recon if commit is None else T.add(recon, T.mul(commit, c.commit_weight))
        if not np.isfinite(total.data):
            raise NumericError(f"non-finite loss at step {step}")
        total.backward()
        adam_step(codec.store, c.lr, warmup_steps=c.warmup_steps)
        if codec.encoder is not None:
            ema_update(codec.vq, flat, c_a)
            acc["usage"].append(usage_fraction(c_a, codec.vq.size))
            acc["commit"].append(float(commit.data))
        if codec.semantic_vq is not None:
            ema_update(codec.semantic_vq, Yb.reshape(-1, D), c_s)
        acc["recon"].append(float(recon.data))
        acc["sizes"].append(size)
        if step % c.log_every == 0 or step == start + steps:
            entry = {"step": step, "recon": float(np.mean(acc["recon"])),
                     "commit": float(np.mean(acc["commit"])) if acc["commit"] else 0.0,
                     "usage": float(np.mean(acc["usage"])) if acc["usage"] else 0.0,
                     "sizes": sorted(set(acc["sizes"]))}
            if vset is not None and (step % c.eval_every == 0 or step == start + steps):
                entry["val_loss"] = _validation_loss(codec, vset)
            codec.history.append(entry)
            log.info("step %d recon %.4f commit %.4f usage %.3f", step, entry["recon"],
                     entry["commit"], entry["usage"])
            if callback is not None:
                callback(entry)
            acc = {"recon": [], "commit": [], "usage": [], "sizes": []}
    return codec.history


def validation_curve(history: list) -> list:
    return [(h["step"], h["val_loss"]) for h in history if "val_loss" in h]


# -- checkpoints -------------------------------------------------------------

ARCH_KEYS = ("window_s", "embed_dim", "stack_factor", "semantic_base", "acoustic_vocab",
             "acoustic_enabled", "acoustic_hidden", "learnable_semantic_vq", "latent_block_t",
             "latent_block_f", "latent_dim", "denoiser_hidden", "denoiser_blocks",
             "denoiser_heads", "schedule_steps", "extractor_seed")


def checkpoint_records(codec: Codec) -> "OrderedDict[str, object]":
    r = OrderedDict()
    r["config"] = codec.config.to_text()
    r["meta.step"] = np.array([codec.store.step], dtype=np.int64)
    r["meta.vq_ready"] = np.array([int(codec.vq_ready)], dtype=np.int64)
    r["meta.history"] = json.dumps(codec.history, sort_keys=True)
    for k, v in codec.digests().items():
        r[f"digest.{k}"] = v
    ex = codec.extractor
    r["extractor"] = np.array([ex.patch_dim, ex.embed_dim, ex.seed], dtype=np.int64)
    if codec.family is not None:
        fam = codec.family
        r["family.meta"] = np.array([fam.stack_factor, fam.embed_dim, len(fam.ensembles)],
                                    dtype=np.int64)
        for i, ens in enumerate(fam.ensembles):
            r[f"family.{i}.provenance"] = np.array(
                [[DOMAIN_TAGS[d], off, cnt] for d, off, cnt in ens.provenance], dtype=np.int64)
            r[f"family.{i}.centroids"] = ens.centroids
    for k, v in codec.latent.state().items():
        r[f"latent.{k}"] = v
    for name, p in codec.store:
        r[f"param.{name}"] = p.data
    for name, _ in codec.store:
        if name in codec.store.adam_m:
            r[f"adam_m.{name}"] = codec.store.adam_m[name]
            r[f"adam_v.{name}"] = codec.store.adam_v[name]
    for prefix, vq in (("vq", codec.vq), ("svq", codec.semantic_vq)):
        if vq is not None:
            r[f"{prefix}.codebook"] = vq.codebook
            r[f"{prefix}.ema_size"] = vq.ema_size
            r[f"{prefix}.ema_sum"] = vq.ema_sum
    return r


def save_checkpoint(path, codec: Codec) -> None:
    ckpt.save(path, checkpoint_records(codec))


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def codec_from_records(r, expected: CodecConfig | None = None) -> Codec:
    cfg = CodecConfig.from_text(r["config"])
    if expected is not None:
        bad = [k for k in ARCH_KEYS if getattr(expected, k) != getattr(cfg, k)]
        if bad:
            raise ConfigurationError(
                "checkpoint does not match the requested config: "
                + ", ".join(f"{k}={getattr(cfg, k)} (wanted {getattr(expected, k)})" for k in bad))
    patch_dim, embed_dim, ex_seed = (int(v) for v in r["extractor"])
    extractor = SurrogateExtractor(patch_dim, embed_dim, ex_seed)
    family = None
    if "family.meta" in r:
        tags = {v: k for k, v in DOMAIN_TAGS.items()}
        K, E, n = (int(v) for v in r["family.meta"])
        ens = []
        for i in range(n):
            prov = [(tags[int(t)], int(o), int(c)) for t, o, c in r[f"family.{i}.provenance"]]
            ens.append(EnsembleCodebook(r[f"family.{i}.centroids"], prov))
        family = CodebookFamily(ens, K, E)
    latent = LatentCoder.from_state({k[7:]: v for k, v in r.items() if k.startswith("latent.")})
    codec = Codec(cfg, family, latent, extractor)
    for name, p in codec.store:
        key = f"param.{name}"
        if key not in r or r[key].shape != p.data.shape:
            raise ConfigurationError(f"checkpoint parameter {name} missing or misshapen")
        p.data = r[key]
        if f"adam_m.{name}" in r:
            codec.store.adam_m[name] = r[f"adam_m.{name}"]
            codec.store.adam_v[name] = r[f"adam_v.{name}"]
    codec.store.step = int(r["meta.step"][0])
    codec.vq_ready = bool(r["meta.vq_ready"][0])
    codec.history = json.loads(r["meta.history"])
    for prefix, vq in (("vq", codec.vq), ("svq", codec.semantic_vq)):
        if vq is not None:
            vq.codebook = r[f"{prefix}.codebook"]
            vq.ema_size = r[f"{prefix}.ema_size"]
            vq.ema_sum = r[f"{prefix}.ema_sum"]
    for k, v in codec.digests().items():
        if r.get(f"digest.{k}") != v:
            raise ConfigurationError(f"checkpoint {k} fingerprint mismatch")
    return codec


def load_checkpoint(path, expected: CodecConfig | None = None) -> Codec:
    return codec_from_records(ckpt.load(path), expected)


# -- file encode / decode ----------------------------------------------------

def pairs_for_duration(n_samples: int, stack_factor: int) -> int:
    """``ceil(duration * pairs_per_second)`` in exact arithmetic."""
    return math.ceil(Fraction(n_samples, SAMPLE_RATE) * bitstream.pairs_per_second(stack_factor))


def encode_file(wav: Waveform, codec: Codec, vocab: int | None = None) -> bitstream.CodecPacket:
    c = codec.config
    vocab = vocab or c.semantic_vocab
    samples = np.asarray(wav.samples if isinstance(wav, Waveform) else wav, dtype=np.float64)
    if samples.size == 0:
        raise EmptyInputError("cannot encode empty audio")
    c_s, c_a = [], []
    for win in split_windows(samples, c.window_samples):
        out = codec.encode_window(win, vocab)
        c_s.append(out.semantic_tokens)
        c_a.append(out.acoustic_tokens)
    keep = min(pairs_for_duration(samples.size, c.stack_factor), sum(len(x) for x in c_s))
    header = bitstream.PacketHeader(c.stack_factor, vocab, c.acoustic_vocab, keep, samples.size,
                                     c.window_config_id)
    return bitstream.pack(np.concatenate(c_s)[:keep], np.concatenate(c_a)[:keep], header)


@dataclass
class ChunkPlan:
    starts: np.ndarray     # window start sample
    window: int
    overlap: int
    total: int             # samples covered

    @property
    def count(self) -> int:
        return len(self.starts)

    def gains(self, j: int) -> np.ndarray:
        """Crossfade gain of window ``j``: rising over the leading overlap, falling over the trailing one."""
        g = np.ones(self.window)
        if self.overlap:
            t = (np.arange(self.overlap) + 0.5) / self.overlap
            if j > 0:
                g[:self.overlap] = t
            if j < self.count - 1:
                g[-self.overlap:] = 1.0 - t
        return g


def plan_chunks(n_samples: int, window: int, stride: int) -> ChunkPlan:
    count = 1 if n_samples <= window else 1 + -(-(n_samples - window) // stride)
    starts = np.arange(count) * stride
    return ChunkPlan(starts, window, window - stride, int(starts[-1] + window))


def overlap_add(chunks, plan: ChunkPlan) -> np.ndarray:
    out = np.zeros(plan.total)
    for j, (s, x) in enumerate(zip(plan.starts, chunks)):
        out[s:s + plan.window] += plan.gains(j) * x
    return out


def decode_file(packet, codec: Codec, seed: int = 0, steps: int | None = None,
                w: float | None = None, mel_fn=None) -> Waveform:
    """Decode a packet (bytes or :class:`CodecPacket`) to exactly the original length.

    ``mel_fn`` replaces the diffusion sampler (tests use it to isolate stitching).
    """
    c = codec.config
    data = packet.to_bytes() if isinstance(packet, bitstream.CodecPacket) else packet
    header, c_s, c_a = bitstream.unpack(data)
    if header.stack_factor != c.stack_factor:
        raise ConfigurationError(f"packet stack factor {header.stack_factor} != model {c.stack_factor}")
    if header.acoustic_vocab != codec.vq.size:
        raise ConfigurationError(f"packet acoustic vocab {header.acoustic_vocab} != model {codec.vq.size}")
    if bitstream.WINDOW_CONFIGS.get(header.window_config) != c.window_s:
        raise ConfigurationError(f"packet window config {header.window_config} does not match model")
    codec.semantic_codebook(header.semantic_vocab)
    n = header.original_sample_count
    if n == 0 or header.token_pairs == 0:
        return Waveform(np.zeros(n))
    P, stride = c.pairs_per_window, c.stride_pairs
    plan = plan_chunks(n, c.window_samples, stride * c.samples_per_pair)
    need = (plan.count - 1) * stride + P
    pad = max(0, need - c_s.size)
    c_s = np.concatenate([c_s, np.repeat(c_s[-1:], pad)])
    c_a = np.concatenate([c_a, np.repeat(c_a[-1:], pad)])
    E = np.stack([codec.condition(c_s[j * stride:j * stride + P], c_a[j * stride:j * stride + P],
                                  header.semantic_vocab) for j in range(plan.count)])
    mels = mel_fn(E) if mel_fn is not None else codec.sample_mels(E, seed, steps, w)
    chunks = [griffin_lim(m, c.griffin_lim_iters, seed + j, SPECTRAL).samples for j, m in enumerate(mels)]
    chunks = [np.pad(x, (0, max(0, c.window_samples - x.size)))[:c.window_samples] for x in chunks]
    return Waveform(overlap_add(chunks, plan)[:n])

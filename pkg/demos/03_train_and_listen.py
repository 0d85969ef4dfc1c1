"""Short end-to-end run: train a small codec, encode a clip, decode it, compare.

A few hundred steps are enough to see the validation loss fall; quality keeps
improving with longer runs (the acceptance test trains for 2000 steps).

Run: python3 demos/03_train_and_listen.py [steps] [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from semcodec.audio_io import Waveform, write_wav
from semcodec.evaluation import spectral_distance
from semcodec.pipeline import (Codec, CodecConfig, decode_file, encode_file, fit_family,
                               fit_latent, prepare_windows, train_codec, validation_curve)
from semcodec.synthcorpus import generate_corpus

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(exist_ok=True)

cfg = CodecConfig.desk(train_steps=steps, eval_every=max(1, steps // 5))
train_clips = generate_corpus(20, seed=0)
windows = prepare_windows(cfg, train_clips)
codec = Codec(cfg, fit_family(cfg, windows), fit_latent(cfg, windows))
train_codec(codec, prepare_windows(codec, train_clips),
            prepare_windows(codec, generate_corpus(2, seed=1)))
for step, loss in validation_curve(codec.history):
    print(f"step {step:5d}  val loss {loss:.4f}")

clip = generate_corpus(1, seed=2)[0]
packet = encode_file(Waveform(clip.samples), codec)
print("packet bytes:", len(packet.to_bytes()), "header:", packet.header)
y = decode_file(packet, codec, seed=0)
write_wav(out / "original.wav", Waveform(clip.samples))
write_wav(out / "decoded.wav", y)
print("spectral distance (mel, multiscale):", spectral_distance(clip.samples, y))
print("wrote", out / "original.wav", "and", out / "decoded.wav")

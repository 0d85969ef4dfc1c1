import numpy as np
import pytest

from semcodec.pipeline import Codec, CodecConfig, fit_family, fit_latent, prepare_windows, train_codec
from semcodec.synthcorpus import default_classes, generate_corpus

TINY = dict(semantic_base=8, semantic_vocab=64, acoustic_vocab=16, acoustic_hidden=16,
            denoiser_hidden=32, denoiser_blocks=1, denoiser_heads=2, schedule_steps=100,
            sampler_steps=4, griffin_lim_iters=4, batch_size=4, log_every=5, eval_every=5,
            warmup_steps=5, kmeans_max_iters=20)


def build_tiny(steps=10, **overrides):
    cfg = CodecConfig.desk(**{**TINY, **overrides})
    clips = generate_corpus(2, default_classes(2.56), seed=3)
    windows = prepare_windows(cfg, clips)
    codec = Codec(cfg, fit_family(cfg, windows), fit_latent(cfg, windows))
    windows = prepare_windows(codec, clips)
    val = prepare_windows(codec, generate_corpus(1, default_classes(2.56), seed=4))
    if steps:
        train_codec(codec, windows, val, steps=steps)
    return codec, windows, val


@pytest.fixture(scope="session")
def tiny():
    """A small trained codec plus its training and validation windows."""
    return build_tiny()


@pytest.fixture
def tone():
    def make(seconds, freq=440.0, amp=0.3):
        t = np.arange(int(round(seconds * 16000))) / 16000
        return amp * np.sin(2 * np.pi * freq * t)
    return make


ACCEPTANCE = {}


def record(n, ok, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

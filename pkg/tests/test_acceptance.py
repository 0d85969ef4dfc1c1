"""One test per acceptance criterion; each prints a PASS/FAIL line in the summary."""
import time

import numpy as np
import pytest

import gradcases
from conftest import record
from oracles import least_squares_classifier, mean_logmel
from semcodec.bitstream import PacketHeader, bitrate_report, pack, unpack
from semcodec.clustering import kmeans_fit
from semcodec.diffusion import (build_schedule, ddim_sample, forward_diffuse, predict_eps,
                                predict_z0, v_target)
from semcodec.errors import FormatError
from semcodec.evaluation import eval_reconstruction, probe_eval
from semcodec.nn.layers import ParamStore
from semcodec.pipeline import (Codec, CodecConfig, decode_file, encode_file, fit_family,
                               fit_latent, overlap_add, plan_chunks, prepare_windows, train_codec,
                               validation_curve)
from semcodec.quantizers import AcousticVQ, acoustic_quantize, semantic_quantize
from semcodec.audio_io import Waveform
from semcodec.synthcorpus import ClipSpec, Domain, default_classes, generate_corpus
from table_one import ROWS

SEED = 0
TRAIN_PER_CLASS = 40
HELD_OUT_PER_CLASS = 2


def exact_nearest(x, c, chunk=500):
    """Exhaustive squared differences, first minimum wins."""
    out = []
    for s in range(0, len(x), chunk):
        d = ((x[s:s + chunk, None, :] - c[None, :, :]) ** 2).sum(-1)
        out.append(np.argmin(d, axis=1))
    return np.concatenate(out)


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_bitrate_table():
    t = time.perf_counter()
    bad = []
    for tps, K, ns, na, sem, aco, total in ROWS:
        r = bitrate_report(PacketHeader(K, ns, na, 0, 0))
        got = (r["tokens_per_second"], r["kbps_semantic"], r["kbps_acoustic"], r["kbps_total"])
        if got != (tps, float(sem), float(aco), float(total)):
            bad.append((K, ns, got))
    dt = time.perf_counter() - t
    ok = not bad and dt < 1.0
    record(1, ok, ("12/12 rows exact" if not bad else f"mismatches {bad}") + f", {dt:.3f}s")
    assert ok, bad


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_bitstream_integrity():
    t = time.perf_counter()
    rng = np.random.default_rng(SEED)
    fails = undetected = 0
    for _, K, ns, na, *_ in ROWS:
        for _ in range(1000):
            pairs = int(rng.integers(1, 65))
            c_s, c_a = rng.integers(0, ns, pairs), rng.integers(0, na, pairs)
            h = PacketHeader(K, ns, na, pairs, pairs * 320 * K)
            data = pack(c_s, c_a, h).to_bytes()
            h2, s2, a2 = unpack(data)
            fails += not (h2 == h and np.array_equal(s2, c_s) and np.array_equal(a2, c_a))
            bit = int(rng.integers(8 * len(data)))
            bad = bytearray(data)
            bad[bit // 8] ^= 1 << (bit % 8)
            try:
                unpack(bytes(bad))
                undetected += 1
            except FormatError:
                pass
    dt = time.perf_counter() - t
    ok = fails == 0 and undetected == 0 and dt < 10
    record(2, ok, f"12000 roundtrips, {fails} failures, {undetected} undetected flips, {dt:.1f}s")
    assert ok


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_quantizer_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for n in (16, 32, 64, 128, 256, 512):
        cb = rng.normal(size=(n, 16))
        cb[n // 2] = cb[1]   # a duplicated codeword: ties must go to the lower index
        x = rng.normal(size=(10000, 16))
        x[:50] = cb[rng.integers(0, n, 50)]   # exact hits
        want = exact_nearest(x, cb)
        sq = semantic_quantize(x, cb)
        vq = AcousticVQ(n, 16, codebook=cb)
        ca, ea = acoustic_quantize(x, vq)
        mismatches += int(np.sum(sq.tokens != want) + np.sum(ca != want))
        mismatches += int(not np.array_equal(ea, cb[want]) or not np.array_equal(sq.features, cb[want]))
    dt = time.perf_counter() - t
    ok = mismatches == 0 and dt < 30
    record(3, ok, f"6 codebook sizes x 1e4 vectors, {mismatches} mismatches, {dt:.1f}s")
    assert ok


# -- 4 -----------------------------------------------------------------------

def test_criterion_4_kmeans():
    t = time.perf_counter()
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(300, 4)) + rng.integers(0, 3, (300, 1)) * 2.0
        h = kmeans_fit(x, 8, seed=seed).inertia_history
        violations += sum(b > a for a, b in zip(h, h[1:]))
    cb = kmeans_fit(np.array([[0.0], [0.1], [10.0], [10.1]]), 2, seed=0)
    cents = sorted(cb.centroids[:, 0].tolist())
    dt = time.perf_counter() - t
    ok = violations == 0 and cents == [0.05, 10.05] and dt < 10
    record(4, ok, f"50 runs, {violations} inertia increases; centroids {cents}; {dt:.1f}s")
    assert ok


# -- 5 -----------------------------------------------------------------------

def test_criterion_5_gradients():
    t = time.perf_counter()
    errs = {**gradcases.max_errors(gradcases.op_cases(1)), **gradcases.max_errors(gradcases.layer_cases(1))}
    worst = max(errs, key=errs.get)
    dt = time.perf_counter() - t
    ok = errs[worst] <= 1e-4 and dt < 60
    record(5, ok, f"{len(errs)} ops/layers, worst {worst} {errs[worst]:.2e}, {dt:.1f}s")
    assert ok, errs


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_diffusion_math():
    t = time.perf_counter()
    sched = build_schedule(1000)
    ab = sched.alpha_bar
    sched_ok = ab[-1] == 0.0 and bool(np.all(np.diff(ab) < 0))
    rng = np.random.default_rng(SEED)
    n = np.arange(1001)
    z0, eps = rng.normal(size=(1001, 32)), rng.normal(size=(1001, 32))
    zn = forward_diffuse(z0, n, eps, sched)
    v = v_target(z0, eps, n, sched)
    ident = max(np.max(np.abs(predict_z0(zn, v, n, sched) - z0)),
                np.max(np.abs(predict_eps(zn, v, n, sched) - eps)))

    from semcodec.diffusion import Denoiser
    den = Denoiser(ParamStore(), 16, 8, hidden=32, blocks=2, heads=4, seed=1,
                   latent_tokens=4, cond_rows=8)
    E = rng.normal(size=(2, 8, 8))
    runs = [ddim_sample(sched, 25, E, 3.0, 7, den).tobytes() for _ in range(2)]
    determ = runs[0] == runs[1]

    per_step = []

    def spy(z, steps, E_, keep):
        out = den(z, steps, E_, keep).data
        cond = den(z, steps, E_, np.ones_like(keep)).data
        per_step.append(np.array_equal(out, cond))
        return out

    a = ddim_sample(sched, 10, E, 1.0, 3, spy, shape=(2, 4, 16))
    b = ddim_sample(sched, 10, E, 1.0, 3, den)
    cfg_ok = all(per_step) and a.tobytes() == b.tobytes()
    dt = time.perf_counter() - t
    ok = sched_ok and ident <= 1e-6 and determ and cfg_ok and dt < 30
    record(6, ok, f"schedule {'ok' if sched_ok else 'BAD'}, identity err {ident:.1e}, "
                  f"DDIM repeat {'identical' if determ else 'DIFFERENT'}, w=1 conditional "
                  f"{'exact' if cfg_ok else 'BAD'}, {dt:.1f}s")
    assert ok


# -- shared desk-scale runs --------------------------------------------------

@pytest.fixture(scope="session")
def desk():
    """Frozen parts fitted once; corpus splits used by criteria 7, 8, 9 and 10."""
    t = time.perf_counter()
    cfg = CodecConfig.desk(seed=SEED)
    train_clips = generate_corpus(TRAIN_PER_CLASS, seed=SEED)
    val_clips = generate_corpus(3, seed=SEED + 1)
    held_out = generate_corpus(HELD_OUT_PER_CLASS, seed=SEED + 2)
    windows = prepare_windows(cfg, train_clips)
    family = fit_family(cfg, windows)
    latent = fit_latent(cfg, windows)
    return {"cfg": cfg, "family": family, "latent": latent, "train_clips": train_clips,
            "val_clips": val_clips, "held_out": held_out, "setup_s": time.perf_counter() - t}


def _train(desk, cfg):
    t = time.perf_counter()
    codec = Codec(cfg, desk["family"], desk["latent"])
    frozen_before = {
        "extractor": codec.extractor.state_bytes(),
        "family": codec.family.state_bytes(),
        "latent": b"".join(np.ascontiguousarray(v).tobytes() for v in codec.latent.state().values()),
    }
    probe_patches = np.random.default_rng(123).normal(-6, 3, size=(32, 256))
    frozen_before["extractor_output"] = codec.extractor(probe_patches).vectors.tobytes()
    train = prepare_windows(codec, desk["train_clips"])
    val = prepare_windows(codec, desk["val_clips"])
    train_codec(codec, train, val, steps=cfg.train_steps)
    frozen_after = {
        "extractor": codec.extractor.state_bytes(),
        "family": codec.family.state_bytes(),
        "latent": b"".join(np.ascontiguousarray(v).tobytes() for v in codec.latent.state().values()),
        "extractor_output": codec.extractor(probe_patches).vectors.tobytes(),
    }
    return {"codec": codec, "before": frozen_before, "after": frozen_after,
            "train_s": time.perf_counter() - t}


@pytest.fixture(scope="session")
def full_run(desk):
    return _train(desk, desk["cfg"])


@pytest.fixture(scope="session")
def semantic_only_run(desk):
    return _train(desk, desk["cfg"].replace(acoustic_enabled=False, acoustic_vocab=1))


@pytest.fixture(scope="session")
def full_report(desk, full_run):
    t = time.perf_counter()
    rep = eval_reconstruction(desk["held_out"], full_run["codec"], seed=SEED)
    return rep, time.perf_counter() - t


# -- 7 -----------------------------------------------------------------------

def test_criterion_7_desk_training(desk, full_run, full_report):
    codec = full_run["codec"]
    curve = validation_curve(codec.history)
    initial = curve[0][1]
    final = float(np.mean([v for _, v in curve[-3:]]))
    drop = 1 - final / initial
    t = time.perf_counter()
    untrained = Codec(desk["cfg"], desk["family"], desk["latent"])
    base = eval_reconstruction(desk["held_out"], untrained, seed=SEED)
    trained, eval_s = full_report
    runtime = desk["setup_s"] + full_run["train_s"] + eval_s + (time.perf_counter() - t)
    ok = drop >= 0.30 and trained.mel_distance < base.mel_distance and runtime <= 1800
    record(7, ok, f"val loss {initial:.3f} -> {final:.3f} ({100 * drop:.0f}% drop); mel_distance "
                  f"trained {trained.mel_distance:.3f} vs untrained {base.mel_distance:.3f}; "
                  f"{runtime / 60:.1f} min")
    assert drop >= 0.30
    assert trained.mel_distance < base.mel_distance
    assert runtime <= 1800


# -- 8 -----------------------------------------------------------------------

def test_criterion_8_semantic_layer(desk, full_run, semantic_only_run, full_report):
    t = time.perf_counter()
    codec = full_run["codec"]
    probe_clips = generate_corpus(20, seed=SEED + 5)
    sem = probe_eval(probe_clips, codec, "semantic_only", seed=SEED)
    both = probe_eval(probe_clips, codec, "both", seed=SEED)

    # the 4-class set: separability is established by an independent linear oracle first
    four = [ClipSpec(Domain.GENERAL, c) for c in (8, 9, 10, 11)]
    sep_clips = generate_corpus(40, four, seed=SEED + 6)
    x = np.stack([mean_logmel(c.samples) for c in sep_clips])
    y = np.array([c.class_label for c in sep_clips])
    order = np.random.default_rng(SEED).permutation(y.size)
    half = y.size // 2
    oracle_acc = float(np.mean(least_squares_classifier(x[order[:half]], y[order[:half]],
                                                        x[order[half:]]) == y[order[half:]]))
    sep = probe_eval(sep_clips, codec, "semantic_only", seed=SEED)

    rep_full, _ = full_report
    rep_sem = eval_reconstruction(desk["held_out"], semantic_only_run["codec"], seed=SEED)
    degradation = rep_sem.mel_distance / rep_full.mel_distance - 1
    runtime = semantic_only_run["train_s"] + time.perf_counter() - t
    checks = (sem.accuracy >= 0.9 * both.accuracy, oracle_acc >= 0.99, sep.accuracy >= 0.90,
              degradation >= 0.20, runtime <= 900)
    record(8, all(checks),
           f"probe semantic {sem.accuracy:.3f} vs both {both.accuracy:.3f}; separable set oracle "
           f"{oracle_acc:.2f}, semantic probe {sep.accuracy:.3f}; no-acoustic mel_distance "
           f"{rep_sem.mel_distance:.3f} vs {rep_full.mel_distance:.3f} (+{100 * degradation:.0f}%); "
           f"{runtime / 60:.1f} min")
    assert sem.accuracy >= 0.9 * both.accuracy
    assert oracle_acc >= 0.99 and sep.accuracy >= 0.90
    assert degradation >= 0.20
    assert runtime <= 900


# -- 9 -----------------------------------------------------------------------

def test_criterion_9_lengths_and_stitching(full_run):
    t = time.perf_counter()
    codec = full_run["codec"]
    c = codec.config
    rng = np.random.default_rng(SEED)
    lengths, gains_ok = [], True
    for seconds in (0.5, 5.0, 10.24, 20.48, 25.0):
        n = int(round(seconds * 16000))
        x = 0.1 * rng.normal(size=n)
        y = decode_file(encode_file(Waveform(x), codec), codec, seed=SEED)
        lengths.append((n, len(y)))
        plan = plan_chunks(n, c.window_samples, c.stride_pairs * c.samples_per_pair)
        total = overlap_add([np.ones(c.window_samples)] * plan.count, plan)[:n]
        gains_ok &= bool(np.all(total == 1.0))
    dt = time.perf_counter() - t
    ok = all(a == b for a, b in lengths) and gains_ok and dt < 300
    record(9, ok, f"lengths {[b for _, b in lengths]} for {[a for a, _ in lengths]}; gains sum "
                  f"{'to 1 everywhere' if gains_ok else 'WRONG'}; {dt:.1f}s")
    assert ok


# -- 10 ----------------------------------------------------------------------

def test_criterion_10_frozenness(full_run):
    same = {k: full_run["before"][k] == full_run["after"][k] for k in full_run["before"]}
    ok = all(same.values())
    record(10, ok, ", ".join(f"{k} {'identical' if v else 'CHANGED'}" for k, v in same.items()))
    assert ok

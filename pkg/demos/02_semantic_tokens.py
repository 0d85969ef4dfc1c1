"""Semantic tokens from a frozen extractor and a k-means codebook family.

Fits the four nested codebook sizes on a small synthetic corpus, then shows how
often the three domains' centroids are picked for clips of each domain.

Run: python3 demos/02_semantic_tokens.py
"""
import numpy as np

from semcodec.pipeline import CodecConfig, fit_family, prepare_windows
from semcodec.quantizers import semantic_quantize
from semcodec.synthcorpus import generate_corpus

cfg = CodecConfig.desk(kmeans_max_iters=30)
clips = generate_corpus(8, seed=0)
windows = prepare_windows(cfg, clips)
family = fit_family(cfg, windows)

for n in cfg.family_sizes:
    ens = family.get(n)
    print(f"N_s={n}: parts", [(d.name, count) for d, _, count in ens.provenance])

ens = family.get(cfg.semantic_vocab)
tokens = np.stack([semantic_quantize(y, ens).tokens for y in windows.Y])
owner = np.array([ens.domain_of(i).name for i in range(ens.size)])
for dom in sorted({c.domain.name for c in clips}):
    rows = [i for i, c in enumerate(clips) if c.domain.name == dom]
    picked = owner[tokens[rows].ravel()]
    share = {str(d): round(float(np.mean(picked == d)), 2) for d in sorted(set(owner))}
    print(f"{dom:8s} clips pick centroids from {share}")

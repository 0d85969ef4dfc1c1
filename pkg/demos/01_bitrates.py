"""Bitrate arithmetic: how stacking and vocabulary size set the cost of a stream.

Run: python3 demos/01_bitrates.py
"""
from semcodec.bitstream import PacketHeader, bitrate_report

print(f"{'K':>2} {'N_s':>6} {'N_a':>6} {'tok/s':>6} {'kbps':>7}")
for K in (1, 2, 4):
    for n in (1024, 16384):
        r = bitrate_report(PacketHeader(K, n, n, 0, 0))
        print(f"{K:>2} {n:>6} {n:>6} {r['tokens_per_second']:>6g} {r['kbps_total']:>7.4f}")

# dropping the acoustic layer: a vocabulary of one costs nothing
r = bitrate_report(PacketHeader(2, 512, 1, 0, 0))
print("semantic only, K=2, N_s=512:", r)

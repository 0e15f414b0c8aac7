#!/usr/bin/env python3
"""Why the FFT path matters: wall-clock scaling of three sequence mixers.

Benchmarks direct O(N^2) convolution, the FFT-based structured global
convolution, and windowed attention at doubling sequence lengths. Doubling
the input should roughly quadruple the direct path but only ~double the FFT
path; the parameter count of the structured kernel grows logarithmically.
"""

import numpy as np

from codebrain.ssm import bench_backbones, sgconv_param_count

sizes = [1 << p for p in range(10, 15)]
rows = bench_backbones(sizes, features=1, base=16, repeats=3, attention_max_len=1 << 12)

print(f"{'backbone':>12} {'seq_len':>8} {'params':>7} {'wall_ms':>9}")
for r in rows:
    print(f"{r.backbone:>12} {r.seq_len:>8} {r.params:>7} {r.wall_ms:>9.2f}")

by = {(r.backbone, r.seq_len): r.wall_ms for r in rows}
print("\ntime ratios t(2L)/t(L):")
for name in ("direct_conv", "sgconv"):
    ratios = [by[(name, 2 * L)] / by[(name, L)] for L in sizes[:-1] if (name, 2 * L) in by]
    print(f"  {name:>12}: " + "  ".join(f"{r:.2f}" for r in ratios))

print("\nstructured-kernel parameters (d=16):")
for L in sizes:
    print(f"  L={L:>6}: {sgconv_param_count(1, L, 16):>3} "
          f"(= 16 x {int(np.log2(L // 16)) + 1} sub-kernels)")

"""Benchmark the compiled kernels against the pure-numpy fallback.

Times im2col/col2im on the shapes the training loop actually runs, plus
one full generator forward+backward per backend, and verifies along the
way that both backends produce bit-identical results.

    python benchmarks/bench_backends.py [--width 0.125] [--repeat 5]
"""

import argparse
import time

import numpy as np

from voicemorph import kernels
from voicemorph.kernels import available_backends, get_backend

# label, n, c, h, w, kh, kw, sh, sw, ph, pw
KERNEL_CASES = [
    ("enc conv 8ch 64x64", 1, 8, 64, 64, 3, 3, 1, 1, 1, 1),
    ("dec conv 16ch 64x64", 1, 16, 64, 64, 3, 3, 1, 1, 1, 1),
    ("enc conv 16ch 32x32", 1, 16, 32, 32, 3, 3, 1, 1, 1, 1),
    ("critic conv 8ch s2", 1, 8, 32, 32, 3, 3, 2, 2, 1, 1),
    ("upsample grad 64x64", 1, 8, 64, 64, 3, 3, 2, 2, 1, 1),
    ("embedder conv1d", 1, 64, 1, 148, 1, 3, 1, 2, 0, 1),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    names = available_backends()
    print(f"{'case':<24} {'op':<8}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for label, n, c, h, w, kh, kw, sh, sw, ph, pw in KERNEL_CASES:
        x = rng.normal(size=(n, c, h, w))
        cols = {name: get_backend(name).im2col(x, kh, kw, sh, sw, ph, pw)
                for name in names}
        first = cols[names[0]]
        assert all((v == first).all() for v in cols.values()), "backend mismatch"
        times = {name: best_of(
            lambda b=get_backend(name): b.im2col(x, kh, kw, sh, sw, ph, pw), repeat)
            for name in names}
        _print_row(label, "im2col", names, times)

        dcols = rng.normal(size=first.shape)
        outs = {name: get_backend(name).col2im(dcols, n, c, h, w, kh, kw, sh, sw, ph, pw)
                for name in names}
        assert all((v == outs[names[0]]).all() for v in outs.values())
        times = {name: best_of(
            lambda b=get_backend(name): b.col2im(dcols, n, c, h, w, kh, kw, sh, sw, ph, pw),
            repeat)
            for name in names}
        _print_row(label, "col2im", names, times)


def _print_row(label, op, names, times):
    cells = "".join(f"{times[n] * 1e3:>10.3f}ms" for n in names)
    if "python" in times and "compiled" in times:
        speedup = times["python"] / times["compiled"]
        print(f"{label:<24} {op:<8}{cells}{speedup:>9.1f}x")
    else:
        print(f"{label:<24} {op:<8}{cells}")


def bench_generator(width, repeat):
    import voicemorph.autograd as ag
    from voicemorph.generator import GeneratorConfig, UNetGenerator

    rng = np.random.default_rng(1)
    gen = UNetGenerator(GeneratorConfig(width=width), rng)
    face = rng.uniform(-0.9, 0.9, size=(3, 64, 64))
    emb = rng.normal(size=64)

    def step():
        out = gen.generate(face, emb)
        for p in gen.parameters():
            p.grad = None
        ag.sum_all(out).backward()

    print(f"\ngenerator fwd+bwd at width {width}:")
    original = kernels.BACKEND
    try:
        for name in available_backends():
            kernels.use_backend(name)
            step()  # warm up
            t = best_of(step, repeat)
            print(f"  {name:>9}: {t * 1e3:8.1f} ms")
    finally:
        kernels.use_backend(original)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--width", type=float, default=0.125)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"available backends: {available_backends()} (active: {kernels.BACKEND})\n")
    bench_kernels(args.repeat)
    bench_generator(args.width, args.repeat)


if __name__ == "__main__":
    main()

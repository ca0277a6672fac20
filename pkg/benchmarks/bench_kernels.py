"""Compare the compiled kernel extension against the numpy fallback.

Times im2col / col2im in isolation, a conv2d forward+backward, and one full
training step of the reduced training configuration. Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from convtransseg import backend
from convtransseg.loss import LossConfig, combined_loss
from convtransseg.model import ModelConfig, SegModel
from convtransseg.rng import RngState
from convtransseg.tensor import Tape, Tensor, backward, conv2d
from convtransseg.train import Adam, parallel_guard


def timeit(fn, repeats=5):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = RngState(0)
    xp = rng.normal((8, 16, 66, 66), dtype=np.float32)
    cols = rng.normal((8, 16 * 9, 64 * 64), dtype=np.float32)
    rows = []
    rows.append(("im2col 8x16x66x66 k3", timeit(lambda: backend.im2col_numpy(xp, 3)),
                 timeit(lambda: backend.im2col_cython(xp, 3)) if backend._cy else None))
    rows.append(("col2im 8x16x66x66 k3", timeit(lambda: backend.col2im_numpy(cols, 8, 16, 66, 66, 3)),
                 timeit(lambda: backend.col2im_cython(cols, 8, 16, 66, 66, 3)) if backend._cy else None))
    return rows


def bench_conv(use_cython):
    saved = (backend.im2col, backend.col2im)
    backend.im2col = backend.im2col_cython if use_cython else backend.im2col_numpy
    backend.col2im = backend.col2im_cython if use_cython else backend.col2im_numpy
    try:
        rng = RngState(1)
        x = Tensor(rng.normal((8, 16, 64, 64), dtype=np.float32), requires_grad=True)
        w = Tensor(rng.normal((32, 16, 3, 3), dtype=np.float32) * 0.1, requires_grad=True)
        b = Tensor(np.zeros(32, dtype=np.float32), requires_grad=True)

        def step():
            x.grad = w.grad = b.grad = None
            with Tape() as tape:
                loss = conv2d(x, w, b, 1).sum()
            backward(loss, tape)

        return timeit(step)
    finally:
        backend.im2col, backend.col2im = saved


def bench_train_step(use_cython):
    saved = (backend.im2col, backend.col2im)
    backend.im2col = backend.im2col_cython if use_cython else backend.im2col_numpy
    backend.col2im = backend.col2im_cython if use_cython else backend.col2im_numpy
    try:
        cfg = ModelConfig(width=64, height=64, in_channels=1, classes=2, levels=3,
                          blocks=1, base_channels=16, downsample=4)
        model = SegModel(cfg, seed=0)
        model.train()
        adam = Adam(model.named_parameters())
        rng = RngState(2)
        x = Tensor(rng.uniform((8, 1, 64, 64), dtype=np.float32))
        target = rng.integers(0, 2, (8, 64, 64))

        def step():
            with Tape() as tape:
                loss = combined_loss(model(x), target, LossConfig())
            backward(loss, tape)
            adam.step()
            model.zero_grad()

        return timeit(step, repeats=3)
    finally:
        backend.im2col, backend.col2im = saved


def main():
    print(f"selected backend: {backend.KERNEL_BACKEND}")
    with parallel_guard(False):
        print(f"{'benchmark':<28} {'numpy':>10} {'cython':>10} {'speedup':>8}")
        for name, t_np, t_cy in bench_kernels():
            if t_cy is None:
                print(f"{name:<28} {t_np * 1e3:9.2f}ms {'n/a':>10}")
            else:
                print(f"{name:<28} {t_np * 1e3:9.2f}ms {t_cy * 1e3:8.2f}ms {t_np / t_cy:7.2f}x")
        t_np = bench_conv(False)
        t_cy = bench_conv(True) if backend._cy else None
        if t_cy is not None:
            print(f"{'conv2d fwd+bwd 16->32@64px':<28} {t_np * 1e3:9.2f}ms {t_cy * 1e3:8.2f}ms {t_np / t_cy:7.2f}x")
        t_np = bench_train_step(False)
        t_cy = bench_train_step(True) if backend._cy else None
        if t_cy is not None:
            print(f"{'full training step (b=8)':<28} {t_np * 1e3:9.2f}ms {t_cy * 1e3:8.2f}ms {t_np / t_cy:7.2f}x")


if __name__ == "__main__":
    main()

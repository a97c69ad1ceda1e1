#!/usr/bin/env python3
"""Compare the numba convolution kernels against the numpy fallback.

Times the three conv entry points on typical working shapes, then a full
model forward+backward at desk scale. Run from a checkout:

    python3 benchmarks/bench_conv_backends.py [--repeats 7]
"""

import argparse
import statistics
import time

import numpy as np

from msdnpan import backend
from msdnpan.data_pipeline import synth_scene
from msdnpan.injection_net import ModelConfig, PansharpenModel, pansharpen_with_details
from msdnpan.losses import LossConfig, total_loss
from msdnpan.tensor_core import Tensor, backward
from msdnpan.trainer import desk_config

KERNEL_SHAPES = [
    # (batch, c_in, h, w, c_out, k)
    (4, 16, 32, 32, 16, 3),
    (4, 16, 32, 32, 16, 7),
    (4, 32, 64, 64, 32, 3),
    (1, 64, 128, 128, 64, 3),
]


def timed(fn, repeats):
    fn()                                   # warmup (numba JIT on first call)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for b, ci, h, w, co, k in KERNEL_SHAPES:
        x = rng.standard_normal((b, ci, h, w)).astype(np.float32)
        wt = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        gy = rng.standard_normal((b, co, h, w)).astype(np.float32)
        case = {}
        for name in backend.BACKENDS:
            if name == "numba" and not backend.HAS_NUMBA:
                continue
            previous = backend.set_backend(name)
            try:
                case[name] = (
                    timed(lambda: backend.conv2d_forward(x, wt), repeats),
                    timed(lambda: backend.conv2d_grad_weight(x, gy, k), repeats),
                    timed(lambda: backend.conv2d_grad_input(gy, wt), repeats),
                )
            finally:
                backend.set_backend(previous)
        rows.append(((b, ci, h, w, co, k), case))
    return rows


def bench_model(repeats):
    scenes = [synth_scene(900 + i, 32, sample_id=f"bench{i}") for i in range(4)]
    ms = Tensor(np.stack([s.ms.data for s in scenes]))
    gt = Tensor(np.stack([s.gt.data for s in scenes]))
    hp = Tensor(np.stack([s.hp.data for s in scenes]))
    cfg = desk_config()
    loss_cfg = LossConfig()

    def step():
        model = bench_model.model
        out, details, coeff = pansharpen_with_details(ms, model)
        tot, _, _ = total_loss(out, gt, hp, details, coeff, loss_cfg)
        backward(tot)
        for p in model.parameters():
            p.zero_grad()

    results = {}
    for name in backend.BACKENDS:
        if name == "numba" and not backend.HAS_NUMBA:
            continue
        previous = backend.set_backend(name)
        try:
            bench_model.model = PansharpenModel(
                cfg.model, np.random.default_rng((0, 0)))
            results[name] = timed(step, repeats)
        finally:
            backend.set_backend(previous)
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing samples per case (median reported)")
    args = parser.parse_args()

    print(f"numba available: {backend.HAS_NUMBA}")
    print()
    print("conv kernels (median seconds; fwd / grad_w / grad_x):")
    header = f"{'shape b,ci,h,w,co,k':<24}"
    for name in ("numpy", "numba"):
        header += f" {name + ' fwd':>11} {name + ' gw':>11} {name + ' gx':>11}"
    print(header)
    for shape, case in bench_kernels(args.repeats):
        line = f"{str(shape):<24}"
        for name in ("numpy", "numba"):
            if name in case:
                f, gw, gx = case[name]
                line += f" {f:>11.5f} {gw:>11.5f} {gx:>11.5f}"
            else:
                line += f" {'-':>11} {'-':>11} {'-':>11}"
        print(line)

    print()
    print("desk-scale model, one forward+backward (batch 4, 8x8 MS):")
    for name, seconds in bench_model(args.repeats).items():
        print(f"  {name:<6} {seconds:.4f} s")


if __name__ == "__main__":
    main()

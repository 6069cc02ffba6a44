"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 32]

Times each hot kernel on paper-model block-1 and block-3 shapes, then one full
training step of the paper network at split 2. Results from both backends are
also checked for bitwise equality.
"""

import argparse
import timeit

import numpy as np

from stsl import backend
from stsl.model import (
    ModelSpec,
    build_model,
    client_backward,
    client_forward,
    partition_model,
    server_forward_backward,
)


def kernel_cases(batch: int, rng):
    for label, shape in (("block1", (batch, 3, 32, 32)), ("block3", (batch, 32, 8, 8))):
        x = rng.standard_normal(shape).astype(np.float32)
        n, c, h, w = shape
        cols = rng.standard_normal((n, c * 9, h * w)).astype(np.float32)
        grad = rng.standard_normal((n, c, h // 2, w // 2)).astype(np.float32)
        yield f"im2col3x3 {label}", lambda k, x=x: k.im2col3x3(x)
        yield f"col2im3x3 {label}", lambda k, cols=cols, shape=shape: k.col2im3x3(cols, shape)
        yield f"maxpool2x2 {label}", lambda k, x=x: k.maxpool2x2(x)
        yield f"maxpool2x2_backward {label}", lambda k, x=x, grad=grad: k.maxpool2x2_backward(grad, k.maxpool2x2(x)[1])


def train_step(batch: int, rng):
    images = rng.random((batch, 3, 32, 32), dtype=np.float32)
    labels = rng.integers(0, 10, batch)

    def step(_kernels):
        parts = partition_model(build_model(ModelSpec.paper(), 0), 2)
        smashed, cache = client_forward(parts.client_part, images)
        loss, grad_cut, server_grads = server_forward_backward(parts.server_part, smashed, labels)
        parts.server_part.apply_sgd(server_grads, 0.01, 0.9)
        parts.client_part.apply_sgd(client_backward(parts.client_part, cache, grad_cut), 0.01, 0.9)
        return np.float32(loss)

    return "train step (paper model, k=2)", step


def bench(fn, repeat: int) -> float:
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--batch", type=int, default=32)
    args = parser.parse_args(argv)

    names = backend.available()
    rng = np.random.default_rng(0)
    cases = list(kernel_cases(args.batch, rng)) + [train_step(args.batch, rng)]
    print(f"batch {args.batch}, best of {args.repeat}, milliseconds")
    print(f"{'case':38}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, case in cases:
        times, outputs = [], []
        for name in names:
            backend.use(name)
            times.append(bench(lambda: case(backend.kernels), args.repeat))
            outputs.append(case(backend.kernels))
        flat = [np.concatenate([np.ravel(o).view(np.uint8) for o in (out if isinstance(out, tuple) else (out,))])
                for out in outputs]
        same = all(np.array_equal(flat[0], f) for f in flat[1:])
        line = f"{label:38}" + "".join(f"{t:12.3f}" for t in times)
        if len(names) > 1:
            line += f"{times[names.index('python')] / times[names.index('compiled')]:11.1f}x"
        print(line + ("" if same else "   OUTPUTS DIFFER"))


if __name__ == "__main__":
    main()

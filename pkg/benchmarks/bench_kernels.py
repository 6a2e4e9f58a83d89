"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --entities 4000 --edges 40000

Each kernel runs on identical random inputs under both backends; the script
also checks that the two agree before reporting.
"""
import argparse
import statistics
import time

import numpy as np

from halalkg import kernels


def _time(fn, repeats):
    fn()  # warm-up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def make_inputs(n, e, d, k, types, seed):
    rng = np.random.default_rng(seed)
    tgt = np.sort(rng.integers(0, n, e)).astype(np.int64)
    src = rng.integers(0, n, e).astype(np.int64)
    typ = rng.integers(0, types, e).astype(np.int64)
    return {
        "tgt": tgt, "src": src, "typ": typ, "n": n,
        "logits": rng.normal(size=(e, k)),
        "values": rng.normal(size=(e, d)),
        "feats": rng.normal(size=(n, d)),
        "rel": rng.normal(size=(types, d)),
        "grad": rng.normal(size=(n, d)),
    }


def cases(x):
    att = kernels.segment_softmax(x["logits"], x["tgt"], x["n"], impl="python")
    return {
        "segment_sum": lambda impl: kernels.segment_sum(x["values"], x["tgt"], x["n"], impl=impl),
        "segment_max": lambda impl: kernels.segment_max(x["logits"], x["tgt"], x["n"], impl=impl),
        "segment_softmax": lambda impl: kernels.segment_softmax(x["logits"], x["tgt"], x["n"], impl=impl),
        "segment_softmax_grad": lambda impl: kernels.segment_softmax_grad(
            att, x["logits"], x["tgt"], x["n"], impl=impl),
        "edge_aggregate": lambda impl: kernels.edge_aggregate(
            x["feats"], x["rel"], att, x["src"], x["typ"], x["tgt"], x["n"], impl=impl),
        "edge_aggregate_grad": lambda impl: kernels.edge_aggregate_grad(
            x["grad"], x["feats"], x["rel"], att, x["src"], x["typ"], x["tgt"], impl=impl),
    }


def _close(a, b):
    if isinstance(a, tuple):
        return all(_close(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--entities", type=int, default=4000)
    parser.add_argument("--edges", type=int, default=40000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--channels", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not kernels.HAVE_COMPILED:
        print("compiled kernels are not built; only the numpy fallback is timed")
    x = make_inputs(args.entities, args.edges, args.dim, args.channels, 11, args.seed)
    print(f"{args.entities} entities, {args.edges} edges, d={args.dim}, K={args.channels}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speed-up':>10}")
    for name, fn in cases(x).items():
        py = _time(lambda: fn("python"), args.repeats)
        if kernels.HAVE_COMPILED:
            if not _close(fn("python"), fn("cython")):
                raise SystemExit(f"{name}: backends disagree")
            cy = _time(lambda: fn("cython"), args.repeats)
            print(f"{name:<22}{py * 1e3:>10.2f}{cy * 1e3:>11.2f}{py / cy:>9.1f}x")
        else:
            print(f"{name:<22}{py * 1e3:>10.2f}{'-':>11}{'-':>10}")


if __name__ == "__main__":
    main()

"""Command line front end.

    rnn-graph validate  --net net.yaml
    rnn-graph export    --arch lstm --sizes 10,8,10 -o net.yaml
    rnn-graph condense  --net net.yaml --dot graph.dot
    rnn-graph gradcheck --arch elman --sizes 2,3,2 --seq-len 12
    rnn-graph train     --arch lstm --sizes 16 --corpus tiny.txt --iterations 200
    rnn-graph bench     --arch lstm --sizes 64,64,64 --streams 1,2,4 --csv out.csv

Exit codes: 0 success, 1 runtime failure (bad file, failed check, numeric
trouble), 2 usage error.  `--seed` falls back to the RNN_GRAPH_SEED
environment variable, then 0.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import builders, data, kernels
from .condense import condense, export_dot, schedule_text
from .engine import (
    Criterion,
    EngineError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)
from .gradcheck import DEFAULT_STEP, DEFAULT_THRESHOLD, check_gradients
from .netdef import Activation, NetdefError, NetworkDef, load_network, save_network, validate

__all__ = ["main", "count_flops", "BenchRecord", "CSV_FIELDS"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# flop accounting


def count_flops(net: NetworkDef, frames: int) -> int:
    """Operation count convention: 6 * rows * cols per dense connection per
    frame (2 forward multiply-add, 2 error backprop, 2 gradient
    accumulation).  Identity connections and elementwise work count zero;
    only parameter and error-gradient operations are tallied."""
    per_frame = sum(net.layer(c.dst).size * net.layer(c.src).size for c in net.iter_dense())
    return 6 * per_frame * frames


CSV_FIELDS = [
    "n_streams",
    "h",
    "h_prime",
    "minibatch",
    "seconds",
    "frames",
    "words_per_sec",
    "flops",
    "gflops",
]


@dataclass
class BenchRecord:
    n_streams: int
    h: int
    h_prime: int
    minibatch: int
    seconds: float
    frames: int
    words_per_sec: float
    flops: int
    gflops: float

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def append_csv(path: str, records: list[BenchRecord]) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        if fresh:
            writer.writeheader()
        for r in records:
            writer.writerow(r.row())


# ---------------------------------------------------------------------------
# argument plumbing


def _add_net_args(p: argparse.ArgumentParser, *, train_style: bool = False) -> None:
    p.add_argument("--net", metavar="FILE", help="network description file")
    p.add_argument("--arch", choices=["elman", "lstm"], help="built-in topology")
    if train_style:
        p.add_argument(
            "--sizes",
            metavar="HIDDEN",
            help="hidden/cell width (input and output sizes come from the vocabulary)",
        )
    else:
        p.add_argument("--sizes", metavar="IN,HID,OUT", help="layer sizes for --arch")
    p.add_argument("--no-bias", action="store_true", help="drop the constant-one bias layer")
    p.add_argument("--no-peepholes", action="store_true", help="lstm: no cell->gate connections")
    p.add_argument("--no-forget", action="store_true", help="lstm: recycle the cell state directly")
    p.add_argument(
        "--output-peephole-delay", type=int, choices=[0, 1], default=0,
        help="lstm: cell state frame seen by the output gate (default current)",
    )
    p.add_argument(
        "--hidden-activation", choices=["tanh", "sigmoid"], default="tanh", help="elman only"
    )
    p.add_argument(
        "--output", choices=["softmax", "identity"], default="softmax",
        help="output activation (softmax pairs with cross-entropy, identity with mse)",
    )


def _parse_sizes(text: str, arity: int) -> list[int]:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {text!r}") from None
    if len(values) != arity or any(v < 1 for v in values):
        raise UsageError(f"--sizes needs {arity} positive integer(s), got {text!r}")
    return values


def _build_net(args, *, vocab_size: int | None = None) -> NetworkDef:
    if args.net and args.arch:
        raise UsageError("--net and --arch are mutually exclusive")
    if args.net:
        with open(args.net, encoding="utf-8") as fh:
            return load_network(fh.read())
    if not args.arch:
        raise UsageError("need --net FILE or --arch {elman,lstm}")
    if not args.sizes:
        raise UsageError("--arch needs --sizes")
    out_act = Activation.SOFTMAX if args.output == "softmax" else Activation.IDENTITY
    if vocab_size is not None:
        (hidden,) = _parse_sizes(args.sizes, 1)
        n_in = n_out = vocab_size
    else:
        n_in, hidden, n_out = _parse_sizes(args.sizes, 3)
    if args.arch == "elman":
        hid_act = Activation.TANH if args.hidden_activation == "tanh" else Activation.SIGMOID
        return builders.build_elman(
            n_in, hidden, n_out,
            include_bias=not args.no_bias,
            hidden_activation=hid_act,
            output_activation=out_act,
        )
    return builders.build_lstm(
        n_in, hidden, n_out,
        peepholes=not args.no_peepholes,
        forget_gate=not args.no_forget,
        include_bias=not args.no_bias,
        output_peephole_delay=args.output_peephole_delay,
        output_activation=out_act,
    )


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RNN_GRAPH_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"RNN_GRAPH_SEED must be an integer, got {env!r}") from None


def _apply_threads(args) -> None:
    if getattr(args, "threads", None) is None:
        return
    if args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    effective = kernels.set_threads(args.threads)
    if effective != args.threads:
        print(
            f"warning: requested {args.threads} threads, using {effective}"
            " (limit is fixed at startup by NUMBA_NUM_THREADS)",
            file=sys.stderr,
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    with open(args.net, encoding="utf-8") as fh:
        text = fh.read()
    # parse without the load-time validation so every violation is listed
    from . import netdef as nd

    try:
        net = load_network(text)
    except nd.SemanticError as exc:
        for v in exc.report.violations:
            print(v)
        return 1
    report = validate(net)
    if report.ok:
        print(f"ok: {len(net.layers)} layers, {len(net.connections)} connections,"
              f" {builders.count_params(net):,} parameters")
        return 0
    for v in report.violations:
        print(v)
    return 1


def cmd_export(args) -> int:
    net = _build_net(args)
    text = save_network(net)
    if args.output_file:
        with open(args.output_file, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_condense(args) -> int:
    net = _build_net(args)
    cg = condense(net)
    if args.dot is not None:
        text = export_dot(cg, net)
        if args.dot == "-":
            sys.stdout.write(text)
        else:
            with open(args.dot, "w", encoding="utf-8") as fh:
                fh.write(text)
    else:
        sys.stdout.write(schedule_text(cg, net))
    return 0


def cmd_gradcheck(args) -> int:
    _apply_threads(args)
    net = _build_net(args)
    report = check_gradients(
        net,
        seq_len=args.seq_len,
        seed=_resolve_seed(args),
        step=args.step,
        threshold=args.threshold,
        n_streams=args.streams,
        ids_input=args.ids,
    )
    print(report.table(net))
    return 0 if report.ok else 1


def cmd_train(args) -> int:
    _apply_threads(args)
    docs = data.load_corpus(args.corpus, mode=args.mode)
    if not docs:
        raise EngineError(f"{args.corpus}: no usable text")
    vocab = data.build_vocab((t for d in docs for t in d), max_size=args.vocab_size)
    net = _build_net(args, vocab_size=vocab.size)
    streams = data.make_streams(
        data.encode_corpus(docs, vocab), args.streams, seed=_resolve_seed(args)
    )
    h_prime = args.h_prime
    h = args.h if args.h is not None else 2 * h_prime
    config = TrainConfig(
        h=h,
        h_prime=h_prime,
        lr=args.lr,
        iterations=args.iterations,
        seed=_resolve_seed(args),
        criterion=Criterion.CROSS_ENTROPY_SOFTMAX,
        reset_on_sequence_boundary=args.reset_on_sequence_boundary,
        check_finite=args.check_finite,
        log_every=args.log_every,
    )
    weights = None
    if args.resume:
        weights = load_checkpoint(args.resume, net)
    weights, metrics = train_loop(net, streams, config, weights=weights, log=print)
    first, last = metrics[0].loss, metrics[-1].loss
    words = sum(m.frames for m in metrics)
    secs = sum(m.seconds for m in metrics)
    print(
        f"trained {config.iterations} iterations, vocab {vocab.size},"
        f" minibatch {h_prime * args.streams} (h'={h_prime} x {args.streams} streams, h={h})"
    )
    print(f"loss {first:.4f} -> {last:.4f}; {words / secs:,.0f} words/sec")
    if args.ckpt:
        save_checkpoint(args.ckpt, net, weights)
        print(f"checkpoint written to {args.ckpt}")
    return 0


def cmd_bench(args) -> int:
    _apply_threads(args)
    seed = _resolve_seed(args)
    try:
        stream_counts = [int(v) for v in args.streams.split(",")]
    except ValueError:
        raise UsageError(f"--streams must be comma-separated integers, got {args.streams!r}") from None
    if any(s < 1 for s in stream_counts):
        raise UsageError("--streams values must be >= 1")
    net = _build_net(args)
    lin = net.input_layers()[0]
    lout = net.output_layers()[0]
    records = []
    for n in stream_counts:
        if args.minibatch % n:
            raise UsageError(f"--minibatch {args.minibatch} not divisible by {n} streams")
        h_prime = args.minibatch // n
        h = args.h if args.h is not None else 2 * h_prime
        source = _RandomIds(lin.size, lout.size, n, seed)
        config = TrainConfig(
            h=h,
            h_prime=h_prime,
            lr=args.lr,
            iterations=args.warmup + args.iterations,
            seed=seed,
            frame_parallel=(args.exec_mode == "parallel"),
        )
        _, metrics = train_loop(net, source, config)
        timed = metrics[args.warmup :]
        seconds = sum(m.seconds for m in timed)
        frames = sum(m.frames for m in timed)
        flops = count_flops(net, frames)
        rec = BenchRecord(
            n_streams=n,
            h=h,
            h_prime=h_prime,
            minibatch=args.minibatch,
            seconds=round(seconds, 6),
            frames=frames,
            words_per_sec=round(frames / seconds, 3) if seconds else float("inf"),
            flops=flops,
            gflops=round(flops / seconds / 1e9, 6) if seconds else float("inf"),
        )
        records.append(rec)
        print(
            f"streams {n:3d}  h'={h_prime:<4d} h={h:<4d}  {rec.words_per_sec:>12,.0f} words/s"
            f"  {rec.gflops:8.3f} gflops  ({args.exec_mode})"
        )
    if args.csv:
        append_csv(args.csv, records)
    return 0


class _RandomIds:
    """Synthetic id stream for benchmarking (uniform tokens)."""

    def __init__(self, vocab_in: int, vocab_out: int, n_streams: int, seed: int):
        self.n_streams = n_streams
        self._rng = np.random.default_rng(seed)
        self._vin, self._vout = vocab_in, vocab_out

    def next_batch(self, h_prime: int):
        rows = h_prime * self.n_streams
        return data.StreamChunk(
            inputs=self._rng.integers(0, self._vin, size=rows, dtype=np.int64),
            targets=self._rng.integers(0, self._vout, size=rows, dtype=np.int64),
            new_sequence=np.zeros(self.n_streams, dtype=bool),
        )


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnn-graph",
        description="recurrent networks as directed graphs: validate, condense, train, check",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network description file")
    p.add_argument("--net", metavar="FILE", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export", help="emit a network description")
    _add_net_args(p)
    p.add_argument("-o", dest="output_file", metavar="FILE")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("condense", help="show the execution schedule or graphviz rendering")
    _add_net_args(p)
    p.add_argument("--dot", nargs="?", const="-", metavar="FILE", help="emit graphviz (default stdout)")
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_net_args(p)
    p.add_argument("--seq-len", type=int, default=12)
    p.add_argument("--streams", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--ids", action="store_true", help="drive the input layer with token ids")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="language-model training on a text corpus")
    _add_net_args(p, train_style=True)
    p.add_argument("--corpus", metavar="FILE", required=True)
    p.add_argument("--mode", choices=["char", "word"], default="char")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--streams", type=int, default=4)
    p.add_argument("--h-prime", type=int, default=8)
    p.add_argument("--h", type=int, default=None, help="default 2*h'")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--ckpt", metavar="FILE", help="write final weights here")
    p.add_argument("--resume", metavar="FILE", help="start from this checkpoint")
    p.add_argument("--reset-on-sequence-boundary", action="store_true")
    p.add_argument("--check-finite", action="store_true")
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="throughput measurement on synthetic data")
    _add_net_args(p)
    p.add_argument("--streams", default="1", metavar="N,N,...")
    p.add_argument("--minibatch", type=int, default=256, help="h' * streams per iteration")
    p.add_argument("--h", type=int, default=None, help="default 2*h'")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument(
        "--exec-mode", choices=["parallel", "sequential"], default="parallel",
        help="chunk-batched DAG execution vs frame-by-frame stepping",
    )
    p.add_argument("--csv", metavar="FILE", help="append measurements here")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (NetdefError, EngineError, OSError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``lowrank`` command line: noise, denoise, decompose, svd-analyze, benchmark, sweep.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 file I/O or
format errors, 3 numerical failure.
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from lowrank.experiments import (
    ALL_METHODS,
    SWEEP_PARAMETERS,
    benchmark,
    denoise_run,
    group_spectra,
    load_corpus,
    sweep,
    sweep_grid,
)
from lowrank.io import (
    CsvFormatError,
    PgmError,
    read_csv_matrix,
    read_pgm,
    write_csv_matrix,
    write_pgm,
    write_report,
    write_table,
)
from lowrank.linalg import SvdError
from lowrank.metrics import NoiseSpec, add_salt_pepper, psnr
from lowrank.nss import PipelineError, PipelineParams
from lowrank.solvers import Method, ialm_decompose, preset_config

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    raw = os.environ.get("LOWRANK_THREADS", "1")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"LOWRANK_THREADS must be an integer, got {raw!r}") from None


def _solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--method", default="DWLP", help="PCP, WNNM_RPCA, WSNM_RPCA, DWLP_11 or DWLP")
    g.add_argument("--noise-level", type=float, help="noise probability; selects the tuned preset row")
    g.add_argument("--p", type=float)
    g.add_argument("--q", type=float)
    g.add_argument("--ratio", type=float, help="lambda_a / lambda_e")
    g.add_argument("--lambda-e", type=float)
    g.add_argument("--mu0", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--eps", type=float, help="weight regularizer (both weight kinds)")
    g.add_argument("--eps-sparse", type=float, help="entry-weight regularizer (overrides --eps)")
    g.add_argument("--iters", type=int)
    g.add_argument("--tol", type=float)


def _pipeline_flags(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--patch", type=int, default=8)
    g.add_argument("--step", type=int, default=4)
    g.add_argument("--K", type=int, default=64)
    g.add_argument("--radius", type=int, default=20)
    g.add_argument("--median-window", type=int)
    g.add_argument("--aggregate", choices=("reference", "full"), default="full")


def _run_flags(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, help="worker threads, 0 = all cores (default $LOWRANK_THREADS or 1)")
    p.add_argument("--deterministic", action="store_true", help="sequential execution for bit-stable output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lowrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("noise", help="add salt-and-pepper noise to a PGM image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--noise-level", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--salt-fraction", type=float, default=0.5)

    p = sub.add_parser("denoise", help="restore a noisy PGM image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--reference", help="clean image for PSNR/SSIM")
    p.add_argument("--out", help="report path (default: output with .json suffix)")
    p.add_argument("--trace", help="CSV of per-iteration PSNR (needs --reference)")
    _solver_flags(p)
    _pipeline_flags(p)
    _run_flags(p, seed=False)

    p = sub.add_parser("decompose", help="split a CSV matrix into low-rank and sparse parts")
    p.add_argument("input")
    p.add_argument("out_a")
    p.add_argument("out_e")
    p.add_argument("--trace", help="CSV of per-iteration residual and mu")
    _solver_flags(p)

    p = sub.add_parser("svd-analyze", help="singular values of an NSS group")
    p.add_argument("input")
    p.add_argument("--anchor", type=int, nargs=2, metavar=("ROW", "COL"), default=(0, 0))
    p.add_argument("--noise", type=float, dest="noise", help="also corrupt and recover with every method")
    p.add_argument("--out", required=True, help="spectrum CSV")
    p.add_argument("--seed", type=int, default=0)
    _solver_flags(p)
    _pipeline_flags(p)

    p = sub.add_parser("benchmark", help="score methods over a corpus and noise levels")
    p.add_argument("corpus")
    p.add_argument("--levels", type=float, nargs="+", default=[0.1, 0.3, 0.5])
    p.add_argument("--methods", nargs="+", default=[m.value for m in ALL_METHODS])
    p.add_argument("--out", required=True, help="report JSON; a CSV table is written beside it")
    _solver_flags(p)
    _pipeline_flags(p)
    _run_flags(p)

    p = sub.add_parser("sweep", help="mean PSNR/SSIM over a parameter grid")
    p.add_argument("corpus")
    p.add_argument("--parameter", choices=SWEEP_PARAMETERS, required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--values2", type=float, nargs="+", help="q grid for --parameter pq")
    p.add_argument("--out", required=True, help="sweep CSV")
    _solver_flags(p)
    _pipeline_flags(p)
    _run_flags(p)
    return parser


def _check_level(value, name="--noise-level"):
    if value is not None and not 0 < value <= 1:
        raise UsageError(f"{name} must lie in (0, 1], got {value}")


def _explicit_overrides(args) -> dict:
    """Solver flags the user actually set; these always win over presets."""
    overrides = dict(
        p=args.p, q=args.q, ratio=args.ratio, lambda_e=args.lambda_e, mu0=args.mu0, rho=args.rho,
        max_iters=args.iters, tol=args.tol, epsilon=args.eps,
        epsilon_sparse=args.eps_sparse if args.eps_sparse is not None else args.eps,
    )
    return {k: v for k, v in overrides.items() if v is not None}


def solver_config(args):
    _check_level(args.noise_level)
    return preset_config(args.method, args.noise_level, **_explicit_overrides(args))


def pipeline_params(args) -> PipelineParams:
    return PipelineParams(
        patch_size=args.patch, step=args.step, K=args.K, search_radius=args.radius,
        median_window=args.median_window, aggregate_mode=args.aggregate,
    )


def thread_count(args) -> int:
    threads = args.threads if args.threads is not None else _default_threads()
    if threads < 0:
        raise UsageError(f"--threads must be >= 0, got {threads}")
    if args.deterministic:
        return 1
    return threads or (os.cpu_count() or 1)


def _check_writable(*paths):
    for path in paths:
        parent = Path(path).resolve().parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory {parent} does not exist")


def cmd_noise(args):
    spec = NoiseSpec(args.noise_level, seed=args.seed, salt_fraction=args.salt_fraction)
    _check_writable(args.output)
    clean = read_pgm(args.input)
    noisy = add_salt_pepper(clean, spec)
    write_pgm(noisy, args.output)
    print(f"psnr {psnr(clean, noisy):.4f}")


def cmd_denoise(args):
    cfg = solver_config(args)
    params = pipeline_params(args)
    threads = thread_count(args)
    if args.trace and not args.reference:
        raise UsageError("--trace needs --reference")
    report_path = args.out or str(Path(args.output).with_suffix(".json"))
    _check_writable(args.output, report_path, *([args.trace] if args.trace else []))
    noisy = read_pgm(args.input)
    reference = read_pgm(args.reference) if args.reference else None
    if reference is not None and reference.shape != noisy.shape:
        raise UsageError(f"reference is {reference.shape}, noisy image is {noisy.shape}")
    run = denoise_run(
        noisy, cfg, params, noise_level=args.noise_level, reference=reference,
        track=bool(args.trace), threads=threads,
        extra={"threads": threads, "deterministic": args.deterministic},
    )
    write_pgm(run.restored, args.output)
    write_report(run.report, report_path)
    if args.trace:
        write_table([{"iteration": k, "psnr": v} for k, v in run.psnr_trace], args.trace, ["iteration", "psnr"])
    if reference is not None:
        print(f"psnr {run.report.psnr:.4f} (noisy {psnr(reference, noisy):.4f}) ssim {run.report.ssim:.4f}")
    print(f"runtime {run.report.runtime_seconds:.1f}s")


def cmd_decompose(args):
    cfg = solver_config(args)
    _check_writable(args.out_a, args.out_e, *([args.trace] if args.trace else []))
    D = read_csv_matrix(args.input)
    res = ialm_decompose(D, cfg)
    write_csv_matrix(res.A, args.out_a)
    write_csv_matrix(res.E, args.out_e)
    if args.trace:
        res.write_trace_csv(args.trace)
    print(f"residual {res.residual:.6e} iterations {res.iterations_run}")


def cmd_svd_analyze(args):
    _check_level(args.noise, "--noise")
    overrides = {k: v for k, v in _explicit_overrides(args).items() if k not in ("p", "q", "ratio")}
    for method in ALL_METHODS:
        preset_config(method, args.noise, **overrides)
    params = pipeline_params(args)
    _check_writable(args.out)
    img = read_pgm(args.input)
    spectra = group_spectra(
        img, tuple(args.anchor), noise_level=args.noise, seed=args.seed, params=params, overrides=overrides,
    )
    names = list(spectra)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index"] + names)
        for i in range(len(spectra["clean"])):
            writer.writerow([i + 1] + [f"{spectra[n][i]:.17g}" for n in names])
    s = spectra["clean"]
    print(f"clean sigma_10/sigma_1 {s[min(9, len(s) - 1)] / s[0]:.4f}" if s[0] > 0 else "clean group is zero")


def cmd_benchmark(args):
    for level in args.levels:
        _check_level(level, "--levels")
    methods = [Method.parse(m) for m in args.methods]
    overrides = _explicit_overrides(args)
    for method in methods:
        for level in args.levels:
            preset_config(method, level, **overrides)
    params = pipeline_params(args)
    threads = thread_count(args)
    table_path = Path(args.out).with_suffix(".csv")
    _check_writable(args.out, table_path)
    images = load_corpus(args.corpus)
    docs = benchmark(images, args.levels, methods, seed=args.seed, params=params, overrides=overrides, threads=threads)
    write_report(docs, args.out)
    rows = [
        {"image": d.image, "noise_level": d.noise_level, "method": d.method, "psnr": d.psnr, "ssim": d.ssim,
         "noisy_psnr": d.extra["noisy_psnr"]}
        for d in docs
    ]
    write_table(rows, table_path, ["image", "noise_level", "method", "psnr", "ssim", "noisy_psnr"])
    for r in rows:
        print(f"{r['image']:>12} {r['noise_level']:.2f} {r['method']:>10} {r['psnr']:.3f} dB ssim {r['ssim']:.4f}")


def cmd_sweep(args):
    level = args.noise_level if args.noise_level is not None else 0.3
    _check_level(level)
    grid = sweep_grid(args.parameter, args.values, args.values2)
    overrides = _explicit_overrides(args)
    for point in grid:
        kw = dict(overrides)
        if args.parameter == "pq":
            kw.update(p=point[0], q=point[1])
        elif args.parameter != "K":
            kw[args.parameter] = point[0]
        else:
            if point[0] != int(point[0]) or point[0] < 1:
                raise UsageError(f"K values must be positive integers, got {point[0]}")
        preset_config(args.method, level, **kw)
    params = pipeline_params(args)
    threads = thread_count(args)
    _check_writable(args.out)
    images = load_corpus(args.corpus)
    values = [int(v) for v in args.values] if args.parameter == "K" else args.values
    rows = sweep(
        images, args.parameter, values, level=level, method=args.method, second=args.values2,
        seed=args.seed, params=params, overrides=overrides, threads=threads,
    )
    columns = ["p", "q"] if args.parameter == "pq" else [args.parameter]
    write_table(rows, args.out, columns + ["psnr", "ssim"])
    for r in rows:
        print(" ".join(f"{c}={r[c]}" for c in columns), f"psnr {r['psnr']:.3f} ssim {r['ssim']:.4f}")


COMMANDS = {
    "noise": cmd_noise,
    "denoise": cmd_denoise,
    "decompose": cmd_decompose,
    "svd-analyze": cmd_svd_analyze,
    "benchmark": cmd_benchmark,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    try:
        COMMANDS[args.command](args)
    except (SvdError, PipelineError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"lowrank: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, PgmError, CsvFormatError) as exc:
        print(f"lowrank: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"lowrank: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

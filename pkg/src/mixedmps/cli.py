"""Command-line entry point.

``simulate <config.yaml> [--out DIR] [--threads K] [--log-level L] [--dry-run]``
runs a simulation config; ``simulate test-oracles <model> ...`` runs one of
the covariance reference models and writes its observables in the same data
format, for ad-hoc comparisons.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys


def _set_threads(k: int) -> None:
    # must happen before numpy is imported anywhere in this process
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(k)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Run an MPS simulation config, or a reference-model oracle.",
    )
    p.add_argument("config", help="path to a YAML config, or 'test-oracles'")
    p.add_argument("--out", default=".", help="output root directory (default: .)")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    p.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="console log level",
    )
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="load and validate the config, run nothing",
    )
    return p


def _oracle_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate test-oracles",
        description="Integrate a quasi-free covariance model and write data files.",
    )
    p.add_argument(
        "model",
        choices=["fermion-dephasing", "boson-source", "fermion-source", "xx-boundary"],
    )
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--time-step", type=float, default=0.1, help="output sampling step")
    p.add_argument("--gamma", type=float, default=1.0, help="dephasing strength")
    p.add_argument("--rate", type=float, default=0.2, help="source rate")
    p.add_argument("--eps-l", type=float, default=1.0)
    p.add_argument("--mu-l", type=float, default=1.0)
    p.add_argument("--eps-r", type=float, default=1.0)
    p.add_argument("--mu-r", type=float, default=-1.0)
    p.add_argument("--out", default=".")
    p.add_argument("--name", default=None, help="output directory name")
    return p


def _run_oracle(argv: list[str]) -> int:
    import numpy as np

    from . import oracles

    args = _oracle_parser().parse_args(argv)
    n = args.n
    if args.model == "fermion-dephasing":
        model = oracles.fermion_dephasing(n, args.gamma)
        c0 = np.diag([1.0 if (i + 1) % 2 == 0 else 0.0 for i in range(n)]).astype(complex)
    elif args.model == "boson-source":
        model = oracles.boson_source(n, args.rate, n // 2)
        c0 = np.zeros((n, n), dtype=complex)
    elif args.model == "fermion-source":
        model = oracles.fermion_source(n, args.rate, n // 2)
        c0 = np.zeros((n, n), dtype=complex)
    else:
        model = oracles.xx_boundary(n, args.eps_l, args.mu_l, args.eps_r, args.mu_r)
        c0 = 0.5 * np.eye(n, dtype=complex)

    from pathlib import Path

    name = args.name or f"oracle-{args.model}"
    out_dir = Path(args.out) / name
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = max(1, round(args.duration / args.time_step))
    with open(out_dir / "density.dat", "w", encoding="utf-8") as fdens, open(
        out_dir / "ntot.dat", "w", encoding="utf-8"
    ) as ftot:
        fdens.write(f"# covariance oracle {args.model}\n# columns: t site re im\n")
        ftot.write(f"# covariance oracle {args.model}\n# columns: t re im\n")
        c = c0
        for k in range(steps + 1):
            t = k * args.time_step
            if k > 0:
                c = oracles.covariance_evolve(model, c0, t)
            dens = np.real(np.diag(c))
            for i, v in enumerate(dens, start=1):
                fdens.write(f"{t:.15e} {i} {v:.15e} {0.0:.15e}\n")
            ftot.write(f"{t:.15e} {float(dens.sum()):.15e} {0.0:.15e}\n")
    print(out_dir)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "test-oracles":
        return _run_oracle(argv[1:])
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        _set_threads(args.threads)
    logging.basicConfig(level=getattr(logging, args.log_level))

    # deferred so that thread pinning above takes effect before numpy loads
    from .config import ConfigError, load_config

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.dry_run:
        print(f"config '{config.name}' ok: {len(config.phases)} phases")
        return 0

    from .driver import run

    try:
        out_dir = run(config, args.out)
    except Exception as exc:  # noqa: BLE001 - report any phase failure
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    print(out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: beta-product, gllvm, and verify subcommands.

Configuration is accepted as flags and/or a JSON config file (``--config``);
on conflict the file wins with a warning, so a saved config reproduces its
run regardless of stray flags.  Every failure path prints one
machine-parsable line ``ERROR <CODE>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import (BETA_PRODUCT_COLUMNS, GLLVM_BATCH_COLUMNS,
                          GLLVM_DIAG_COLUMNS, GLLVM_TABLE_COLUMNS,
                          BetaProductConfig, GllvmConfig, beta_product_rows,
                          gllvm_results, write_csv)
from .verify import run_suite


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _parse_r_schedule(text: str) -> tuple[int, ...]:
    """Accept '250000', '5000,10000,20000', or 'start:stop:step' (inclusive)."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (int(part) for part in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            return tuple(range(start, stop + 1, step))
        if "," in text:
            return tuple(int(part) for part in text.split(","))
        return (int(text),)
    except ValueError:
        raise CliError("E_CONFIG",
                       f"bad --r-schedule {text!r}; use R, R1,R2,... or start:stop:step")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise CliError("E_CONFIG", f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError("E_CONFIG", f"config file is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError("E_CONFIG", "config file must hold a JSON object")
    return data


def _merge(flag_values: dict, file_values: dict, known: set[str]) -> dict:
    """File wins over explicitly set flags, with a warning per conflict."""
    unknown = set(file_values) - known
    if unknown:
        raise CliError("E_CONFIG",
                       f"unknown config file keys: {sorted(unknown)}")
    merged = dict(flag_values)
    for key, value in file_values.items():
        if key in merged and merged[key] is not None and merged[key] != value:
            print(f"warning: config file overrides --{key.replace('_', '-')} "
                  f"({merged[key]!r} -> {value!r})", file=sys.stderr)
        merged[key] = value
    return {k: v for k, v in merged.items() if v is not None}


def _cmd_beta_product(args) -> int:
    flags = {
        "n_factors": args.n,
        "lambda1": args.alpha,
        "lambda2": args.beta,
        "n_batches": args.batches,
        "seed": args.seed,
        "replicates": args.replicates,
        "threads": args.threads,
        "r_schedule": _parse_r_schedule(args.r_schedule) if args.r_schedule else None,
    }
    file_values = _load_config_file(args.config)
    if "r_schedule" in file_values:
        file_values["r_schedule"] = tuple(int(r) for r in file_values["r_schedule"])
    merged = _merge(flags, file_values, set(flags) | {"batch_size"})
    batch_size = merged.pop("batch_size", args.batch_size)
    try:
        config = BetaProductConfig(**merged)
        if batch_size is not None:
            schedule = config.r_schedule
            if any(r % batch_size for r in schedule):
                raise ValueError("batch size must divide every R in the schedule")
            config = BetaProductConfig(**{**merged,
                                          "n_batches": schedule[0] // batch_size})
    except (ValueError, TypeError) as exc:
        raise CliError("E_CONFIG", str(exc))
    rows = beta_product_rows(config)
    write_csv(args.out, rows, BETA_PRODUCT_COLUMNS)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_gllvm(args) -> int:
    flags = {
        "n_items": args.p,
        "n_cases": args.cases,
        "n_factors": args.k,
        "n_kept": args.kept,
        "burn_in": args.burn_in,
        "thin": args.thin,
        "quad_order": args.quad_order,
        "n_batches": args.batches,
        "seed": args.seed,
    }
    file_values = _load_config_file(args.config)
    merged = _merge(flags, file_values, set(flags) | {"batch_size"})
    batch_size = merged.pop("batch_size", args.batch_size)
    try:
        if args.paper_scale:
            config = GllvmConfig.paper_scale(seed=merged.get("seed", 0))
            overrides = {k: v for k, v in merged.items() if k != "seed"}
            if overrides:
                from dataclasses import replace
                config = replace(config, **overrides)
        else:
            config = GllvmConfig(**merged)
        if batch_size is not None:
            if config.n_kept % batch_size:
                raise ValueError("batch size must divide the kept draw count")
            from dataclasses import replace
            config = replace(config, n_batches=config.n_kept // batch_size)
    except (ValueError, TypeError) as exc:
        raise CliError("E_CONFIG", str(exc))
    results = gllvm_results(config)
    stem = args.out[:-4] if args.out.endswith(".csv") else args.out
    write_csv(f"{stem}_table.csv", results.table_rows, GLLVM_TABLE_COLUMNS)
    write_csv(f"{stem}_batches.csv", results.batch_rows, GLLVM_BATCH_COLUMNS)
    write_csv(f"{stem}_diagnostics.csv", results.diagnostic_rows, GLLVM_DIAG_COLUMNS)
    print(f"wrote {stem}_table.csv, {stem}_batches.csv, {stem}_diagnostics.csv")
    return 0


def _cmd_verify(args) -> int:
    try:
        results = run_suite(args.suite)
    except ValueError as exc:
        raise CliError("E_CONFIG", str(exc))
    n_failed = sum(not r.passed for r in results)
    print(f"{len(results) - n_failed}/{len(results)} checks passed")
    return 1 if n_failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prodmc",
        description="Joint vs marginal Monte Carlo estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bp = sub.add_parser("beta-product",
                        help="estimate the mean of a product of i.i.d. Beta draws")
    bp.add_argument("--seed", type=int, default=None)
    bp.add_argument("--out", required=True)
    bp.add_argument("--config", default=None, help="JSON config file (wins on conflict)")
    bp.add_argument("--n", type=int, default=None, help="number of factors")
    bp.add_argument("--alpha", type=float, default=None, help="Beta shape 1")
    bp.add_argument("--beta", type=float, default=None, help="Beta shape 2")
    bp.add_argument("--r-schedule", default=None,
                    help="sample sizes: R, or R1,R2,..., or start:stop:step")
    bp.add_argument("--batches", type=int, default=None)
    bp.add_argument("--batch-size", type=int, default=None)
    bp.add_argument("--replicates", type=int, default=None)
    bp.add_argument("--threads", type=int, default=None)
    bp.set_defaults(func=_cmd_beta_product)

    gl = sub.add_parser("gllvm",
                        help="evidence estimation study on a simulated latent trait model")
    gl.add_argument("--seed", type=int, default=None)
    gl.add_argument("--out", required=True, help="output stem or .csv path")
    gl.add_argument("--config", default=None)
    gl.add_argument("--p", type=int, default=None, help="item count")
    gl.add_argument("--cases", type=int, default=None)
    gl.add_argument("--k", type=int, default=None, help="latent dimension")
    gl.add_argument("--kept", type=int, default=None, help="posterior draws kept")
    gl.add_argument("--burn-in", type=int, default=None)
    gl.add_argument("--thin", type=int, default=None)
    gl.add_argument("--quad-order", type=int, default=None)
    gl.add_argument("--batches", type=int, default=None)
    gl.add_argument("--batch-size", type=int, default=None)
    gl.add_argument("--paper-scale", action="store_true",
                    help="full protocol: 600 cases, k=2, 50k draws, 50 batches")
    gl.set_defaults(func=_cmd_gllvm)

    vf = sub.add_parser("verify", help="run the oracle verification suites")
    vf.add_argument("suite", nargs="?", default="all",
                    help="all, moments, variances, covariation, quadrature, conjugate")
    vf.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 -- CLI boundary
        print(f"ERROR E_RUNTIME: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

    genfwer adjust --input pvals.csv --method kfwer-sd --k 2 --alpha 0.05
    genfwer constants --method fdp-sd --s 100 --gamma 0.1 --alpha 0.05
    genfwer simulate --scenario independent-uniform --s 10 --procedure holm --alpha 0.05 --seed 1
    genfwer sharpness --construction thm21 --s 10 --k 3 --alpha 0.1 --seed 7

Exit codes: 0 success, 2 usage or validation error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import secrets
import sys
from dataclasses import dataclass
from pathlib import Path

from .core import PValueVector, as_rational
from .errors import ParameterError
from .procedures import METHODS, ProcedureSpec, apply_procedure, bh_thresholds, make_constants
from .simulation import (
    METRICS,
    SCENARIO_KINDS,
    Scenario,
    check_markov_sandwich,
    hommel_stress_betas,
    run_experiment,
    run_sharpness,
)

log = logging.getLogger("genfwer")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3


class InputFormatError(ParameterError):
    """A malformed input table; the message carries the line number."""


@dataclass(frozen=True)
class InputTable:
    rows: tuple[tuple[str, float], ...]
    source: str

    def to_pvalues(self) -> PValueVector:
        return PValueVector.from_pairs(self.rows)


def parse_input_table(text: str, source: str = "<input>") -> InputTable:
    """Parse an ``id,pvalue`` table. Raises :class:`InputFormatError` with a line number."""
    lines = text.splitlines()
    if not lines:
        raise InputFormatError(f"{source}: empty file, expected header 'id,pvalue'")
    header = lines[0].lstrip("﻿").strip()
    if header != "id,pvalue":
        raise InputFormatError(f"{source}:1: header must be exactly 'id,pvalue', got {header!r}")
    rows = []
    seen = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.rstrip("\r").split(",")
        if len(fields) != 2:
            raise InputFormatError(f"{source}:{lineno}: expected 2 comma-separated fields, got {len(fields)}")
        ident, raw = fields[0].strip(), fields[1].strip()
        if not ident:
            raise InputFormatError(f"{source}:{lineno}: empty id")
        if ident in seen:
            raise InputFormatError(f"{source}:{lineno}: duplicate id {ident!r} (first on line {seen[ident]})")
        try:
            p = float(raw)
        except ValueError:
            raise InputFormatError(f"{source}:{lineno}: pvalue {raw!r} is not a number") from None
        if not math.isfinite(p) or not 0.0 <= p <= 1.0:
            raise InputFormatError(f"{source}:{lineno}: pvalue {raw!r} outside [0, 1]")
        seen[ident] = lineno
        rows.append((ident, p))
    if not rows:
        raise InputFormatError(f"{source}: no data rows")
    return InputTable(tuple(rows), source)


def read_input_table(path: str) -> InputTable:
    if path == "-":
        return parse_input_table(sys.stdin.read(), "<stdin>")
    text = Path(path).read_text(encoding="utf-8")
    return parse_input_table(text, path)


def _write(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return repr(float(x))


def _betas(text: str | None):
    if text is None:
        return None
    try:
        return [float(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise ParameterError(f"cannot parse betas {text!r}; expected comma-separated numbers") from None


# ------------------------------------------------------------------ commands


def _procedure(args, method: str) -> ProcedureSpec:
    needs_k = method in ("kfwer-ss", "kfwer-sd")
    needs_gamma = method in ("fdp-sd", "fdp-hommel")
    if needs_k and args.k is None:
        raise ParameterError(f"--k is required for method {method}")
    if needs_gamma and args.gamma is None:
        raise ParameterError(f"--gamma is required for method {method}")
    return ProcedureSpec(
        method,
        args.alpha,
        k=args.k if needs_k else None,
        gamma=args.gamma if needs_gamma else None,
        harmonic_correction=getattr(args, "harmonic", False),
        reject_k_minus_1=getattr(args, "reject_k_minus_1", False),
    )


def cmd_adjust(args) -> int:
    spec = _procedure(args, args.method)
    table = read_input_table(args.input)
    report = apply_procedure(table.to_pvalues(), spec)
    if args.format == "json":
        out = report.to_dict()
        out["source"] = table.source
        _write(_json(out), args.output)
    else:
        rows = [(r.id, _num(r.p), r.rank, _num(r.threshold), str(r.rejected).lower(), _num(r.adjusted_p))
                for r in report.rows]
        _write(_csv(["id", "p", "rank", "threshold", "rejected", "adjusted_p"], rows), args.output)
    return EXIT_OK


def cmd_constants(args) -> int:
    if args.method in ("kfwer-ss", "kfwer-sd") and args.k is None:
        raise ParameterError(f"--k is required for method {args.method}")
    if args.method in ("fdp-sd", "fdp-hommel") and args.gamma is None:
        raise ParameterError(f"--gamma is required for method {args.method}")
    if args.method == "bh":
        alphas = bh_thresholds(args.s, args.alpha, args.harmonic)
    else:
        alphas = make_constants(args.method, args.s, args.alpha, args.k, args.gamma).alphas
    _write(_csv(["i", "alpha_i"], [(i, _num(a)) for i, a in enumerate(alphas, start=1)]), args.output)
    return EXIT_OK


def _seed(args) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise ParameterError("--seed must be nonnegative")
        return args.seed
    seed = secrets.randbits(63)
    log.warning("no --seed given; using %d. Runs are only reproducible with an explicit seed.", seed)
    return seed


def _scenario(args, spec: ProcedureSpec) -> Scenario:
    kind = args.scenario
    k = args.scenario_k if args.scenario_k is not None else args.k
    alpha = args.scenario_alpha if args.scenario_alpha is not None else args.alpha
    betas = _betas(args.betas)
    if kind == "adversarial-lemma31" and betas is None:
        gamma = args.gamma if args.gamma is not None else spec.gamma
        if gamma is None:
            raise ParameterError("adversarial-lemma31 needs --betas or --gamma to derive them")
        s0 = args.s if args.s0 is None else args.s0
        betas = list(hommel_stress_betas(args.s, s0, gamma, alpha))
    return Scenario(
        kind,
        args.s,
        s0=args.s0,
        effect=args.effect,
        rho=args.rho,
        k=k if kind in ("adversarial-thm21", "adversarial-thm23") else None,
        i=args.i if kind == "adversarial-thm23" else None,
        alpha=float(as_rational(alpha, "alpha")) if kind == "adversarial-thm23" else None,
        inflation=args.inflation,
        betas=tuple(betas) if kind == "adversarial-lemma31" else None,
    )


def _plot_rows_param(d: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in d.items())


def cmd_simulate(args) -> int:
    if args.replicates < 1:
        raise ParameterError("--replicates must be at least 1")
    if args.threads < 1:
        raise ParameterError("--threads must be at least 1")
    spec = _procedure(args, args.procedure)
    scn = _scenario(args, spec)
    metrics = None if args.metrics is None else [m.strip() for m in args.metrics.split(",") if m.strip()]
    seed = _seed(args)
    report = run_experiment(scn, spec, metrics, args.replicates, seed, args.threads,
                            k=args.metric_k, gamma=args.metric_gamma)
    out = report.to_dict()
    if "fdr" in report.metrics and "fdp-exceed" in report.metrics:
        out["markov_sandwich"] = check_markov_sandwich(report).to_dict()
    if args.format == "json":
        _write(_json(out), args.output)
    else:
        rows = [(m, _num(e.estimate), _num(e.se), e.n) for m, e in report.metrics.items()]
        _write(_csv(["metric", "estimate", "se", "n"], rows), args.output)
    if args.plot_data:
        param = _plot_rows_param({**spec.to_dict(), **{f"scenario.{k}": v for k, v in scn.to_dict().items()}})
        rows = [(m, param, _num(e.estimate), _num(e.se)) for m, e in report.metrics.items()]
        Path(args.plot_data).write_text(_csv(["metric", "parameter", "estimate", "se"], rows), encoding="utf-8")
    return EXIT_OK


def cmd_sharpness(args) -> int:
    if args.replicates < 1:
        raise ParameterError("--replicates must be at least 1")
    if args.threads < 1:
        raise ParameterError("--threads must be at least 1")
    c = args.construction
    betas = _betas(args.betas)

    def need(*names):
        for n in names:
            if getattr(args, n) is None:
                raise ParameterError(f"construction {c} requires --{n.replace('_', '-')}")

    if args.alpha is not None:
        args.alpha = float(as_rational(args.alpha, "alpha"))
    if c == "thm21":
        need("s", "k", "alpha")
        params = {"s": args.s, "k": args.k, "alpha": args.alpha}
    elif c == "thm23":
        need("s", "k", "i", "alpha")
        params = {"s": args.s, "k": args.k, "i": args.i, "alpha": args.alpha, "inflation": args.inflation}
    elif c == "lemma21":
        need("betas")
        u = args.u if args.u is not None else 1.0
        params = {"betas": betas, "u": u}
    else:
        need("t", "betas")
        params = {"t": args.t, "betas": betas}
    seed = _seed(args)
    report = run_sharpness(c, params, args.replicates, seed, args.threads)
    _write(_json(report.to_dict()), args.output)
    if args.plot_data:
        param = _plot_rows_param(report.params)
        rows = [(f"{c}-event", param, _num(report.estimate), _num(report.se)),
                (f"{c}-target", param, _num(report.target), _num(0.0))]
        Path(args.plot_data).write_text(_csv(["metric", "parameter", "estimate", "se"], rows), encoding="utf-8")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _fraction_arg(text: str) -> str:
    # validated (and converted exactly) by the procedures layer
    return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genfwer", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common_levels(sp):
        sp.add_argument("--alpha", type=_fraction_arg, required=True, help="level in (0, 1), decimal or fraction")
        sp.add_argument("--k", type=int, help="tolerated false rejections (kfwer-*)")
        sp.add_argument("--gamma", type=_fraction_arg, help="FDP bound in (0, 1), decimal or fraction (fdp-*)")
        sp.add_argument("--harmonic", action="store_true", help="bh only: replace q by q/C_s")

    a = sub.add_parser("adjust", help="apply a procedure to a p-value file")
    a.add_argument("--input", "-i", required=True, help="CSV with header id,pvalue ('-' for stdin)")
    a.add_argument("--method", required=True, choices=METHODS)
    common_levels(a)
    a.add_argument("--format", choices=("json", "csv"), default="json")
    a.add_argument("--output", "-o")
    a.set_defaults(func=cmd_adjust)

    c = sub.add_parser("constants", help="print critical constants as i,alpha_i")
    c.add_argument("--method", required=True, choices=METHODS)
    c.add_argument("--s", type=int, required=True)
    common_levels(c)
    c.add_argument("--output", "-o")
    c.set_defaults(func=cmd_constants)

    s = sub.add_parser("simulate", help="Monte Carlo error rates of a procedure")
    s.add_argument("--scenario", required=True, choices=SCENARIO_KINDS)
    s.add_argument("--s", type=int, required=True)
    s.add_argument("--s0", type=int)
    s.add_argument("--effect", type=float, default=0.0, help="mean shift of false nulls (normal kinds)")
    s.add_argument("--rho", type=float, default=0.0, help="common correlation (equicorrelated-normal)")
    s.add_argument("--scenario-k", type=int, help="k of adversarial scenarios (default --k)")
    s.add_argument("--scenario-alpha", type=_fraction_arg, help="alpha of adversarial-thm23 (default --alpha)")
    s.add_argument("--i", type=int, help="step index (adversarial-thm23)")
    s.add_argument("--inflation", type=float, default=1.0, help="factor on alpha_i (adversarial-thm23)")
    s.add_argument("--betas", help="comma-separated betas (adversarial-lemma31)")
    s.add_argument("--procedure", required=True, choices=METHODS)
    common_levels(s)
    s.add_argument("--reject-k-minus-1", action="store_true",
                   help="also reject the k-1 smallest p-values regardless of the data")
    s.add_argument("--metrics", help=f"comma-separated subset of {','.join(METRICS)}")
    s.add_argument("--metric-k", type=int, help="k for the kfwer metric (default: procedure k or 1)")
    s.add_argument("--metric-gamma", type=_fraction_arg, help="gamma for fdp-exceed (default: procedure gamma)")
    s.add_argument("--replicates", type=int, default=100_000)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--output", "-o")
    s.add_argument("--plot-data", help="also write long-format CSV metric,parameter,estimate,se here")
    s.set_defaults(func=cmd_simulate)

    h = sub.add_parser("sharpness", help="Monte Carlo check that a sharp construction attains its bound")
    h.add_argument("--construction", required=True, choices=("thm21", "thm23", "lemma21", "lemma31"))
    h.add_argument("--s", type=int)
    h.add_argument("--k", type=int)
    h.add_argument("--i", type=int)
    h.add_argument("--alpha", type=_fraction_arg)
    h.add_argument("--inflation", type=float, default=1.0)
    h.add_argument("--betas", help="comma-separated, nondecreasing")
    h.add_argument("--u", type=float, help="upper end of the marginal support (lemma21, default 1)")
    h.add_argument("--t", type=int, help="number of p-values (lemma31)")
    h.add_argument("--replicates", type=int, default=100_000)
    h.add_argument("--seed", type=int)
    h.add_argument("--threads", type=int, default=1)
    h.add_argument("--output", "-o")
    h.add_argument("--plot-data", help="also write long-format CSV metric,parameter,estimate,se here")
    h.set_defaults(func=cmd_sharpness)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"genfwer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"genfwer {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

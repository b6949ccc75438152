"""Command-line front end.

Every command produces a :class:`ResultTable` plus a summary dict and
writes it as CSV or JSON together with a manifest of the resolved
parameters.  ``replay`` re-runs the manifest stored in a result file and
diffs the regenerated output against the file.

Exit codes: 0 success, 1 replay mismatch or other failure, 2 usage error,
3 validation error, 4 work budget exceeded.

Config files (``--config``) are flat ``key = value`` lines whose keys are
option names with ``-`` or ``_``; command-line flags take precedence over
the file, which takes precedence over built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import difflib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import bitwise, bounds, rappor, rnip
from .errors import BudgetExceededError, UntrackableError, ValidationError
from .mechanisms import PermanentStateMechanism, exact_everlasting_epsilon, exact_undetectable_gamma
from .mechanisms import exact_untrackable_gamma
from .prob import SeededRng

SEED_ENV = "UNTRACKABLE_SEED"
MANIFEST_SCHEMA = "untrackable/manifest/v1"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_VALIDATION, EXIT_BUDGET = 0, 1, 2, 3, 4

# manifest keys that do not affect the result
_VOLATILE = {"out", "config", "format", "handler", "timestamp"}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list[Any]]
    note: str = ""
    summary: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise ValueError(f"row {i} has {len(row)} cells, expected {len(self.columns)}")


def _plain(x: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-friendly values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in list(x)]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def render(table: ResultTable, manifest: dict[str, Any], fmt: str) -> str:
    if fmt == "json":
        doc = {
            "manifest": manifest,
            "note": table.note,
            "summary": _plain(table.summary),
            "columns": table.columns,
            "rows": _plain(table.rows),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# manifest: {json.dumps(manifest, sort_keys=True)}\n")
    if table.note:
        buf.write(f"# note: {table.note}\n")
    if table.summary:
        buf.write(f"# summary: {json.dumps(_plain(table.summary), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in _plain(row)])
    return buf.getvalue()


def read_manifest(text: str) -> tuple[dict[str, Any], str]:
    """Return ``(manifest, format)`` embedded in a result file."""
    if text.startswith("# manifest: "):
        first = text.split("\n", 1)[0]
        return json.loads(first[len("# manifest: ") :]), "csv"
    try:
        return json.loads(text)["manifest"], "json"
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError("file does not contain a result manifest") from exc


# commands


def _row(name: str, value: float, rule: str) -> list:
    return [name, float(value), rule]


def cmd_bounds(a: argparse.Namespace) -> ResultTable:
    cols = ["quantity", "value", "rule"]
    if a.bound == "chain":
        e1, e2 = _need(a, "eps1", "eps2")
        rows = [
            _row("basic", bounds.basic_chain(e1, e2), "basic chaining"),
            _row("advanced", bounds.advanced_chain(e1, e2), "advanced chaining"),
            _row("corollary", bounds.corollary_chain(e1, e2), "small-epsilon chaining"),
        ]
    elif a.bound == "compose":
        eps, k, dp = _need(a, "eps", "k", "delta_prime")
        if a.kind == "dp":
            out = bounds.dp_advanced_composition(bounds.PrivacyBound(eps, a.delta), k, dp)
            rows = [_row("epsilon", out.epsilon, "advanced composition"), _row("delta", out.delta, "advanced composition")]
        else:
            out = bounds.untrackable_advanced_composition(bounds.TrackabilityBound(eps, a.delta), k, dp)
            rows = [
                _row("gamma", out.gamma, "untrackable composition"),
                _row("delta", out.delta, "untrackable composition"),
            ]
    elif a.bound == "permanent":
        eps, k = _need(a, "eps", "k")
        rows = [_row("gamma", bounds.permanent_state_untrackable(eps, k), "permanent-state untrackability")]
    elif a.bound == "multiuser":
        (n,) = _need(a, "n")
        rows = []
        if a.gamma is not None:
            rows.append(_row("gamma_from_pair", bounds.multi_user_untrackable(a.gamma, n), "multi-user untrackability"))
        if a.eps is not None and a.k is not None:
            rows.append(
                _row(
                    "gamma_permanent",
                    bounds.multi_user_permanent_untrackable(a.eps, a.k, n),
                    "multi-user permanent-state untrackability",
                )
            )
        if not rows:
            raise _Usage("multiuser needs --gamma, or --eps with --k")
    else:  # undetectable
        gamma, eps = _need(a, "gamma", "eps")
        out = bounds.undetectable_bound(
            bounds.TrackabilityBound(gamma, a.delta), bounds.PrivacyBound(eps, a.delta_prime or 0.0)
        )
        rows = [_row("gamma", out.gamma, "undetectability"), _row("delta", out.delta, "undetectability")]
    return ResultTable(cols, rows, note=f"bounds {a.bound}")


def _rappor_params(a: argparse.Namespace) -> rappor.RapporParams:
    return rappor.RapporParams(a.s, a.h, a.f, a.p, a.q, a.hash_seed)


def cmd_rappor_worst_case(a: argparse.Namespace) -> ResultTable:
    params = _rappor_params(a)
    if a.k_max < a.k_min:
        raise ValidationError("k-max must be >= k-min")
    rows = [[k, rappor.worst_case_gamma(params, k, a.set_bits)] for k in range(a.k_min, a.k_max + 1)]
    return ResultTable(["k", "gamma"], rows, note="exact worst-case trackability of RAPPOR report sets")


def _k_list(text: str) -> list[int]:
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValidationError("empty k list")
    return out


def cmd_rappor_percentiles(a: argparse.Namespace) -> ResultTable:
    params = _rappor_params(a)
    rng = SeededRng(a.seed)
    rows = []
    for k in _k_list(a.k):
        med, p90 = rappor.estimate_trackability_percentiles(
            params,
            k,
            a.nsamps,
            rng.substream(k),
            confidence=a.confidence,
            statistic=a.statistic,
            distinct_bits=not a.allow_collisions,
            workers=a.workers,
        )
        rows.append([k, med.point, med.ci_low, med.ci_high, p90.point, p90.ci_low, p90.ci_high])
    cols = ["k", "median", "med_lo", "med_hi", "p90", "p90_lo", "p90_hi"]
    return ResultTable(cols, rows, note="Monte-Carlo percentiles of the RAPPOR trackability random variable")


def cmd_simulate_bitwise(a: argparse.Namespace) -> ResultTable:
    if a.n < 1 or a.rounds < 1:
        raise _Usage("--n and --rounds must be >= 1")
    params = bitwise.BitwiseParams(a.eps1, a.eps2)
    res = bitwise.simulate(params, a.n, a.p0, a.rounds, SeededRng(a.seed), beta=a.beta)
    shown = np.clip(res.estimates, 0.0, 1.0) if a.clip else res.estimates
    summary = {
        "p0_true": res.p0_true,
        "p0_est_per_round": shown.tolist(),
        "bound": res.bound,
        "beta": a.beta,
        "violations": res.violations,
        "clipped": bool(a.clip),
    }
    rows = [[r, float(e), float(abs(u - res.p0_true))] for r, (e, u) in enumerate(zip(shown, res.estimates))]
    return ResultTable(["round", "p0_est", "abs_error"], rows, note="bitwise frequency oracle", summary=summary)


def cmd_simulate_rnip(a: argparse.Namespace) -> ResultTable:
    if a.n < 1 or a.rounds < 1:
        raise _Usage("--n and --rounds must be >= 1")
    if a.alpha is not None:
        params = rnip.select_parameters(a.eps, a.delta, a.alpha, a.beta, a.n, a.d)
    else:
        params = rnip.RnipParams.from_privacy(a.d, a.L, a.eps, a.delta)
    rng = SeededRng(a.seed)
    res = rnip.simulate(params, a.n, a.rounds, rng.substream(0), beta=a.beta)
    coll = rnip.empirical_collision_rate(params, a.k, a.trials, rng.substream(1))
    summary = {
        "params": {"d": params.d, "L": params.L, "eps": params.eps, "delta": params.delta, "eps_prime": params.eps_prime},
        "linf_error_per_round": res.linf_errors.tolist(),
        "estimate_sum_per_round": res.sums.tolist(),
        "bound": res.bound,
        "beta": a.beta,
        "violations": res.violations,
        "collision_rate": {"one_user": coll.one_user, "two_users": coll.two_users},
        "untrackable_delta": rnip.untrackable_delta(a.k, params.L, params.d),
    }
    rows = [[r, float(e), float(s)] for r, (e, s) in enumerate(zip(res.linf_errors, res.sums))]
    return ResultTable(["round", "linf_error", "estimate_sum"], rows, note="noisy inner product frequency oracle", summary=summary)


def cmd_distinguish(a: argparse.Namespace) -> ResultTable:
    mech = PermanentStateMechanism.load(a.mechanism)
    eps_report = mech.report_epsilon()
    rows = []
    for k in range(1, a.k_max + 1):
        rows.append(
            [
                k,
                exact_untrackable_gamma(mech, k, a.budget),
                exact_everlasting_epsilon(mech, k, a.budget),
                exact_undetectable_gamma(mech, k, a.budget),
                bounds.permanent_state_untrackable(eps_report, k) if np.isfinite(eps_report) else float("inf"),
            ]
        )
    cols = ["k", "gamma_exact", "eps_exact", "undetect_exact", "permanent_state_bound"]
    return ResultTable(cols, rows, note="exact pure parameters by enumeration")


# parser


class _Usage(Exception):
    pass


def _need(a: argparse.Namespace, *names: str) -> list:
    missing = [n for n in names if getattr(a, n, None) is None]
    if missing:
        raise _Usage("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return [getattr(a, n) for n in names]


def _add_rappor_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--s", type=int, default=128, help="Bloom filter bits")
    p.add_argument("--h", type=int, default=2, help="hash functions")
    p.add_argument("--f", type=float, default=0.5, help="permanent randomization probability")
    p.add_argument("--p", type=float, default=0.5, help="Pr[report bit 1 | B'=0]")
    p.add_argument("--q", type=float, default=0.75, help="Pr[report bit 1 | B'=1]")
    p.add_argument("--hash-seed", type=int, default=0)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    def global_opts(default) -> argparse.ArgumentParser:
        # subcommands repeat the global options with suppressed defaults so a
        # value given before the command name is not reset by the subparser
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--format", choices=("csv", "json"), default=default)
        g.add_argument("--out", default=default, help="write the result here instead of stdout")
        g.add_argument("--config", default=default, help="flat key = value file")
        g.add_argument("--seed", type=int, default=default, help=f"master seed (default ${SEED_ENV} or 0)")
        return g

    common = global_opts(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(
        prog="untrackable", description=__doc__.split("\n\n")[0], parents=[global_opts(None)]
    )
    sub = parser.add_subparsers(dest="command", required=True)
    leaves: dict[str, argparse.ArgumentParser] = {}

    def leaf(parent, name: str, key: str, handler: Callable, **kw) -> argparse.ArgumentParser:
        p = parent.add_parser(name, parents=[common], **kw)
        p.set_defaults(handler=handler, leaf=key)
        leaves[key] = p
        return p

    pb = sub.add_parser("bounds", help="closed-form bound calculator").add_subparsers(dest="bound", required=True)
    p = leaf(pb, "chain", "bounds chain", cmd_bounds)
    p.add_argument("--eps1", type=float)
    p.add_argument("--eps2", type=float)
    p = leaf(pb, "compose", "bounds compose", cmd_bounds)
    p.add_argument("--kind", choices=("dp", "untrackable"), default="dp")
    p.add_argument("--eps", type=float, help="epsilon (or gamma for --kind untrackable)")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--k", type=int)
    p.add_argument("--delta-prime", type=float)
    p = leaf(pb, "permanent", "bounds permanent", cmd_bounds)
    p.add_argument("--eps", type=float)
    p.add_argument("--k", type=int)
    p = leaf(pb, "multiuser", "bounds multiuser", cmd_bounds)
    p.add_argument("--n", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--k", type=int)
    p = leaf(pb, "undetectable", "bounds undetectable", cmd_bounds)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float, default=0.0, help="untrackability delta")
    p.add_argument("--delta-prime", type=float, default=0.0, help="everlasting-privacy delta")

    pr = sub.add_parser("rappor", help="RAPPOR trackability").add_subparsers(dest="analysis", required=True)
    p = leaf(pr, "worst-case", "rappor worst-case", cmd_rappor_worst_case)
    _add_rappor_opts(p)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=15)
    p.add_argument("--set-bits", type=int, default=None, help="1s in the Bloom filter (default h)")
    p = leaf(pr, "percentiles", "rappor percentiles", cmd_rappor_percentiles)
    _add_rappor_opts(p)
    p.add_argument("--k", default="2-15", help="report counts, e.g. 2,7,10 or 2-15")
    p.add_argument("--nsamps", type=int, default=10000)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--statistic", choices=rappor.STATISTICS, default="signed")
    p.add_argument("--allow-collisions", action="store_true", help="hash positions may coincide")
    p.add_argument("--workers", type=int, default=1)

    ps = sub.add_parser("simulate", help="frequency oracle simulations").add_subparsers(dest="target", required=True)
    p = leaf(ps, "bitwise", "simulate bitwise", cmd_simulate_bitwise)
    p.add_argument("--n", type=int, default=100000)
    p.add_argument("--p0", type=float, default=0.3)
    p.add_argument("--eps1", type=float, default=1.0)
    p.add_argument("--eps2", type=float, default=1.0)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--clip", action="store_true", help="clip reported estimates to [0, 1]")
    p = leaf(ps, "rnip", "simulate rnip", cmd_simulate_rnip)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--n", type=int, default=50000)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-4)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--L", type=int, default=1)
    group.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--k", type=int, default=3, help="report count for the collision estimate")
    p.add_argument("--trials", type=int, default=10000)

    p = leaf(sub, "distinguish", "distinguish", cmd_distinguish, help="exact oracles for a JSON mechanism")
    p.add_argument("mechanism", nargs="?", help="mechanism JSON document")
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--budget", type=int, default=10_000_000)

    p = sub.add_parser("replay", parents=[common], help="re-run a result file's manifest and diff")
    p.add_argument("result", help="CSV or JSON result file")
    p.set_defaults(leaf="replay")
    leaves["replay"] = p
    return parser, leaves


def read_config(path: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _Usage(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(leaf: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Use config values as defaults of the chosen command, then reparse so flags still win."""
    by_dest = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, raw in values.items():
        if key in ("config", "out"):
            continue
        action = by_dest.get(key)
        if action is None:
            raise _Usage(f"config key {key!r} is not an option of this command")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
            if action.choices is not None and value not in action.choices:
                raise _Usage(f"config key {key!r}: {raw!r} is not one of {list(action.choices)}")
            defaults[key] = value
    leaf.set_defaults(**defaults)


def _resolve_seed(a: argparse.Namespace) -> int:
    if a.seed is not None:
        return a.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise _Usage(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _params_of(a: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in sorted(vars(a).items()) if k not in _VOLATILE and k != "leaf"}


def run_params(params: dict[str, Any], fmt: str | None, timestamp: str) -> str:
    """Execute a command from a resolved parameter dict and render its output."""
    parser, leaves = build_parser()
    key = params.get("leaf_key")
    if key not in leaves or key == "replay":
        raise ValidationError(f"manifest names an unknown command {key!r}")
    ns = leaves[key].parse_args([])
    for k, v in params.items():
        if k != "leaf_key":
            setattr(ns, k, v)
    table = ns.handler(ns)
    fmt = fmt or ("json" if key.startswith("simulate") else "csv")
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "kind": key,
        "parameters": params,
        "seed": params.get("seed"),
        "tool_version": _version(),
        "timestamp": timestamp,
    }
    return render(table, manifest, fmt)


def _replay(path: str) -> int:
    text = Path(path).read_text()
    manifest, fmt = read_manifest(text)
    regenerated = run_params(manifest["parameters"], fmt, manifest.get("timestamp", ""))
    if regenerated == text:
        print(f"replay: {path} reproduced exactly")
        return EXIT_OK
    diff = difflib.unified_diff(text.splitlines(True), regenerated.splitlines(True), path, "replayed")
    sys.stdout.writelines(diff)
    return EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if a.leaf == "replay":
            return _replay(a.result)
        if a.config:
            _apply_config(leaves[a.leaf], read_config(a.config))
            try:
                a = parser.parse_args(argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        a.seed = _resolve_seed(a)
        if a.leaf == "distinguish" and not a.mechanism:
            raise _Usage("distinguish needs a mechanism JSON path")
        if a.leaf == "distinguish":
            # so replay from another directory finds the same file
            a.mechanism = str(Path(a.mechanism).resolve())
        params = dict(_params_of(a), leaf_key=a.leaf)
        params.pop("handler", None)
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        text = run_params(params, a.format, stamp)
    except _Usage as exc:
        leaves.get(getattr(a, "leaf", ""), parser).print_usage(sys.stderr)
        print(f"untrackable: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceededError as exc:
        print(f"untrackable: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValidationError, ValueError) as exc:
        print(f"untrackable: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (UntrackableError, OSError) as exc:
        print(f"untrackable: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""``at2`` command line.

Results go to stdout as ``key=value`` lines or CSV; prose goes to stderr.
Exit status: 0 when everything checked holds, 1 on a violated invariant, 2
on a usage error.
"""
from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Optional, Sequence

from . import analysis, scenarios
from .analysis import EchoSetting, ModelRangeError
from .at2_mp import Workload
from .broadcast_prob import EchoParams
from .simnet import ConfigError, auto_byzantine, parse_byzantine, parse_config_text

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

MAX_SM_PROCESSES = 4
MAX_SM_OPS = 6

ECHO_KEYS = ("G", "E", "E_hat", "R", "R_hat", "D", "D_hat")
INT_SWEEP_KEYS = {"N", "E", "E_hat", "R", "R_hat", "D", "D_hat"}
SWEEP_KEYS = ("N", "f") + ECHO_KEYS

# dest -> (parser for config-file values, default once flags and file are merged)
MERGEABLE: dict[str, tuple[Callable[[str], object], object]] = {
    "protocol": (str, "at2d"),
    "n": (int, None),
    "f": (float, None),
    "byzantine": (str, None),
    "adversary": (str, None),
    "seed": (int, 0),
    "max_delay": (int, 10),
    "transfers": (int, 3),
    "initial": (int, 10),
    "G": (float, 10.0),
    "E": (int, 10),
    "E_hat": (int, 8),
    "R": (int, 10),
    "R_hat": (int, 4),
    "D": (int, 10),
    "D_hat": (int, 8),
}


class UsageError(Exception):
    pass


def _say(*parts) -> None:
    print(*parts, file=sys.stderr)


def _emit(key: str, value) -> None:
    print(f"{key}={value}")


def _ok(flag: bool) -> str:
    return "ok" if flag else "violated"


# --- argument parsing ---------------------------------------------------------------


def _add_echo_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    for key in ECHO_KEYS:
        flag = "--" + key.replace("_", "-")
        typ = float if key == "G" else int
        p.add_argument(flag, dest=key, type=typ, default=None if not defaults else MERGEABLE[key][1])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="at2", description="asset transfer without consensus")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-sim", help="simulate AT2 over a broadcast and check its invariants")
    p.add_argument("--config", help="key=value scenario file; flags override its entries")
    p.add_argument("--protocol", choices=("at2d", "at2p"))
    p.add_argument("--n", type=int)
    p.add_argument("--f", type=float)
    p.add_argument("--byzantine", help='comma-separated ids or "auto"')
    p.add_argument("--adversary", choices=("crash", "equivocate"))
    p.add_argument("--seed", type=int)
    p.add_argument("--max-delay", dest="max_delay", type=int)
    p.add_argument("--transfers", type=int, help="transfers issued per correct process")
    p.add_argument("--initial", type=int, help="initial balance of every account")
    p.add_argument("--trace-out", help="write the event trace as CSV")
    _add_echo_flags(p, defaults=False)

    p = sub.add_parser("sm-check", help="linearizability check of the shared-memory object")
    p.add_argument("--processes", type=int, default=3)
    p.add_argument("--ops", type=int, default=4)
    p.add_argument("--schedules", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("consensus-demo", help="consensus from a k-shared asset-transfer object")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--schedules", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("kshared", "atomic"), default="kshared")
    p.add_argument("--exhaustive", action="store_true", help="every interleaving instead of random ones")

    p = sub.add_parser("epsilon-curve", help="analytic epsilon over a parameter sweep, as CSV")
    p.add_argument(
        "--property", required=True, choices=("gossip-totality", "validity", "totality", "consistency")
    )
    p.add_argument("--sweep", required=True, help="param=lo:hi:step (inclusive)")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--f", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_echo_flags(p, defaults=True)

    p = sub.add_parser("cross-validate", help="simulated violation rate against the analytic epsilon")
    p.add_argument(
        "--property", required=True, choices=("gossip-totality", "validity", "totality", "consistency")
    )
    p.add_argument("--N", type=int, default=50)
    p.add_argument("--f", type=float, default=0.1)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    _add_echo_flags(p, defaults=True)
    return parser


def merge_config(args: argparse.Namespace, text: Optional[str]) -> argparse.Namespace:
    """Fill unset flags from config text, then from defaults.  Flags win."""
    entries = parse_config_text(text) if text is not None else {}
    for key, raw in entries.items():
        if key not in MERGEABLE:
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, key, None) is None:
            convert = MERGEABLE[key][0]
            try:
                setattr(args, key, convert(raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    for key, (_, default) in MERGEABLE.items():
        if getattr(args, key, None) is None:
            setattr(args, key, default)
    return args


def parse_sweep(spec: str) -> tuple[str, list]:
    try:
        name, rng = spec.split("=", 1)
        lo, hi, step = (float(x) for x in rng.split(":"))
    except ValueError as exc:
        raise UsageError(f"sweep must look like param=lo:hi:step, got {spec!r}") from exc
    name = name.strip()
    if name not in SWEEP_KEYS:
        raise UsageError(f"cannot sweep {name!r}; choose from {', '.join(SWEEP_KEYS)}")
    if step <= 0 or not math.isfinite(step):
        raise UsageError("sweep step must be positive")
    values = []
    i = 0
    while lo + i * step <= hi + 1e-9 * max(1.0, abs(hi)):
        v = round(lo + i * step, 12)
        if name in INT_SWEEP_KEYS:
            if v != int(v):
                raise UsageError(f"{name} takes integer values, got {v}")
            v = int(v)
        values.append(v)
        i += 1
    return name, values


# --- commands -----------------------------------------------------------------------


def cmd_run_sim(args) -> int:
    text = None
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    merge_config(args, text)
    if args.n is None:
        raise UsageError("--n is required (flag or config)")
    if args.transfers < 0 or args.initial < 0:
        raise UsageError("--transfers and --initial must be non-negative")
    workload = Workload(count=args.transfers, max_amount=max(1, args.initial))

    if args.protocol == "at2d":
        adversary = args.adversary or "equivocate"
        if adversary not in ("crash", "equivocate"):
            raise UsageError(f"at2d supports the crash and equivocate adversaries, not {adversary!r}")
        if args.byzantine is None:
            byz = auto_byzantine(args.n, args.f) if args.f is not None else frozenset({args.n - 1})
        else:
            byz = parse_byzantine(args.byzantine, args.n, args.f)
        if 3 * len(byz) >= args.n:
            _say(f"warning: {len(byz)} Byzantine of {args.n} is not below a third")
        out = scenarios.at2d_trial(
            args.n, byz, args.seed, adversary, workload, args.initial,
            trace="full" if args.trace_out else "hash", max_delay=args.max_delay,
            export=args.trace_out,
        )
    else:
        adversary = args.adversary or "crash"
        if adversary != "crash":
            raise UsageError("at2p runs with silent (crash) Byzantine processes only")
        f = args.f if args.f is not None else 0.0
        byz = parse_byzantine(args.byzantine, args.n, f) if args.byzantine else None
        try:
            params = EchoParams(*(getattr(args, k) for k in ECHO_KEYS))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        out = scenarios.at2p_trial(
            args.n, f, params, args.seed, workload, args.initial,
            trace="full" if args.trace_out else "hash", byzantine=byz,
            max_delay=args.max_delay, export=args.trace_out,
        )
        byz = byz if byz is not None else auto_byzantine(args.n, f)

    _emit("protocol", args.protocol)
    _emit("n", args.n)
    _emit("byzantine", ",".join(str(b) for b in sorted(byz)))
    _emit("adversary", adversary)
    _emit("seed", args.seed)
    _emit("digest", out.digest)
    _emit("messages_delivered", out.delivered_messages)
    _emit("successful_transfers", out.successes)
    for pid, bal in out.balances.items():
        _emit(f"balance.{pid}", bal)
    for pid, count in out.applied.items():
        _emit(f"delivered.{pid}", count)
    _emit("conflicting_transfers", out.conflicting)
    _emit("negative_balances", out.negative_balances)
    _emit("source_order", _ok(out.order_ok))
    _emit("hist_agreement", "ok" if out.hist_agree else "diverged")
    _emit("unresolved_transfers", out.unresolved)

    violated = not out.safe
    if args.protocol == "at2d":
        # the quorum broadcast is deterministic, so agreement and liveness are invariants too
        violated = violated or not out.live
    if out.conflicting == 0:
        _say("no conflicting transfers applied")
    _say("verdict:", "VIOLATION" if violated else "ok")
    return EXIT_VIOLATION if violated else EXIT_OK


def cmd_sm_check(args) -> int:
    from .shared_memory import sm_check

    if not 1 <= args.processes <= MAX_SM_PROCESSES:
        raise UsageError(f"--processes must lie in [1, {MAX_SM_PROCESSES}]")
    if not 0 <= args.ops <= MAX_SM_OPS:
        raise UsageError(f"--ops must lie in [0, {MAX_SM_OPS}]")
    if args.schedules < 0:
        raise UsageError("--schedules must be non-negative")
    report = sm_check(args.processes, args.ops, args.schedules, args.seed)
    _emit("schedules", report.schedules)
    _emit("violations", report.violations)
    _emit("inconclusive", report.inconclusive)
    _emit("negative_balances", report.negative_balances)
    _say(f"{report.violations} violations")
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_consensus_demo(args) -> int:
    from .kshared import consensus_exhaustive, consensus_random

    if not 1 <= args.k <= MAX_SM_PROCESSES:
        raise UsageError(f"--k must lie in [1, {MAX_SM_PROCESSES}]")
    if args.schedules < 0:
        raise UsageError("--schedules must be non-negative")
    if args.exhaustive:
        report = consensus_exhaustive(args.k, args.backend)
    else:
        report = consensus_random(args.k, args.schedules, args.seed, args.backend)
    _emit("runs", report.runs)
    _emit("agreement", _ok(report.agreement_failures == 0))
    _emit("validity", _ok(report.validity_failures == 0))
    _emit("undecided", report.undecided)
    _say(f"agreement: {_ok(report.agreement_failures == 0)}, validity: {_ok(report.validity_failures == 0)}")
    return EXIT_OK if report.ok else EXIT_VIOLATION


def _base_setting(args) -> dict:
    base = {"N": args.N, "f": args.f}
    base.update({k: getattr(args, k) for k in ECHO_KEYS})
    return base


def epsilon_for(prop: str, values: dict) -> analysis.EpsilonBound:
    if prop == "gossip-totality":
        return analysis.gossip_totality_bound(values["G"], values["f"], values["N"])
    setting = EchoSetting(**values)
    return analysis.pde_property_bounds(setting)[prop]


def cmd_epsilon_curve(args) -> int:
    name, points = parse_sweep(args.sweep)
    base = _base_setting(args)
    rows = []
    for v in points:
        values = dict(base, **{name: v})
        try:
            bound = epsilon_for(args.property, values)
        except ModelRangeError as exc:
            raise UsageError(f"{name}={v}: {exc}") from exc
        except ValueError as exc:
            raise UsageError(f"{name}={v}: {exc}") from exc
        # gossip bounds only carry N, f, G; show the sweep point regardless
        rows.append(analysis.EpsilonBound(
            bound.property, bound.epsilon, bound.method, dict(bound.params, **{name: v}), bound.samples
        ))
    analysis.write_csv(rows, sys.stdout)
    _say(f"{len(rows)} rows")
    return EXIT_OK


def _violated(prop: str, values: dict, seed: int) -> bool:
    n, f = values["N"], values["f"]
    if prop == "gossip-totality":
        return scenarios.gossip_trial(n, f, values["G"], seed).totality_violated
    params = EchoParams(*(values[k] for k in ECHO_KEYS))
    if prop == "validity":
        return scenarios.echo_trial(n, f, params, seed).validity_violated
    if prop == "consistency":
        return scenarios.split_trial(n, f, params, seed).consistency_violated
    return scenarios.trickle_trial(n, f, params, seed).totality_violated


def violation_flags(prop: str, values: dict, seeds: Sequence[int], workers: int = 1) -> list[bool]:
    """One flag per seed, in seed order."""
    job = partial(_violated, prop, values)
    if workers <= 1:
        return [job(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, seeds, chunksize=max(1, len(seeds) // (4 * workers))))


def cmd_cross_validate(args) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    values = _base_setting(args)
    if args.property in ("consistency", "totality") and not auto_byzantine(args.N, args.f):
        raise UsageError(f"{args.property} attacks need a Byzantine sender: f * N >= 1")
    try:
        eps = epsilon_for(args.property, values).epsilon
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    seeds = range(args.seed, args.seed + args.runs)
    flags = violation_flags(args.property, values, seeds, args.workers)
    bad = sum(flags)
    allowed = eps + 3 * math.sqrt(eps * (1 - eps) / args.runs)
    freq = bad / args.runs
    _emit("property", args.property)
    _emit("runs", args.runs)
    _emit("violations", bad)
    _emit("frequency", repr(freq))
    _emit("epsilon", repr(eps))
    _emit("threshold", repr(allowed))
    _emit("verdict", "ok" if freq <= allowed else "exceeded")
    return EXIT_OK if freq <= allowed else EXIT_VIOLATION


COMMANDS = {
    "run-sim": cmd_run_sim,
    "sm-check": cmd_sm_check,
    "consensus-demo": cmd_consensus_demo,
    "epsilon-curve": cmd_epsilon_curve,
    "cross-validate": cmd_cross_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        _say(f"at2 {args.command}: error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

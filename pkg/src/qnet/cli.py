"""Command-line entry point: ``qnet <command> --spec <file-or-gallery-name> ...``.

Commands write their data files under ``--out``. Every file starts with a
single timestamp line (``# generated_at ...`` in CSV, a ``"generated_at"`` key
on the second line of JSON); everything else is a deterministic function of
the arguments. ``SOURCE_DATE_EPOCH`` pins the timestamp when set.

Exit codes: 0 success, 2 configuration error, 3 internal assertion
(a broken coupling).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CouplingBroken, Infeasible, QnetError
from .model import NetworkSpec, solve_traffic
from .policies import ALL_POLICIES, PolicyKind
from .scenarios import RoutedScenario, is_scenario_dict

EXIT_OK, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3
COMMANDS = ("analyze", "reduce", "simulate", "couple", "dominate", "kernel", "sweep", "demo")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# inputs


def gallery_names() -> list:
    files = resources.files("qnet") / "gallery"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def _read_spec_dict(ref: str) -> dict:
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("qnet") / "gallery" / f"{ref}.json"
        if not res.is_file():
            raise ConfigError(f"spec {ref!r} is neither a file nor a gallery entry "
                              f"({', '.join(gallery_names())})")
        text = res.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {ref}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{ref}: top-level JSON value must be an object")
    return data


def load_network(ref: str):
    """A NetworkSpec or RoutedScenario from a path or gallery name."""
    data = _read_spec_dict(ref)
    try:
        if is_scenario_dict(data):
            return RoutedScenario.from_dict(data)
        return NetworkSpec.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{ref}: {exc}") from None


def require_spec(net) -> NetworkSpec:
    if not isinstance(net, NetworkSpec):
        raise ConfigError("this command needs a class-independent network spec, not a routed scenario")
    return net


def parse_seeds(text: str) -> list:
    """``N`` means seeds 0..N-1; a comma list names seeds explicitly."""
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        else:
            n = int(text)
            if n < 1:
                raise ConfigError("--seeds count must be positive")
            seeds = list(range(n))
    except ValueError:
        raise ConfigError(f"bad --seeds value {text!r}") from None
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be nonnegative")
    return seeds


def parse_floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def parse_policy(text: str) -> PolicyKind:
    try:
        return PolicyKind.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_state(text: str, shape: tuple) -> np.ndarray:
    """A JSON array, or one integer broadcast to every entry."""
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(f"bad state {text!r}") from None
    x = np.array(value, dtype=np.int64)
    if x.ndim == 0:
        return np.full(shape, int(x), dtype=np.int64)
    if x.ndim == 1 and len(shape) == 2 and shape[0] == 1:
        x = x[None, :]
    if x.shape != shape:
        raise ConfigError(f"state shape {x.shape}, expected {shape}")
    return x


# ---------------------------------------------------------------------------
# outputs


def timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(path: Path, body: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# generated_at {timestamp()}\n")
        fh.write(body)


def write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        fh.write(json.dumps({"generated_at": timestamp(), **payload}, indent=2, sort_keys=False))
        fh.write("\n")


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt_matrix(m) -> str:
    return np.array2string(np.asarray(m, dtype=float), precision=6, suppress_small=True)


def fan_out(fn, items, jobs: int) -> list:
    """Apply ``fn`` to each item, optionally in worker processes; order is kept."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# workers (module level so they pickle)


def _simulate_one(task):
    from .simulate import run
    net, policy, horizon, seed, stride = task
    return run(net, policy, horizon, seed, record_stride=stride)


def _couple_one(task):
    from .simulate import coupled_run
    red, policy, horizon, seed, stride = task
    try:
        return coupled_run(red, policy, horizon, seed, record_stride=stride).report.to_dict()
    except CouplingBroken as exc:
        return {"error": str(exc), **(exc.report.to_dict() if exc.report else {})}


def _dominate_one(task):
    from .simulate import monotone_coupled_run
    net, policy, x0, horizon, seed, strict = task
    try:
        return monotone_coupled_run(net, policy, x0, horizon, seed, strict=strict).to_dict()
    except CouplingBroken as exc:
        return {"error": str(exc), **(exc.report.to_dict() if exc.report else {})}


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    from .lyapunov import drift_profile
    spec = require_spec(load_network(args.spec))
    sol = solve_traffic(spec)
    print("Lambda (class x server):\n" + _fmt_matrix(sol.arrival_rate))
    print("rho (class x server):\n" + _fmt_matrix(sol.load))
    print("Gamma = (I - R)^-1:\n" + _fmt_matrix(sol.visit_counts))
    print("server load sum_a rho:", _fmt_matrix(sol.server_load))
    payload = {"spec": spec.to_dict(), "traffic": sol.to_dict()}
    if spec.is_single_rate():
        prof = drift_profile(spec, sol)
        print("eta_j (drift bound):   ", _fmt_matrix(prof.eta))
        print("epsilon_j (busy decrease):", _fmt_matrix(prof.epsilon))
        payload["drift"] = prof.to_dict()
    else:
        print("service rates differ: drift constants apply to the reduced network (see `reduce`)")
    verdicts = []
    for j, load in enumerate(sol.server_load):
        ok = bool(load < 1)
        verdicts.append(ok)
        if ok:
            print(f"traffic condition holds at server {j} (load {load:.6g})")
        else:
            print(f"traffic condition FAILS at server {j} (load {load:.6g})")
    payload["traffic_condition"] = verdicts
    if args.out:
        write_json(_out_dir(args) / "report.json", payload)
    return EXIT_OK


def cmd_reduce(args) -> int:
    from .reduction import build_reduction, verify_reduction
    spec = require_spec(load_network(args.spec))
    eta = None if args.eta is None else args.eta
    try:
        red = build_reduction(spec, eta=eta)
    except Infeasible as exc:
        print(f"no reduction: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = verify_reduction(red)
    payload = {"reduction": red.to_dict(), "checks": report.to_dict()}
    print(json.dumps(red.to_dict(), indent=2))
    print(report.ledger())
    if args.out:
        write_json(_out_dir(args) / "report.json", payload)
    return EXIT_OK if report.ok else EXIT_INTERNAL


def _stability_summary(label, rep) -> list:
    return [label, rep.verdict, repr(rep.slope), repr(rep.slope_low), repr(rep.slope_high),
            repr(rep.r_squared), repr(float(rep.nested_spread.max()))]


SUMMARY_HEADER = ["label", "verdict", "slope", "slope_low", "slope_high", "r_squared",
                  "max_nested_spread"]


def _thresholds(args):
    from .stability import Thresholds
    return Thresholds(nested_tol=args.nested_tol, confidence=args.confidence, warmup=args.warmup)


def cmd_simulate(args) -> int:
    from .stability import assess
    net = load_network(args.spec)
    policy = parse_policy(args.policy) if args.policy else (
        net.policy_kind() if isinstance(net, RoutedScenario) else PolicyKind("fifo"))
    seeds = parse_seeds(args.seeds)
    out = _out_dir(args)
    traces = fan_out(_simulate_one, [(net, policy, args.horizon, s, args.stride) for s in seeds],
                     args.jobs)
    for t in traces:
        write_csv(out / f"trace_{t.seed}.csv", t.to_csv())
    rep = assess(traces, _thresholds(args))
    per_seed = [{"seed": t.seed, "events": t.event_totals,
                 "mean_total": float(t.totals.mean())} for t in traces]
    write_json(out / "report.json", {"spec": args.spec, "policy": str(policy),
                                     "horizon": args.horizon, "stability": rep.to_dict(),
                                     "runs": per_seed})
    write_csv(out / "summary.csv", rows_to_csv(SUMMARY_HEADER, [_stability_summary(str(policy), rep)]))
    print(f"{args.spec} under {policy}: {rep.verdict} (slope {rep.slope:.3g}, "
          f"band [{rep.slope_low:.3g}, {rep.slope_high:.3g}])")
    return EXIT_OK


def _dominance_exit(results, out, extra) -> int:
    write_json(out / "report.json", {**extra, "runs": results,
                                     "dominance_ok": all(r.get("dominance_ok") for r in results)})
    rows = [[r["seed"], r["dominance_ok"], r["violations"], r["first_violation_epoch"] or "",
             r["min_margin"]] for r in results]
    write_csv(out / "summary.csv", rows_to_csv(
        ["seed", "dominance_ok", "violations", "first_violation_epoch", "min_margin"], rows))
    broken = [r for r in results if "error" in r]
    for r in broken:
        print(f"seed {r['seed']}: {r['error']}", file=sys.stderr)
    ok = sum(1 for r in results if r["dominance_ok"])
    print(f"dominance held on {ok}/{len(results)} seeds")
    return EXIT_INTERNAL if broken else EXIT_OK


def cmd_couple(args) -> int:
    from .reduction import build_reduction, verify_reduction
    spec = require_spec(load_network(args.spec))
    try:
        red = build_reduction(spec)
    except Infeasible as exc:
        print(f"no reduction: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not verify_reduction(red).ok:
        print("reduction failed verification", file=sys.stderr)
        return EXIT_INTERNAL
    policy = parse_policy(args.policy or "fifo")
    seeds = parse_seeds(args.seeds)
    results = fan_out(_couple_one, [(red, policy, args.horizon, s, args.stride) for s in seeds],
                      args.jobs)
    return _dominance_exit(results, _out_dir(args), {"spec": args.spec, "policy": str(policy),
                                                     "horizon": args.horizon,
                                                     "reduction": red.to_dict()})


def cmd_dominate(args) -> int:
    net = load_network(args.spec)
    if isinstance(net, RoutedScenario):
        policy = parse_policy(args.policy) if args.policy else net.policy_kind()
        x0 = parse_state(args.x0, (len(net.buffers()),))
        strict = False
    else:
        if not net.is_single_rate():
            raise ConfigError("dominate needs a single-rate spec")
        policy = parse_policy(args.policy or "fifo")
        x0 = parse_state(args.x0, (net.num_classes, net.num_servers))
        strict = True
    seeds = parse_seeds(args.seeds)
    results = fan_out(_dominate_one, [(net, policy, x0, args.horizon, s, strict) for s in seeds],
                      args.jobs)
    return _dominance_exit(results, _out_dir(args), {"spec": args.spec, "policy": str(policy),
                                                     "horizon": args.horizon, "x0": x0.tolist(),
                                                     "strict": strict})


def cmd_kernel(args) -> int:
    from .exactkernel import (build_kernel, drift_average_table, drift_direct_table,
                              monotonicity_observation, verify_lemma)
    spec = require_spec(load_network(args.spec))
    chain = build_kernel(spec, args.cap, truncation=args.truncation)
    gamma = solve_traffic(spec).visit_counts
    lemma = [verify_lemma(chain, j, args.n_max).to_dict() for j in range(spec.num_servers)]
    ks = [int(k) for k in parse_floats(args.k)]
    rows, mono = [], []
    if spec.is_single_rate():
        for j in range(spec.num_servers):
            for k in ks:
                ident = drift_average_table(chain, gamma, j, k)
                direct = drift_direct_table(chain, gamma, j, k)
                inner = chain.interior(k)
                for i, s in enumerate(chain.states):
                    rows.append([j, k, " ".join(map(str, s)), int(inner[i]),
                                 repr(float(direct[i])), repr(float(ident[i]))])
                mono.append(monotonicity_observation(chain, gamma, j, k))
    out = _out_dir(args)
    write_json(out / "report.json", {"spec": args.spec, "cap": args.cap, "n_max": args.n_max,
                                     "truncation": args.truncation, "states": len(chain),
                                     "lemma": lemma, "monotonicity": mono})
    if rows:
        write_csv(out / "drift.csv", rows_to_csv(
            ["server", "k", "state", "interior", "direct", "identity"], rows))
    for rep in lemma:
        status = "ok" if rep["ok"] else "VIOLATED"
        print(f"server {rep['server']}: empty-probability comparison {status}, "
              f"min slack {rep['min_slack']:.3g} at {tuple(rep['tightest_state'])}, "
              f"n={rep['tightest_n']}")
    return EXIT_OK


def _sweep_one(task):
    from .stability import assess
    from .simulate import run
    spec, policy, horizon, seeds, stride, thresholds = task
    return assess([run(spec, policy, horizon, s, record_stride=stride) for s in seeds], thresholds)


def cmd_sweep(args) -> int:
    spec = require_spec(load_network(args.spec))
    grid = parse_floats(args.grid)
    if any(g <= 0 for g in grid):
        raise ConfigError("grid values must be positive")
    base_load = float(solve_traffic(spec).server_load.max())
    if args.grid_mode == "load" and base_load <= 0:
        raise ConfigError("load grid needs a spec with positive load")
    policies = ([parse_policy(p) for p in args.policy.split(";")] if args.policy
                else list(ALL_POLICIES))
    seeds = parse_seeds(args.seeds)
    th = _thresholds(args)
    tasks, labels = [], []
    for g in grid:
        mult = g / base_load if args.grid_mode == "load" else g
        for pol in policies:
            tasks.append((spec.with_lambda(spec.lam * mult), pol, args.horizon, seeds,
                          args.stride, th))
            labels.append((g, str(pol), mult))
    reports = fan_out(_sweep_one, tasks, args.jobs)
    points = []
    rows = []
    for (g, pol, mult), rep in zip(labels, reports):
        max_load = base_load * mult
        points.append({"grid_value": g, "lambda_multiplier": mult, "policy": pol,
                       "max_load": max_load, "stability": rep.to_dict()})
        rows.append([repr(g), repr(mult), pol, repr(max_load)] + _stability_summary(pol, rep)[1:])
        print(f"{args.grid_mode} {g:g} ({pol}, max load {max_load:.3g}): {rep.verdict}")
    out = _out_dir(args)
    write_json(out / "report.json", {"spec": args.spec, "horizon": args.horizon,
                                     "grid_mode": args.grid_mode, "seeds": seeds,
                                     "points": points})
    write_csv(out / "summary.csv", rows_to_csv(["grid_value", "lambda_multiplier", "policy",
                                                "max_load"]
                                               + SUMMARY_HEADER[1:], rows))
    return EXIT_OK


def cmd_demo(args) -> int:
    """Class-dependent routes under their priority policy, under FIFO, and the
    class-independent analogue under the translated priority policy."""
    net = load_network(args.spec)
    if not isinstance(net, RoutedScenario):
        raise ConfigError("demo needs a routed scenario (a JSON file with 'routes')")
    seeds = parse_seeds(args.seeds)
    th = _thresholds(args)
    analogue, analogue_policy = net.class_independent_analogue()
    cases = [("routes/" + str(net.policy_kind()), net, net.policy_kind()),
             ("routes/fifo", net.with_policy("fifo"), PolicyKind("fifo")),
             ("analogue/" + str(analogue_policy), analogue, analogue_policy)]
    reports = fan_out(_sweep_one, [(n, p, args.horizon, seeds, args.stride, th)
                                   for _, n, p in cases], args.jobs)
    out = _out_dir(args)
    write_json(out / "report.json", {
        "scenario": net.to_dict(), "station_loads": net.station_loads().tolist(),
        "analogue": analogue.to_dict(), "horizon": args.horizon, "seeds": seeds,
        "cases": [{"label": lab, "stability": rep.to_dict()}
                  for (lab, _, _), rep in zip(cases, reports)]})
    write_csv(out / "summary.csv", rows_to_csv(
        SUMMARY_HEADER, [_stability_summary(lab, rep) for (lab, _, _), rep in zip(cases, reports)]))
    for (lab, _, _), rep in zip(cases, reports):
        print(f"{lab}: {rep.verdict} (slope {rep.slope:.3g}, R^2 {rep.r_squared:.3f})")
    return EXIT_OK


HANDLERS = {"analyze": cmd_analyze, "reduce": cmd_reduce, "simulate": cmd_simulate,
            "couple": cmd_couple, "dominate": cmd_dominate, "kernel": cmd_kernel,
            "sweep": cmd_sweep, "demo": cmd_demo}


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, policy=False, sim=False, out_required=True):
        sp.add_argument("--spec", required=True, help="spec JSON path or gallery name")
        if policy:
            sp.add_argument("--policy", help="fifo | lifo | random | priority[:order]")
        if sim:
            sp.add_argument("--horizon", type=_positive_int, default=100_000)
            sp.add_argument("--seeds", default="1", help="count N (seeds 0..N-1) or comma list")
            sp.add_argument("--stride", type=_positive_int, default=100,
                            help="record every stride-th epoch")
            sp.add_argument("--jobs", type=_positive_int, default=1,
                            help="worker processes for seed fan-out")
        sp.add_argument("--out", required=out_required, default=None, help="output directory")

    def verdict_opts(sp):
        sp.add_argument("--nested-tol", type=float, default=0.15)
        sp.add_argument("--confidence", type=float, default=0.95)
        sp.add_argument("--warmup", type=float, default=0.1)

    common(sub.add_parser("analyze", help="traffic solution and drift constants"),
           out_required=False)
    sp = sub.add_parser("reduce", help="single-rate reduction and its inequality ledger")
    common(sp, out_required=False)
    sp.add_argument("--eta", type=float, default=None, help="scalar slack (default: half spare load)")
    sp = sub.add_parser("simulate", help="simulate and assess stability")
    common(sp, policy=True, sim=True)
    verdict_opts(sp)
    common(sub.add_parser("couple", help="coupled run of S and its reduction"), policy=True, sim=True)
    sp = sub.add_parser("dominate", help="monotone coupling from x0 versus empty")
    common(sp, policy=True, sim=True)
    sp.add_argument("--x0", default="5", help="JSON count array, or one integer for every entry")
    sp = sub.add_parser("kernel", help="exact truncated kernel checks")
    common(sp)
    sp.add_argument("--cap", type=_positive_int, default=10)
    sp.add_argument("--n-max", type=_positive_int, default=100)
    sp.add_argument("--k", default="1,10", help="comma list of drift horizons")
    sp.add_argument("--truncation", choices=("box", "total"), default="box")
    sp = sub.add_parser("sweep", help="stability verdicts over a load grid")
    common(sp, policy=True, sim=True)
    sp.add_argument("--grid", default="0.5,0.8,0.95,1.2",
                    help="comma list of target loads (or lambda multipliers, see --grid-mode)")
    sp.add_argument("--grid-mode", choices=("load", "lambda"), default="load",
                    help="load: scale lambda so the busiest server has this load; "
                         "lambda: multiply lambda by the grid value")
    verdict_opts(sp)
    sp = sub.add_parser("demo", help="class-dependent routes versus the class-independent analogue")
    common(sp, sim=True)
    verdict_opts(sp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return HANDLERS[args.command](args)
    except CouplingBroken as exc:
        print(f"internal assertion: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ConfigError, QnetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""
app/cli.py
----------
Command-line front end.

Subcommands
-----------
  gen-graph       draw G_n and write graph.txt
  run             primal trajectory from A            -> run.csv (t,occupied)
  dual            dual trajectory from B              -> dual.csv (t,occupied)
  duality-check   pathwise duality on singleton pairs -> prints agree=XX.XX%
  psi             build psi(A) and dump it            -> psi.csv
  robust-check    exact + sufficient robustness of psi(A)
  rho             survival probability rho(q, r)
  bound           Chernoff bound vs exact binomial lower tail
  experiment NAME persistence | plateau | seed-fraction | growth | psi-ones |
                  ladder | subcritical | coupling
  health          pre-flight checks
  replay FILE     re-run the argv stored in a manifest

Vertex ids on the command line and in human-facing columns are 1-based;
graph files and internal arrays are 0-based.

Exit codes
----------
  0  success
  1  usage / configuration error
  2  precondition violated (e.g. n <= r)
  3  exhaustive search over budget
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from colorama import Fore, Style, just_fix_windows_console

from conf.config import Config, load_config
from services import analysis
from services.dynamics import State, check_duality, run_dual, run_primal
from services.errors import SimError, UsageError
from services.experiments import (
    EXPERIMENTS,
    ExperimentResult,
    LadderRung,
    monotone_coupling_check,
    proof_ladder,
)
from services.export import (
    PSI_FIELDS,
    TRAJECTORY_FIELDS,
    EventWriter,
    RunManifest,
    trajectory_rows,
    write_csv,
    write_snapshots,
)
from services.graph_gen import GraphConfig, generate, save_graph
from services.noise import NoiseField, derive_seed
from services.psi_tree import (
    PsiParams,
    build_psi,
    default_params,
    find_non_good_family,
    format_sigma,
    is_robust_sufficient,
    minimal_g,
)
from services.theory import (
    OffspringLaw,
    binomial_lower_tail_bound,
    binomial_lower_tail_exact,
    rho,
)

logger = logging.getLogger(__name__)

EXPERIMENT_NAMES = sorted(list(EXPERIMENTS) + ["coupling"])


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------
# Argument types
# ----------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    try:
        return [int(float(part)) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _vertex_set(text: str, n: int) -> State:
    """'all', 'none' or comma-separated 1-based ids."""
    key = text.strip().lower()
    if key == "all":
        return State.full(n)
    if key in ("none", ""):
        return State.empty(n)
    try:
        ids = _int_list(text)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None
    return State.from_support(n, [v - 1 for v in ids])


# ----------------------------------------------------------------
# Parser
# ----------------------------------------------------------------

def create_parser() -> argparse.ArgumentParser:
    env = Config.from_env()

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="top-level seed (default SIM_SEED)")
    common.add_argument("--out", default=env.out_dir, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--events", action="store_true", help="also write <name>.events.jsonl")
    common.add_argument("--db", default=env.db_path or None, help="SQLite ledger path")

    graph = argparse.ArgumentParser(add_help=False)
    graph.add_argument("--n", type=int, default=None)
    graph.add_argument("--r", type=int, default=2)

    noise = argparse.ArgumentParser(add_help=False)
    noise.add_argument("--q", type=float, default=0.75)

    psi = argparse.ArgumentParser(add_help=False)
    psi.add_argument("--A", default="1", help="comma-separated 1-based vertex ids")
    psi.add_argument("--g", type=int, default=None)
    psi.add_argument("--q-tilde", type=float, default=None)
    psi.add_argument("--delta", type=float, default=None)

    parser = _Parser(prog="sim", description="Threshold contact process toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-graph", parents=[common, graph], help="draw G_n")

    p = sub.add_parser("run", parents=[common, graph, noise], help="primal trajectory")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--A", default="all")
    p.add_argument("--snapshots", action="store_true")

    p = sub.add_parser("dual", parents=[common, graph, noise], help="dual trajectory")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--B", default="1")
    p.add_argument("--free", action="store_true", help="free-running dual noise")
    p.add_argument("--snapshots", action="store_true")

    p = sub.add_parser("duality-check", parents=[common, graph, noise], help="pathwise duality")
    p.add_argument("--T", type=int, default=4)
    p.add_argument("--trials", type=int, default=200)

    sub.add_parser("psi", parents=[common, graph, noise, psi], help="build psi(A)")

    p = sub.add_parser("robust-check", parents=[common, graph, noise, psi], help="robustness of psi(A)")
    p.add_argument("--budget", type=int, default=env.exact_budget)

    p = sub.add_parser("rho", help="survival probability")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-12)

    p = sub.add_parser("bound", help="binomial lower-tail bound")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--x", type=float, required=True)

    p = sub.add_parser("experiment", parents=[common], help="run an experiment")
    p.add_argument("name", choices=EXPERIMENT_NAMES)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--q", type=float)
    p.add_argument("--r", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-grid", type=_int_list)
    p.add_argument("--m", type=int)
    p.add_argument("--m-grid", type=_int_list)
    p.add_argument("--q-grid", type=_float_list, help="coupling: q values")
    p.add_argument("--trials", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--g", type=int)
    p.add_argument("--q-tilde", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--i-cap", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--window-end", type=int)
    p.add_argument("--roots", type=int)
    p.add_argument("--x", type=int, help="ladder: single 1-based root")
    p.add_argument("--samples-per-graph", type=int)
    p.add_argument("--positions", type=int)
    p.add_argument("--progress", action="store_true", default=env.progress)

    sub.add_parser("health", help="pre-flight checks")

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest")

    return parser


# ----------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------

class _Run:
    """Collects output paths and writes the manifest at the end."""

    def __init__(self, args: argparse.Namespace, argv: Sequence[str], name: str, seed: int):
        self.args = args
        self.argv = list(argv)
        self.name = name
        self.seed = seed
        self.outputs: List[str] = []
        self.params: Dict[str, Any] = {}

    def path(self, filename: str) -> str:
        path = os.path.join(self.args.out, filename)
        self.outputs.append(path)
        return path

    def finish(self, records: Optional[list] = None) -> RunManifest:
        manifest_path = os.path.join(self.args.out, f"{self.name}.manifest.json")
        manifest = RunManifest(
            subcommand=self.name,
            params=self.params,
            seed=self.seed,
            argv=self.argv,
            outputs=self.outputs,
        )
        manifest.write(manifest_path)
        logger.info("Manifest written: %s", manifest_path)
        if getattr(self.args, "db", None):
            from db import Database

            db = Database(self.args.db)
            run_id = db.insert_run(manifest)
            if records and self.name in ("persistence", "subcritical"):
                db.insert_persistence_records(run_id, records)
            logger.info("Ledger run id %d in %s", run_id, self.args.db)
        return manifest


def _seed(args: argparse.Namespace) -> int:
    return args.seed if args.seed is not None else Config.from_env().seed


def _require_n(args: argparse.Namespace) -> int:
    if args.n is None:
        raise UsageError(f"{args.command}: --n is required")
    return args.n


def _graph_from_args(args: argparse.Namespace, seed: int):
    return generate(GraphConfig(n=_require_n(args), r=args.r, seed=derive_seed(seed, "graph")))


def _psi_params_from_args(args: argparse.Namespace) -> PsiParams:
    if args.q_tilde is None:
        base = default_params(args.q, args.r)
        q_tilde = base.q_tilde
    else:
        q_tilde = args.q_tilde
    delta = args.delta if args.delta is not None else min(q_tilde * args.r - 1.0, 1.0) / 2.0
    g = args.g if args.g is not None else minimal_g(q_tilde, delta, args.r)
    return PsiParams(q_tilde=q_tilde, delta=delta, g=g)


# ----------------------------------------------------------------
# Commands
# ----------------------------------------------------------------

def _cmd_gen_graph(args, argv) -> int:
    seed = _seed(args)
    g = _graph_from_args(args, seed)
    run = _Run(args, argv, "gen-graph", seed)
    run.params = {"n": g.n, "r": g.r, "graph_seed": g.config.seed}
    save_graph(g, run.path("graph.txt"))
    run.finish()
    print(f"n={g.n} r={g.r} edges={g.out.edge_count}")
    return 0


def _cmd_run(args, argv) -> int:
    seed = _seed(args)
    g = _graph_from_args(args, seed)
    A = _vertex_set(args.A, g.n)
    noise = NoiseField(q=args.q, seed=derive_seed(seed, "noise"))
    traj = run_primal(g, noise, A, args.T, keep_snapshots=args.snapshots)
    run = _Run(args, argv, "run", seed)
    run.params = {"n": g.n, "r": g.r, "q": args.q, "T": args.T, "A": args.A}
    write_csv(run.path("run.csv"), TRAJECTORY_FIELDS, trajectory_rows(traj))
    if args.snapshots:
        write_snapshots(run.path("snapshots.hex"), traj)
    run.finish()
    ext = traj.extinction_time()
    print(f"final={traj.records[-1].occupied} extinction={'none' if ext is None else ext}")
    return 0


def _cmd_dual(args, argv) -> int:
    seed = _seed(args)
    g = _graph_from_args(args, seed)
    B = _vertex_set(args.B, g.n)
    noise = NoiseField(q=args.q, seed=derive_seed(seed, "noise"))
    traj = run_dual(g, noise, B, args.T, free_running=args.free, keep_snapshots=args.snapshots)
    run = _Run(args, argv, "dual", seed)
    run.params = {"n": g.n, "r": g.r, "q": args.q, "T": args.T, "B": args.B, "free": args.free}
    write_csv(run.path("dual.csv"), TRAJECTORY_FIELDS, trajectory_rows(traj))
    if args.snapshots:
        write_snapshots(run.path("snapshots.hex"), traj)
    run.finish()
    print(f"final={traj.records[-1].occupied}")
    return 0


def _cmd_duality_check(args, argv) -> int:
    seed = _seed(args)
    n = _require_n(args)
    rows = []
    total = agree = 0
    for trial in range(args.trials):
        g = generate(GraphConfig(n=n, r=args.r, seed=derive_seed(seed, "graph", trial)))
        noise = NoiseField(q=args.q, seed=derive_seed(seed, "noise"), replica=trial)
        hits = 0
        for x in range(n):
            A = State.from_support(n, [x])
            for y in range(n):
                hits += check_duality(g, noise, A, State.from_support(n, [y]), args.T)
        rows.append({"trial": trial, "pairs": n * n, "agreements": hits})
        total += n * n
        agree += hits
    run = _Run(args, argv, "duality-check", seed)
    run.params = {"n": n, "r": args.r, "q": args.q, "T": args.T, "trials": args.trials}
    write_csv(run.path("duality-check.csv"), ("trial", "pairs", "agreements"), rows)
    run.finish()
    print(f"agree={100.0 * agree / total:.2f}%")
    return 0


def _psi_from_args(args):
    seed = _seed(args)
    g = _graph_from_args(args, seed)
    params = _psi_params_from_args(args)
    A = _vertex_set(args.A, g.n).support()
    return seed, g, params, build_psi(A, g, params)


def _cmd_psi(args, argv) -> int:
    seed, g, params, psi = _psi_from_args(args)
    run = _Run(args, argv, "psi", seed)
    run.params = {"n": g.n, "r": g.r, "A": args.A, "q_tilde": params.q_tilde,
                  "delta": params.delta, "g": params.g}
    rows = []
    for row in psi.rows():
        row["z_value"] = row["z_value"] + 1
        rows.append(row)
    write_csv(run.path("psi.csv"), PSI_FIELDS, rows)
    run.finish()
    print(f"m={psi.m} positions={psi.shape.size} d={psi.d} "
          f"robust_sufficient={is_robust_sufficient(psi, params)}")
    return 0


def _cmd_robust_check(args, argv) -> int:
    seed, g, params, psi = _psi_from_args(args)
    sufficient = is_robust_sufficient(psi, params)
    family = find_non_good_family(psi, params, budget=args.budget)
    levels = []
    if family is not None:
        levels = ["{" + ",".join(format_sigma(s) for s in sorted(lvl)) + "}" for lvl in family.levels]

    run = _Run(args, argv, "robust-check", seed)
    run.params = {"n": g.n, "r": g.r, "A": args.A, "q_tilde": params.q_tilde,
                  "delta": params.delta, "g": params.g, "budget": args.budget,
                  "d": psi.d, "robust_sufficient": sufficient,
                  "robust_exact": family is None, "counterexample": levels}
    run.finish()

    print(f"d={psi.d} robust_sufficient={sufficient} robust_exact={family is None}")
    if levels:
        print("counterexample=" + " ".join(levels))
    return 0


def _cmd_rho(args, argv) -> int:
    print(f"{rho(OffspringLaw(args.q, args.r), tol=args.tol):.12f}")
    return 0


def _cmd_bound(args, argv) -> int:
    bound = binomial_lower_tail_bound(args.k, args.p, args.x)
    exact = binomial_lower_tail_exact(args.k, args.p, args.x)
    print(f"bound={bound:.12g} exact={exact:.12g}")
    return 0


_OVERRIDE_KEYS = (
    "q", "r", "n", "n_grid", "m", "m_grid", "trials", "t_max", "a", "b", "epsilon",
    "g", "q_tilde", "delta", "i_cap", "burn_in", "window_end", "roots",
    "samples_per_graph", "positions", "threads", "seed",
)


def _cmd_experiment(args, argv) -> int:
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    cfg = load_config(args.config, overrides)
    name = args.name
    run = _Run(args, argv, name, cfg.seed)
    run.params = cfg.to_dict()

    events_path = os.path.join(args.out, f"{name}.events.jsonl") if args.events else None
    with EventWriter(events_path) as sink:
        if events_path:
            run.outputs.append(events_path)
        if name == "coupling":
            q_values = args.q_grid or [max(0.0, cfg.q - 0.1), cfg.q, min(1.0, cfg.q + 0.1)]
            run.params["q_grid"] = list(q_values)
            result = monotone_coupling_check(cfg, q_values, progress=args.progress, sink=sink)
        elif name == "ladder" and args.x is not None:
            trace = proof_ladder(cfg, args.x - 1)
            run.params["x"] = args.x
            result = ExperimentResult(
                "ladder", LadderRung.FIELDS, trace.rungs,
                {"root": args.x, "status": trace.status, "rungs_passed": trace.rungs_passed},
            )
        else:
            result = EXPERIMENTS[name](cfg, progress=args.progress, sink=sink)

    rows = list(result.rows())
    if name in ("seed-fraction", "ladder"):
        for row in rows:
            row["root"] = row["root"] + 1
    write_csv(run.path(f"{name}.csv"), result.fields, rows)
    run.finish(result.records)
    print(analysis.summary_block(f"experiment {name}", result.summary))
    return 0


def _cmd_health(args, argv) -> int:
    from scripts.health_check import run_checks

    return run_checks()


def _cmd_replay(args, argv) -> int:
    manifest = RunManifest.read(args.manifest)
    logger.info("Replaying %s: %s", args.manifest, " ".join(manifest.argv))
    if manifest.argv and manifest.argv[0] == "replay":
        raise UsageError("refusing to replay a replay manifest")
    return cli_main(manifest.argv)


_COMMANDS = {
    "gen-graph": _cmd_gen_graph,
    "run": _cmd_run,
    "dual": _cmd_dual,
    "duality-check": _cmd_duality_check,
    "psi": _cmd_psi,
    "robust-check": _cmd_robust_check,
    "rho": _cmd_rho,
    "bound": _cmd_bound,
    "experiment": _cmd_experiment,
    "health": _cmd_health,
    "replay": _cmd_replay,
}


# ----------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------

def _report_error(message: str) -> None:
    if sys.stderr.isatty():
        just_fix_windows_console()
        message = f"{Fore.RED}{message}{Style.RESET_ALL}"
    print(message, file=sys.stderr)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = create_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand (try --help)")
        return _COMMANDS[args.command](args, argv)
    except SimError as exc:
        _report_error(f"error: {exc}")
        return exc.exit_code
    except Exception as exc:
        logger.exception("Unexpected failure")
        _report_error(f"error: {exc}")
        return 1

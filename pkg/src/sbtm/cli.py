"""Command-line front end.

Subcommands: ``simulate``, ``ingest``, ``fit``, ``sample``, ``evaluate`` and
``scree``. Every output directory receives ``config.json`` holding the fully
resolved parameters plus the package version.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .dyngraph import (
    EdgeListParseError,
    NetworkError,
    activity_filter,
    block_cells,
    load_classes,
    load_network,
    load_temporal_edges,
    save_classes,
    save_network,
)
from .ekf import NumericalFailure
from .inference import MODELS, SCORES, FitResult, estimate_hyperparameters, fit
from .metrics import (
    AriReport,
    ari_per_step,
    duration_report,
    multi_step_fraction,
    write_duration_csv,
)
from .sbm import UndefinedBlockError, singular_values
from .transition import (
    BlockLayout,
    InvariantViolation,
    SimulationConfig,
    StateDynamics,
    TransitionMatrices,
    block_matrix,
    resample_hmsbm,
    resample_sbtm,
    simulate,
)

log = logging.getLogger("sbtm")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

PRESETS = {
    "sec6-1": {
        "nodes": 128, "k": 4, "T": 10, "churn": 0.1, "directed": False,
        "pi0_diag": 0.1, "pi0_off": 0.05, "pi1_diag": 0.7, "pi1_off": 0.45,
        "theta1_diag": 0.2580, "theta1_off": 0.0834,
        "gamma_diag": 0.01, "gamma_off": 0.0025, "gamma1": 0.04,
    },
    "facebook-prep": {
        "window": "90d", "complete_windows_only": True, "directed": False,
        "min_active": 7, "min_degree": 30, "degree_mode": "union", "order": "joint",
    },
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _read_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    return data


def _resolve(args, preset_keys, preset=None):
    """Preset values, then explicit flags, then the config file on top."""
    cfg = dict(PRESETS[preset]) if preset else {}
    for key in preset_keys:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    overrides = _read_config_file(getattr(args, "config", None))
    unknown = set(overrides) - set(preset_keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(overrides)
    return cfg


def _write_config(out, cfg):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump({**cfg, "version": __version__}, fh, indent=2, sort_keys=True, default=str)


def _run_seeds(seed, runs):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(runs)]


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _open_network(path):
    """Load a saved network, accepting a simulate run directory as well."""
    sub = os.path.join(path, "network")
    if not os.path.exists(os.path.join(path, "meta.json")) and os.path.isdir(sub):
        path = sub
    return load_network(path)


def _write_states(path, states):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "index", "psi"])
        for t, psi in enumerate(states, start=1):
            for i, v in enumerate(psi):
                w.writerow([t, i, repr(float(v))])


def _write_matrices(path, name, mats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "a", "b", name])
        for t, M in enumerate(mats, start=1):
            if M is None or np.all(np.isnan(M)):
                continue
            for (a, b), v in np.ndenumerate(M):
                w.writerow([t, a + 1, b + 1, repr(float(v))])


def _write_scaling(path, sim):
    """Scaling factors for every (previous classes, classes, previous edge)
    combination that actually occurs in the simulated pairs."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "a_prev", "b_prev", "a", "b", "u", "xi"])
        for t in range(2, sim.network.T + 1):
            cells = block_cells(sim.network, sim.classes, t)
            xi = sim.scaling[t - 1].for_cells(cells)
            keys = np.stack([cells.a_prev, cells.b_prev, cells.a, cells.b, cells.u], axis=1)
            uniq, first = np.unique(keys, axis=0, return_index=True)
            for row, j in zip(uniq, first):
                w.writerow([t, *map(int, row), repr(float(xi[j]))])


# ---------------------------------------------------------------------------
# simulate

SIM_KEYS = (
    "nodes", "k", "T", "churn", "directed", "pi0_diag", "pi0_off", "pi1_diag", "pi1_off",
    "theta1_diag", "theta1_off", "gamma_diag", "gamma_off", "gamma1", "seed", "runs",
)


def _sim_config(cfg, seed):
    k = int(cfg["k"])
    directed = bool(cfg["directed"])
    layout = BlockLayout(k, directed)
    pi = TransitionMatrices(
        block_matrix(k, cfg["pi0_diag"], cfg["pi0_off"]),
        block_matrix(k, cfg["pi1_diag"], cfg["pi1_off"]),
    )
    dyn = StateDynamics.random_walk(
        pi.to_state(layout), cfg["gamma_diag"], cfg["gamma_off"], cfg["gamma1"]
    )
    return SimulationConfig(
        nodes=int(cfg["nodes"]), k=k, T=int(cfg["T"]),
        theta1=block_matrix(k, cfg["theta1_diag"], cfg["theta1_off"]),
        dynamics=dyn, churn=float(cfg["churn"]), directed=directed, seed=seed,
    )


def _simulate_one(job):
    cfg, seed, out = job
    sim = simulate(_sim_config(cfg, seed))
    os.makedirs(out, exist_ok=True)
    save_network(sim.network, os.path.join(out, "network"))
    save_classes(sim.classes, os.path.join(out, "classes.csv"), sim.network.node_ids)
    _write_states(os.path.join(out, "states.csv"), sim.states)
    _write_matrices(os.path.join(out, "theta.csv"), "theta", sim.thetas)
    _write_scaling(os.path.join(out, "scaling.csv"), sim)
    _write_config(out, {**cfg, "seed": seed, "runs": 1})
    return out


def cmd_simulate(args):
    cfg = _resolve(args, SIM_KEYS, args.preset or "sec6-1")
    runs = int(cfg.get("runs", 1))
    seed = int(cfg.get("seed", 0))
    if runs < 1:
        raise ConfigError("--runs must be at least 1")
    if not 0.0 <= float(cfg["churn"]) <= 1.0:
        raise ConfigError("churn must lie in [0, 1]")
    if int(cfg["nodes"]) < int(cfg["k"]) or int(cfg["T"]) < 1:
        raise ConfigError("need nodes >= k and T >= 1")
    _write_config(args.out, {**cfg, "runs": runs, "seed": seed})
    seeds = [seed] if runs == 1 else _run_seeds(seed, runs)
    outs = [args.out] if runs == 1 else [
        os.path.join(args.out, f"run_{r:03d}") for r in range(runs)
    ]
    _map(_simulate_one, [(cfg, s, o) for s, o in zip(seeds, outs)], args.jobs)
    log.info("wrote %d run(s) to %s", runs, args.out)
    return 0


# ---------------------------------------------------------------------------
# ingest

INGEST_KEYS = (
    "window", "origin", "complete_windows_only", "directed", "min_active", "min_degree",
    "degree_mode", "order",
)


def cmd_ingest(args):
    cfg = _resolve(args, INGEST_KEYS, args.preset)
    if "window" not in cfg:
        raise ConfigError("--window is required without a preset")
    with open(args.events) as fh:
        side = open(args.activity) if args.activity else None
        try:
            net = load_temporal_edges(
                fh, cfg["window"], origin=cfg.get("origin"), directed=bool(cfg.get("directed", True)),
                activity_stream=side, complete_windows_only=bool(cfg.get("complete_windows_only")),
            )
        finally:
            if side:
                side.close()
    if cfg.get("min_active") or cfg.get("min_degree"):
        net = activity_filter(
            net, int(cfg.get("min_active", 0)), int(cfg.get("min_degree", 0)),
            cfg.get("degree_mode", "union"), cfg.get("order", "joint"),
        )
    save_network(net, args.out)
    _write_config(args.out, {**cfg, "events": args.events, "n_nodes": net.n_nodes, "T": net.T})
    print(f"{net.n_nodes} nodes, {net.T} steps")
    return 0


# ---------------------------------------------------------------------------
# fit

FIT_KEYS = ("k", "model", "seed", "gamma", "gamma1", "max_sweeps", "score", "estimate_hyper")


def _fit_one(job):
    cfg, net_dir, out = job
    net = _open_network(net_dir)
    model = cfg["model"]
    kw = {"seed": int(cfg.get("seed", 0))}
    if model != "static":
        kw.update(
            gamma=float(cfg.get("gamma", 0.01)), gamma1=float(cfg.get("gamma1", 0.25)),
            max_sweeps=int(cfg.get("max_sweeps", 50)), score=cfg.get("score", "posterior"),
        )
        if cfg.get("estimate_hyper"):
            kw["hyper"] = estimate_hyperparameters(net, int(cfg["k"]), model=model, seed=kw["seed"])
    res = fit(net, int(cfg["k"]), model, **kw)
    os.makedirs(out, exist_ok=True)
    res.to_json(os.path.join(out, "fit.json"))
    save_classes(res.classes, os.path.join(out, "classes.csv"), net.node_ids)
    _write_matrices(os.path.join(out, "theta.csv"), "theta", res.thetas)
    if res.pi0 is not None:
        _write_matrices(os.path.join(out, "pi0.csv"), "pi0", res.pi0)
        _write_matrices(os.path.join(out, "pi1.csv"), "pi1", res.pi1)
    _write_config(out, {**cfg, "network": net_dir})
    return out


def cmd_fit(args):
    cfg = _resolve(args, FIT_KEYS)
    if "k" not in cfg or int(cfg["k"]) < 1:
        raise ConfigError("--k must be a positive integer")
    models = cfg.get("model") or ["sbtm"]
    models = [models] if isinstance(models, str) else list(models)
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}; choose from {MODELS}")
    if cfg.get("score", "posterior") not in SCORES:
        raise ConfigError(f"unknown score; choose from {SCORES}")
    jobs = []
    many = len(args.network) > 1
    for nd in args.network:
        for m in models:
            out = args.out
            if many:
                out = os.path.join(out, os.path.basename(os.path.normpath(nd)))
            if len(models) > 1:
                out = os.path.join(out, m)
            jobs.append(({**cfg, "model": m}, nd, out))
    _map(_fit_one, jobs, args.jobs)
    return 0


# ---------------------------------------------------------------------------
# sample


def _sample_networks(res: FitResult, count, seed):
    seeds = _run_seeds(seed, count)
    if res.model == "sbtm":
        pis = res.transition_matrices()
        return [resample_sbtm(res.classes, res.thetas[0], pis, res.directed, s) for s in seeds]
    return [resample_hmsbm(res.classes, res.thetas, res.directed, s) for s in seeds]


def cmd_sample(args):
    if args.count < 0:
        raise ConfigError("--count must be non-negative")
    try:
        res = FitResult.from_json(args.fit)
    except FileNotFoundError:
        raise NetworkError(f"no fit result at {args.fit}") from None
    _write_config(args.out, {"fit": args.fit, "count": args.count, "seed": args.seed})
    if args.count == 0:
        warnings.warn("sample count is 0; nothing written")
        return 0
    for i, net in enumerate(_sample_networks(res, args.count, args.seed)):
        save_network(net, os.path.join(args.out, f"sample_{i:03d}"))
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args):
    summary = {}
    if bool(args.truth) != bool(args.estimate):
        raise ConfigError("--truth and --estimate go together")
    if args.truth:
        if len(args.truth) != len(args.estimate):
            raise ConfigError("give one --estimate per --truth file")
        per_run = []
        for tp, ep in zip(args.truth, args.estimate):
            truth, est = load_classes(tp), load_classes(ep)
            if truth.labels.shape != est.labels.shape:
                raise NetworkError(f"{tp} and {ep} label different node sets or step counts")
            per_run.append(ari_per_step(truth.labels, est.labels))
        rep = AriReport.from_runs(per_run, n_boot=args.n_boot, seed=args.seed)
        os.makedirs(args.out, exist_ok=True)
        rep.write_csv(os.path.join(args.out, "ari.csv"))
        summary["ari_mean"] = rep.mean.tolist()
    if args.networks:
        nets = [_open_network(p) for p in args.networks]
        hist = duration_report(nets)
        os.makedirs(args.out, exist_ok=True)
        write_duration_csv(hist, os.path.join(args.out, "durations.csv"))
        summary["multi_step_fraction"] = multi_step_fraction(hist)
    _write_config(args.out, {
        "truth": args.truth, "estimate": args.estimate, "networks": args.networks,
        "n_boot": args.n_boot, "seed": args.seed,
    })
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return 0


# ---------------------------------------------------------------------------
# scree


def cmd_scree(args):
    net = _open_network(args.network)
    if not 1 <= args.t <= net.T:
        raise ConfigError(f"--t must lie in 1..{net.T}")
    sv = singular_values(net.W(args.t), args.n)
    w = csv.writer(sys.stdout)
    w.writerow(["index", "singular_value"])
    for i, s in enumerate(sv, start=1):
        w.writerow([i, repr(float(s))])
    return 0


# ---------------------------------------------------------------------------
# parser


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def build_parser():
    p = argparse.ArgumentParser(prog="sbtm", description="Stochastic block transition models")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate SBTM networks")
    s.add_argument("--preset", choices=["sec6-1"])
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--runs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    for key in ("nodes", "k", "T"):
        s.add_argument(f"--{key}", type=int)
    s.add_argument("--churn", type=float)
    s.add_argument("--directed", type=_bool)
    for key in SIM_KEYS[5:14]:
        s.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("ingest", help="window a timestamped edge list into snapshots")
    g.add_argument("--events", required=True)
    g.add_argument("--activity")
    g.add_argument("--preset", choices=["facebook-prep"])
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--window")
    g.add_argument("--origin", type=float)
    g.add_argument("--complete-windows-only", dest="complete_windows_only", type=_bool)
    g.add_argument("--directed", type=_bool)
    g.add_argument("--min-active", dest="min_active", type=int)
    g.add_argument("--min-degree", dest="min_degree", type=int)
    g.add_argument("--degree-mode", dest="degree_mode", choices=["union", "sum"])
    g.add_argument("--order", choices=["joint", "activity-first", "degree-first"])
    g.set_defaults(func=cmd_ingest)

    f = sub.add_parser("fit", help="estimate classes and block parameters")
    f.add_argument("--network", nargs="+", required=True)
    f.add_argument("--k", type=int)
    f.add_argument("--model", nargs="+", choices=MODELS)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--gamma", type=float)
    f.add_argument("--gamma1", type=float)
    f.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    f.add_argument("--score", choices=SCORES)
    f.add_argument("--estimate-hyper", dest="estimate_hyper", action="store_true", default=None)
    f.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("sample", help="resimulate networks from a fit")
    m.add_argument("--fit", required=True)
    m.add_argument("--count", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", help="ARI and edge-duration reports")
    e.add_argument("--truth", nargs="+")
    e.add_argument("--estimate", nargs="+")
    e.add_argument("--networks", nargs="+")
    e.add_argument("--n-boot", dest="n_boot", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("scree", help="leading singular values of one snapshot")
    c.add_argument("--network", required=True)
    c.add_argument("--t", type=int, default=1)
    c.add_argument("--n", type=int, default=10)
    c.set_defaults(func=cmd_scree)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NetworkError, EdgeListParseError, UndefinedBlockError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, InvariantViolation, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

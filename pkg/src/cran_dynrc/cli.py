"""Command-line entry point: run | oracle | trace | validate."""

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys

import numpy as np

from . import conic, config, netgen
from .dynrc import dynamic_rc
from .expharness import InstanceTooLargeError, exhaustive_oracle, run_plan, write_outputs

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _error_report(kind, messages):
    print(json.dumps({"error": kind, "messages": list(messages)}), file=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(
        prog="cran-dynrc",
        description=(
            "Dynamic clustering and cooperative beamforming experiments for "
            "downlink C-RANs. Seed can be forced via the CRAN_DYNRC_SEED "
            "environment variable."
        ),
    )
    p.add_argument("--config", metavar="PATH", help="JSON config file (defaults apply without it)")
    p.add_argument("--out", metavar="DIR", default="results", help="output root directory")
    p.add_argument(
        "--override",
        metavar="K=V",
        action="append",
        default=[],
        help="dotted-path config override, repeatable (e.g. experiment.num_drops=1)",
    )
    p.add_argument("--workers", type=int, metavar="N", help="parallel drop workers")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.add_argument(
        "--profile",
        choices=["ci", "full"],
        default="ci",
        help="ci keeps the configured drop count; full raises it to 500",
    )
    p.add_argument("--dump-conic", metavar="DIR", help="dump every cone program solved")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="execute the experiment plan")
    sub.add_parser("validate", help="validate the configuration and exit")
    sub.add_parser("oracle", help="tiny-instance exhaustive search vs dynamic clustering")
    t = sub.add_parser("trace", help="per-iteration beam powers for one user's candidates")
    t.add_argument("--user", type=int, default=0, help="user index to monitor")
    return p


def _load(args):
    overrides = list(args.override)
    if args.workers is not None:
        overrides.append(f"experiment.workers={args.workers}")
    if args.profile == "full":
        overrides.append("experiment.num_drops=500")
    return config.load_config(
        args.config, overrides=overrides, env_seed=os.environ.get("CRAN_DYNRC_SEED")
    )


def _run_id(cfg):
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def cmd_validate(args):
    cfg = _load(args)
    print(json.dumps({"valid": True, "run_id": _run_id(cfg)}))
    return EXIT_OK


def cmd_run(args):
    cfg = _load(args)
    logging.basicConfig(level=getattr(logging, cfg["log_level"]))
    plan = config.plan_from_config(cfg)
    run_dir = os.path.join(args.out, _run_id(cfg))
    if os.path.exists(run_dir):
        if not args.force:
            _error_report("run-exists", [f"{run_dir} exists; use --force to overwrite"])
            return EXIT_RUNTIME
        shutil.rmtree(run_dir)
    results, agg = run_plan(plan)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
    drops_path = write_outputs(plan, results, agg, run_dir)
    print(json.dumps({"run_dir": run_dir, "drops": drops_path, "num_results": len(results)}))
    if agg["failures"]:
        log.warning("%d drops failed; see aggregates.json", len(agg["failures"]))
    return EXIT_OK


def cmd_oracle(args):
    cfg = _load(args)
    logging.basicConfig(level=getattr(logging, cfg["log_level"]))
    plan = config.plan_from_config(cfg)
    layout = netgen.build_hex_layout(
        plan.grid_rows, plan.grid_cols, plan.isd_km, plan.n_antennas, plan.p_dbm
    )
    scenario = (
        netgen.Scenario(cell_load_map=list(plan.cell_load_map))
        if plan.scenario == "custom"
        else netgen.make_scenario(layout, plan.scenario)
    )
    drop = netgen.place_users(layout, scenario, plan.seed)
    channel = netgen.gen_channel(
        layout,
        drop,
        plan.seed + 1,
        noise_psd_dbm_hz=plan.noise_psd_dbm_hz,
        bandwidth_hz=plan.bandwidth_hz,
        shadowing_std_db=plan.shadowing_std_db,
    )
    rng = netgen.substream(plan.seed, "qweights")
    q = 1.0 - rng.uniform(0.0, 1.0, drop.num_users)
    v_max = min(plan.dynrc.v_max, layout.num_rrh)
    try:
        oracle = exhaustive_oracle(
            channel, q, float("inf"), plan.n_antennas, layout.power_budget_w, plan.dynrc.cbd
        )
    except InstanceTooLargeError as exc:
        _error_report("instance-too-large", [str(exc)])
        return EXIT_CONFIG
    ours = dynamic_rc(
        channel, q, float("inf"), v_max=v_max, power_w=layout.power_budget_w, opts=plan.dynrc
    )
    run_dir = os.path.join(args.out, _run_id(cfg))
    os.makedirs(run_dir, exist_ok=True)
    payload = {
        "oracle_wsrsu": oracle["best_wsrsu"],
        "oracle_clusters": np.asarray(oracle["best_clusters"]).tolist(),
        "dynrc_wsrsu": ours.wsrsu,
        "dynrc_clusters": ours.clusters.s.tolist(),
        "ratio": (ours.wsrsu / oracle["best_wsrsu"]) if oracle["best_wsrsu"] > 0 else 1.0,
        "seed": plan.seed,
    }
    path = os.path.join(run_dir, "oracle.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    print(json.dumps({"oracle": path, **{k: payload[k] for k in ("oracle_wsrsu", "dynrc_wsrsu", "ratio")}}))
    return EXIT_OK


def cmd_trace(args):
    cfg = _load(args)
    logging.basicConfig(level=getattr(logging, cfg["log_level"]))
    plan = config.plan_from_config(cfg)
    layout = netgen.build_hex_layout(
        plan.grid_rows, plan.grid_cols, plan.isd_km, plan.n_antennas, plan.p_dbm
    )
    scenario = (
        netgen.Scenario(cell_load_map=list(plan.cell_load_map))
        if plan.scenario == "custom"
        else netgen.make_scenario(layout, plan.scenario)
    )
    drop = netgen.place_users(layout, scenario, plan.seed)
    if not 0 <= args.user < drop.num_users:
        _error_report("bad-user", [f"user {args.user} out of range [0, {drop.num_users})"])
        return EXIT_CONFIG
    channel = netgen.gen_channel(
        layout,
        drop,
        plan.seed + 1,
        noise_psd_dbm_hz=plan.noise_psd_dbm_hz,
        bandwidth_hz=plan.bandwidth_hz,
        shadowing_std_db=plan.shadowing_std_db,
    )
    rng = netgen.substream(plan.seed, "qweights")
    q = 1.0 - rng.uniform(0.0, 1.0, drop.num_users)
    res = dynamic_rc(
        channel,
        q,
        float("inf"),
        v_max=plan.dynrc.v_max,
        power_w=layout.power_budget_w,
        opts=plan.dynrc,
    )
    cands = res.clusters.candidate_sets[args.user]
    series = {}
    for r in np.asarray(cands):
        powers = [pt[args.user, r] for pt in res.reweight.power_trace]
        # spectral power density relative to the bandwidth, as dBm/Hz-style
        series[int(r)] = [
            10.0 * np.log10(max(p, 1e-300) / plan.bandwidth_hz) for p in powers
        ]
    run_dir = os.path.join(args.out, _run_id(cfg))
    os.makedirs(run_dir, exist_ok=True)
    payload = {
        "user": args.user,
        "candidates": np.asarray(cands).tolist(),
        "iterations": res.iterations_used,
        "power_dbm_per_hz": series,
        "cluster": np.flatnonzero(res.clusters.s[args.user]).tolist(),
    }
    path = os.path.join(run_dir, f"trace_user{args.user}.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    print(json.dumps({"trace": path, "iterations": res.iterations_used}))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_conic:
        conic.set_dump_dir(args.dump_conic)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "oracle":
            return cmd_oracle(args)
        if args.command == "trace":
            return cmd_trace(args)
        parser.error(f"unknown command {args.command}")
    except config.ConfigError as exc:
        _error_report("invalid-config", exc.errors)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure: machine-readable report
        log.exception("run failed")
        _error_report("runtime", [str(exc)])
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

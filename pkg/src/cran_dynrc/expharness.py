"""Monte-Carlo experiment driver: seeded drops, weight policies, sweep
execution, metrics aggregation, and the tiny-instance exhaustive oracle."""

import csv
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import compute, netgen
from .cbd import CbdOptions, cbd
from .dynrc import DynRcOptions, dynamic_rc, preselect_candidates
from .linkmodel import ClusterAssignment

log = logging.getLogger(__name__)

ORACLE_MAX_CELLS = 8  # guard: enumeration is 2^(U*R)


class InstanceTooLargeError(ValueError):
    pass


@dataclass
class PfState:
    """Long-term smoothed per-user rates for proportional-fair weighting."""

    r_bar: np.ndarray = None
    alpha: float = 0.1
    warmup_drops: int = 10
    drops_seen: int = 0

    def weights(self, num_users):
        if self.drops_seen < self.warmup_drops or self.r_bar is None:
            return np.ones(num_users)
        return 1.0 / np.maximum(self.r_bar, 1e-12)


def pf_update(state, rates):
    """Exponential smoothing of the long-term average rates."""
    rates = np.asarray(rates, dtype=float)
    r_bar = rates.copy() if state.r_bar is None else (1 - state.alpha) * state.r_bar + state.alpha * rates
    return PfState(
        r_bar=r_bar,
        alpha=state.alpha,
        warmup_drops=state.warmup_drops,
        drops_seen=state.drops_seen + 1,
    )


@dataclass
class DropResult:
    seed: int
    sweep: dict
    resource_mode: str
    rates: np.ndarray  # in the plan's rate units
    wsrsu: float
    sum_rate: float
    cluster_sizes: np.ndarray
    iterations_used: int
    converged: bool
    wall_time_ms: float
    status: str = "ok"
    wsrsu_trace: list = field(default_factory=list)
    monitor_powers: dict = field(default_factory=dict)  # user -> (iters, R) powers


@dataclass
class ExperimentPlan:
    grid_rows: int = 4
    grid_cols: int = 4
    isd_km: float = 1.0
    n_antennas: int = 4
    p_dbm: float = 10.0
    noise_psd_dbm_hz: float = -100.0
    bandwidth_hz: float = 10e6
    shadowing_std_db: float = 8.0
    spectral_eff: float = 1.0
    coding_eff: float = 1.0
    scenario: str = "uniform"
    cell_load_map: list = None  # for scenario == "custom"
    num_drops: int = 50
    power_sweep_dbm: list = None  # None -> [p_dbm]
    v_max_sweep: list = None  # None -> [7]
    weight_policy: str = "random_uniform"  # random_uniform | proportional_fair | fixed
    resource_mode: str = "none"  # none | centralized | distributed | both
    gamma_model: compute.GammaModel = field(default_factory=compute.GammaModel)
    capacity_centralized_mbps: float = None
    capacity_per_rrh_mbps: float = None
    rate_units: str = "normalized"  # normalized (bits/s/Hz) | mbps
    seed: int = 1
    workers: int = 1
    timing: bool = False  # real wall times break byte-identical reruns
    monitor_users: tuple = ()
    dynrc: DynRcOptions = field(default_factory=DynRcOptions)

    def sweep_points(self):
        powers = self.power_sweep_dbm or [self.p_dbm]
        vmaxes = self.v_max_sweep or [self.dynrc.v_max]
        return [
            {"p_dbm": float(p), "v_max": int(v)}
            for p, v in itertools.product(powers, vmaxes)
        ]

    def rate_scale(self):
        """Multiplier from normalized bits/s/Hz to the plan's rate units."""
        if self.rate_units == "normalized":
            return 1.0
        if self.rate_units == "mbps":
            return self.spectral_eff * self.bandwidth_hz / 1e6
        raise ValueError(f"unknown rate units {self.rate_units!r}")


def _drop_seed(plan, sweep_idx, drop_idx, purpose):
    ss = np.random.SeedSequence([int(plan.seed), sweep_idx, drop_idx, purpose])
    return int(ss.generate_state(1)[0])


def _build_instance(plan, sweep, sweep_idx, drop_idx):
    layout = netgen.build_hex_layout(
        plan.grid_rows, plan.grid_cols, plan.isd_km, plan.n_antennas, sweep["p_dbm"]
    )
    if plan.scenario == "custom":
        if not plan.cell_load_map:
            raise ValueError("custom scenario requires cell_load_map")
        scenario = netgen.Scenario(cell_load_map=list(plan.cell_load_map))
    else:
        scenario = netgen.make_scenario(layout, plan.scenario)
    drop = netgen.place_users(layout, scenario, _drop_seed(plan, sweep_idx, drop_idx, 1))
    channel = netgen.gen_channel(
        layout,
        drop,
        _drop_seed(plan, sweep_idx, drop_idx, 2),
        noise_psd_dbm_hz=plan.noise_psd_dbm_hz,
        bandwidth_hz=plan.bandwidth_hz,
        shadowing_std_db=plan.shadowing_std_db,
        spectral_eff=plan.spectral_eff,
        coding_eff=plan.coding_eff,
    )
    return layout, drop, channel


def _weights_for_drop(plan, num_users, sweep_idx, drop_idx, pf_state):
    if plan.weight_policy == "fixed":
        return np.ones(num_users)
    if plan.weight_policy == "random_uniform":
        rng = netgen.substream(_drop_seed(plan, sweep_idx, drop_idx, 3), "qweights")
        u = rng.uniform(0.0, 1.0, num_users)
        return 1.0 - u  # uniform over (0, 1]
    if plan.weight_policy == "proportional_fair":
        return pf_state.weights(num_users)
    raise ValueError(f"unknown weight policy {plan.weight_policy!r}")


def _omega_normalized(plan, capacity_mbps):
    """Capacity -> rate-cap in normalized bits/s/Hz units."""
    if capacity_mbps is None:
        return float("inf")
    cap = compute.omega(plan.gamma_model, float(capacity_mbps))
    if plan.rate_units == "mbps":
        return cap / plan.rate_scale()
    return cap


def _run_one_drop(plan, sweep, sweep_idx, drop_idx, q, mode):
    """One (sweep point, drop, resource mode) evaluation."""
    t0 = time.perf_counter()
    layout, drop, channel = _build_instance(plan, sweep, sweep_idx, drop_idx)
    opts = plan.dynrc
    if mode == "centralized":
        omega_norm = _omega_normalized(plan, plan.capacity_centralized_mbps)
    else:
        omega_norm = float("inf")
    res = dynamic_rc(
        channel,
        q,
        omega_norm,
        v_max=sweep["v_max"],
        power_w=layout.power_budget_w,
        opts=opts,
    )
    rates_norm = res.rates
    status = res.status
    if mode == "distributed":
        cap_r = plan.capacity_per_rrh_mbps
        limit_norm = _omega_normalized(plan, cap_r)
        targets = compute.enforce_distributed_drop(
            rates_norm,
            res.clusters,
            q,
            np.full(layout.num_rrh, limit_norm),
            compute.GammaModel("identity"),
            tau=max(limit_norm / 1000.0, 1e-9) if math.isfinite(limit_norm) else 1.0,
        )
        if np.any(targets < rates_norm - 1e-12):
            rates_norm = _realize_targets(channel, res, targets, q, layout.power_budget_w, opts)
    scale = plan.rate_scale()
    rates_out = rates_norm * scale
    wsrsu = float(np.dot(q, rates_out))
    wall = (time.perf_counter() - t0) * 1000.0
    monitor = {}
    if plan.monitor_users and res.reweight is not None:
        for u in plan.monitor_users:
            if 0 <= u < channel.num_users:
                monitor[int(u)] = np.array([p[u] for p in res.reweight.power_trace])
    return DropResult(
        seed=plan.seed,
        sweep=dict(sweep),
        resource_mode=mode,
        rates=rates_out,
        wsrsu=wsrsu,
        sum_rate=float(rates_out.sum()),
        cluster_sizes=res.cluster_sizes
        if res.cluster_sizes is not None
        else res.clusters.cluster_sizes(),
        iterations_used=res.iterations_used,
        converged=res.converged,
        wall_time_ms=wall if plan.timing else 0.0,
        status=status,
        wsrsu_trace=list(res.reweight.wsrsu_trace) if res.reweight else [],
        monitor_powers=monitor,
    )


def _realize_targets(channel, res, targets, q, power_w, opts):
    """Re-solve beams that attain per-user rate targets (after per-RRH drops)."""
    from .cbd import _CbdBuilder, _candidate_sets
    from .linkmodel import evaluate, phase_rotate
    from . import conic

    mu = channel.coding_eff
    gamma_star = (np.exp2(targets) - 1.0) / mu
    sets = _candidate_sets(res.clusters, channel.num_users)
    builder = _CbdBuilder(channel, sets, power_w)
    include = targets > 1e-12
    if not include.any():
        return np.zeros_like(targets)
    prog, cols = builder.build_feasibility(gamma_star, include=include)
    sol = conic.solve(prog, tol=opts.cbd.solver_tol, max_iters=opts.cbd.solver_max_iters,
                      backend=opts.cbd.backend)
    if sol.status != "optimal" or sol.x is None:
        log.warning("distributed-cap re-solve failed (%s); reporting reduced targets", sol.status)
        return targets
    beams = phase_rotate(channel, builder.beams_from_scaled(builder.scaled_from_solution(sol.x, cols)))
    return evaluate(channel, beams, res.clusters, q, mu=mu).rates


def _drop_task(args):
    plan, sweep, sweep_idx, drop_idx, q, mode = args
    try:
        return (sweep_idx, drop_idx, mode, _run_one_drop(plan, sweep, sweep_idx, drop_idx, q, mode))
    except Exception as exc:  # record, keep the run going
        log.exception("drop %d/%d failed", sweep_idx, drop_idx)
        return (sweep_idx, drop_idx, mode, exc)


def run_plan(plan, progress=None):
    """Execute every (sweep point, drop, resource mode); returns the ordered
    DropResult list and an aggregate dict. Drop failures are recorded and do
    not stop the run."""
    modes = {
        "none": ["unconstrained"],
        "centralized": ["centralized"],
        "distributed": ["distributed"],
        "both": ["centralized", "distributed"],
    }[plan.resource_mode]
    sweeps = plan.sweep_points()
    pf = plan.weight_policy == "proportional_fair"
    results = []
    failures = []

    if pf:
        # sequential by definition: weights depend on previous drops
        for sweep_idx, sweep in enumerate(sweeps):
            state = PfState()
            layout_users = None
            for drop_idx in range(plan.num_drops):
                if layout_users is None:
                    _, drop, _ = _build_instance(plan, sweep, sweep_idx, drop_idx)
                    layout_users = drop.num_users
                q = _weights_for_drop(plan, layout_users, sweep_idx, drop_idx, state)
                drop_rates = None
                for mode in modes:
                    out = _drop_task((plan, sweep, sweep_idx, drop_idx, q, mode))
                    if isinstance(out[3], Exception):
                        failures.append(out[:3] + (str(out[3]),))
                    else:
                        results.append(out)
                        if drop_rates is None:
                            drop_rates = out[3].rates
                if drop_rates is not None:
                    state = pf_update(state, drop_rates)
                if progress:
                    progress(sweep_idx, drop_idx)
    else:
        tasks = []
        for sweep_idx, sweep in enumerate(sweeps):
            _, drop0, _ = _build_instance(plan, sweep, sweep_idx, 0)
            n_users = drop0.num_users
            for drop_idx in range(plan.num_drops):
                q = _weights_for_drop(plan, n_users, sweep_idx, drop_idx, None)
                for mode in modes:
                    tasks.append((plan, sweep, sweep_idx, drop_idx, q, mode))
        if plan.workers > 1:
            with ProcessPoolExecutor(max_workers=plan.workers) as pool:
                outs = list(pool.map(_drop_task, tasks, chunksize=1))
        else:
            outs = [_drop_task(t) for t in tasks]
        for i, out in enumerate(outs):
            if isinstance(out[3], Exception):
                failures.append(out[:3] + (str(out[3]),))
            else:
                results.append(out)
            if progress:
                progress(out[0], out[1])

    results.sort(key=lambda t: (t[0], t[1], t[2]))
    ordered = [r for *_k, r in results]
    agg = aggregate(plan, ordered, failures)
    return ordered, agg


def aggregate(plan, results, failures=()):
    sweeps = plan.sweep_points()
    agg = {
        "sweep_points": sweeps,
        "num_drops": plan.num_drops,
        "rate_units": plan.rate_units,
        "failures": [list(f) for f in failures],
        "per_sweep": [],
    }
    for sweep in sweeps:
        for mode in sorted({r.resource_mode for r in results} or {"unconstrained"}):
            sel = [r for r in results if r.sweep == sweep and r.resource_mode == mode]
            if not sel:
                continue
            mean_user_rates = [float(np.mean(r.rates)) for r in sel]
            cdf_x, cdf_p = user_rate_cdf(sel) if sel else ([], [])
            agg["per_sweep"].append(
                {
                    "sweep": sweep,
                    "resource_mode": mode,
                    "drops": len(sel),
                    "mean_wsrsu": float(np.mean([r.wsrsu for r in sel])),
                    "mean_sum_rate": float(np.mean([r.sum_rate for r in sel])),
                    "mean_user_rate": float(np.mean(mean_user_rates)),
                    "mean_cluster_size": float(np.mean([np.mean(r.cluster_sizes) for r in sel])),
                    "mean_iterations": float(np.mean([r.iterations_used for r in sel])),
                    "converged_fraction": float(np.mean([1.0 if r.converged else 0.0 for r in sel])),
                    "user_rate_cdf": {"rate": cdf_x, "probability": cdf_p},
                }
            )
    return agg


def user_rate_cdf(results):
    """Empirical CDF over per-drop average user rates."""
    if not results:
        raise ValueError("need at least one drop result")
    vals = np.sort([float(np.mean(r.rates)) for r in results])
    n = vals.size
    return vals.tolist(), ((np.arange(n) + 1) / n).tolist()


def write_outputs(plan, results, agg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    drops_path = os.path.join(out_dir, "drops.csv")
    with open(drops_path, "w", newline="") as f:
        wcsv = csv.writer(f)
        wcsv.writerow(
            [
                "seed",
                "p_dbm",
                "v_max",
                "resource_mode",
                "drop_index",
                "wsrsu",
                "sum_rate",
                "user_rates",
                "iterations",
                "converged",
                "wall_time_ms",
                "status",
            ]
        )
        counters = {}
        for r in results:
            key = (json.dumps(r.sweep, sort_keys=True), r.resource_mode)
            idx = counters.get(key, 0)
            counters[key] = idx + 1
            wcsv.writerow(
                [
                    r.seed,
                    f"{r.sweep['p_dbm']:.6g}",
                    r.sweep["v_max"],
                    r.resource_mode,
                    idx,
                    f"{r.wsrsu:.12g}",
                    f"{r.sum_rate:.12g}",
                    '"' + " ".join(f"{x:.10g}" for x in r.rates) + '"',
                    r.iterations_used,
                    int(r.converged),
                    f"{r.wall_time_ms:.6g}",
                    r.status,
                ]
            )
    with open(os.path.join(out_dir, "aggregates.json"), "w") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
    return drops_path


def enumerate_assignments(num_users, num_rrh, n_antennas):
    """All binary serving matrices whose per-RRH loads fit the antenna limit."""
    total = num_users * num_rrh
    for bits in range(1 << total):
        s = np.array(
            [(bits >> k) & 1 for k in range(total)], dtype=np.int8
        ).reshape(num_users, num_rrh)
        if np.all(s.sum(axis=0) <= n_antennas):
            yield s


def exhaustive_oracle(channel, q, omega_norm, n_r, power_w, cbd_opts=None):
    """Best fixed clustering by brute force over every valid assignment,
    each solved with the shared beamformer-design subroutine."""
    U, R = channel.num_users, channel.num_rrh
    if U * R > ORACLE_MAX_CELLS:
        raise InstanceTooLargeError(
            f"exhaustive search over 2^{U * R} patterns refused; "
            f"need users*rrhs <= {ORACLE_MAX_CELLS} (got {U}*{R}). "
            "Shrink the instance (e.g. 2 users, 2 RRHs)."
        )
    cbd_opts = cbd_opts or CbdOptions()
    best = (0.0, np.zeros((U, R), dtype=np.int8))  # all-unserved baseline
    for s in enumerate_assignments(U, R, n_r):
        if not s.any():
            continue
        res = cbd(channel, ClusterAssignment(s=s.copy()), q, omega_norm, power_w, opts=cbd_opts)
        if res.status == "ok" and res.wsrsu > best[0]:
            best = (res.wsrsu, s.copy())
    return {"best_wsrsu": best[0], "best_clusters": best[1]}

"""Joint dynamic clustering and beamforming: candidate pre-selection,
iteratively reweighted per-RRH cluster-budget cones, cluster recovery from
converged beam powers, and a final hard-cluster re-solve."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cbd import CbdOptions, ClusterSoc, cbd
from .linkmodel import BeamformerSet, ClusterAssignment

log = logging.getLogger(__name__)

DEFAULT_V_MAX = 7  # hexagonal geometry: a cell plus its six neighbors

# Relative beam-power threshold for declaring an RRH a cluster member; the
# reweighting drives non-members many orders of magnitude below this.
MEMBER_POWER_REL_THRESHOLD = 1e-4


@dataclass
class ReweightState:
    """Per-iteration state of the l1 reweighting."""

    rho: np.ndarray  # (U, R) nonnegative weights
    epsilon: float
    iteration: int = 0
    wsrsu_trace: list = field(default_factory=list)
    power_trace: list = field(default_factory=list)  # per-iteration (U, R) powers


@dataclass
class DynRcOptions:
    conv_tol: float = 1e-4
    max_outer: int = 20
    epsilon_rel: float = 1e-6  # epsilon = epsilon_rel * max power budget
    v_max: int = DEFAULT_V_MAX
    warm_start: bool = True  # reuse SCA state across outer iterations
    drop_each_iteration: bool = True  # run the rate-drop path inside every outer pass
    inner_sca_max: int = 8  # SCA cap inside reweighting passes (final solve uses cbd.sca_max)
    prune_rel_power: float = 1e-8  # drop candidates this far below a user's strongest beam
    cbd: CbdOptions = field(default_factory=CbdOptions)
    monitor_users: tuple = ()  # users whose per-RRH powers are traced


@dataclass
class DynRcResult:
    w: BeamformerSet
    clusters: ClusterAssignment
    rates: np.ndarray
    wsrsu: float
    iterations_used: int
    converged: bool
    gammas: np.ndarray = None
    sum_rate: float = 0.0
    status: str = "ok"
    message: str = ""
    reweight: ReweightState = None
    soft_wsrsu: float = 0.0  # last soft-iterate utility before hard re-solve
    dropped_users: list = field(default_factory=list)
    cluster_sizes: np.ndarray = None


def preselect_candidates(channel, v_max):
    """Per-user candidate sets: the v_max RRHs with the strongest channel
    norms, ties broken toward the lower RRH index."""
    R = channel.num_rrh
    if not 1 <= v_max <= R:
        raise ValueError(f"v_max must be in [1, {R}], got {v_max}")
    norms = np.linalg.norm(channel.h, axis=2)  # (U, R)
    out = []
    for u in range(channel.num_users):
        order = np.lexsort((np.arange(R), -norms[u]))
        out.append(np.sort(order[:v_max]))
    return out


def update_weights(w_hat, epsilon):
    """rho[u, r] = 1 / (||w_hat[u, r]||^2 + epsilon)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    w = w_hat.w if isinstance(w_hat, BeamformerSet) else np.asarray(w_hat)
    power = np.sum(np.abs(w) ** 2, axis=2)
    return 1.0 / (power + epsilon)


def cluster_constraint_soc(rho, n_r):
    """The per-RRH weighted budget sum_u rho[u,r] ||w[u,r]||^2 <= n_r as a
    cone spec consumed by the beamformer-design builder."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("reweighting weights must be nonnegative")
    return ClusterSoc(rho=rho, n_antennas=int(n_r))


def recover_clusters(beams, candidate_sets, n_antennas):
    """Threshold converged beam powers into a binary assignment, then cap
    each RRH at its antenna limit by dropping the weakest memberships."""
    power = beams.beam_power()  # (U, R)
    U, R = power.shape
    s = np.zeros((U, R), dtype=np.int8)
    for u in range(U):
        cand = np.asarray(candidate_sets[u])
        if cand.size == 0:
            continue
        p = power[u, cand]
        top = p.max()
        if top <= 0:
            continue
        keep = cand[p > MEMBER_POWER_REL_THRESHOLD * top]
        s[u, keep] = 1
    for r in range(R):
        members = np.flatnonzero(s[:, r])
        if members.size > n_antennas:
            order = members[np.argsort(power[members, r])]  # weakest first
            for u in order[: members.size - n_antennas]:
                s[u, r] = 0
    return ClusterAssignment(s=s, candidate_sets=[np.asarray(c) for c in candidate_sets])


def _singleton_assignment(channel, candidates, n_antennas):
    """v_max = 1: each user pinned to its strongest RRH, overloaded RRHs
    keeping only their strongest users (no clustering freedom to iterate)."""
    U, R = channel.num_users, channel.num_rrh
    norms = np.linalg.norm(channel.h, axis=2)
    s = np.zeros((U, R), dtype=np.int8)
    for u in range(U):
        if len(candidates[u]):
            s[u, candidates[u][0]] = 1
    for r in range(R):
        members = np.flatnonzero(s[:, r])
        if members.size > n_antennas:
            order = members[np.argsort(-norms[members, r], kind="stable")]
            for u in order[n_antennas:]:
                s[u, r] = 0
    return ClusterAssignment(s=s, candidate_sets=[np.asarray(c) for c in candidates])


def dynamic_rc(channel, q, omega, v_max=DEFAULT_V_MAX, power_w=None, opts=None):
    """Iteratively reweighted clustering + beamforming, then a hard re-solve.

    Iteration 0 runs with zero weights (the cluster budget is vacuous); each
    subsequent pass tightens the weighted budget around the RRHs that carried
    power, which drives non-cluster beams toward zero.
    """
    opts = opts or DynRcOptions()
    if power_w is None:
        raise ValueError("power_w (per-RRH budget, watts) is required")
    q = np.asarray(q, dtype=float)
    candidates = preselect_candidates(channel, v_max)
    n_ant = channel.num_antennas
    if v_max == 1:
        clusters = _singleton_assignment(channel, candidates, n_ant)
        final = cbd(channel, clusters, q, omega, power_w, opts=opts.cbd)
        return DynRcResult(
            w=final.w,
            clusters=clusters,
            rates=final.rates,
            wsrsu=final.wsrsu,
            iterations_used=1,
            converged=final.status == "ok",
            gammas=final.gammas,
            sum_rate=final.sum_rate,
            status=final.status,
            message=final.message,
            reweight=ReweightState(
                rho=np.zeros((channel.num_users, channel.num_rrh)),
                epsilon=opts.epsilon_rel * float(np.max(power_w)),
                iteration=1,
                wsrsu_trace=[final.wsrsu],
                power_trace=[final.w.beam_power()],
            ),
            soft_wsrsu=final.wsrsu,
            dropped_users=final.dropped_users,
            cluster_sizes=clusters.cluster_sizes(),
        )
    eps = opts.epsilon_rel * float(np.max(power_w))
    state = ReweightState(rho=np.zeros((channel.num_users, channel.num_rrh)), epsilon=eps)

    base = opts.cbd
    omega_soft = omega if opts.drop_each_iteration else float("inf")
    res = None
    warm = None
    converged = False
    stall = 0
    working_sets = [np.asarray(c) for c in candidates]
    for it in range(opts.max_outer):
        extra = None if not np.any(state.rho > 0) else ClusterSoc(state.rho, n_ant)
        copts = replace(base, extra_soc=extra, params=warm, sca_max=opts.inner_sca_max)
        step = cbd(channel, working_sets, q, omega_soft, power_w, opts=copts)
        if step.status != "ok":
            if res is None:
                return DynRcResult(
                    w=step.w,
                    clusters=step.clusters,
                    rates=step.rates,
                    wsrsu=step.wsrsu,
                    iterations_used=it + 1,
                    converged=False,
                    status="numerical_failure",
                    message=step.message,
                    reweight=state,
                )
            log.warning("outer iteration %d failed (%s); keeping previous iterate", it, step.message)
            break
        res = step
        state.iteration = it + 1
        state.wsrsu_trace.append(step.wsrsu)
        power = step.w.beam_power()
        state.power_trace.append(power)
        state.rho = update_weights(step.w, eps)
        if opts.warm_start:
            warm = step.params
        if opts.prune_rel_power > 0:
            # beams that collapsed under reweighting stay collapsed; dropping
            # them shrinks later passes without changing the fixed point
            pruned = []
            for u in range(channel.num_users):
                keep = working_sets[u]
                top = power[u, keep].max() if keep.size else 0.0
                if top > 0:
                    keep = keep[power[u, keep] >= opts.prune_rel_power * top]
                pruned.append(keep)
            working_sets = pruned
        # two-strike stall rule on the utility CHANGE: the first reweighted
        # pass may legitimately lose utility (the budget starts binding), so
        # only a settled value counts as convergence
        if len(state.wsrsu_trace) >= 2:
            prev = state.wsrsu_trace[-2]
            change = abs(step.wsrsu - prev)
            thresh = opts.conv_tol * max(abs(prev), 1e-9)
            stall = 0 if change > thresh else stall + (2 if change <= 0.01 * thresh else 1)
        if stall >= 2:
            converged = True
            break

    if res is None:
        raise RuntimeError("dynamic clustering made no progress")
    clusters = recover_clusters(res.w, candidates, n_ant)
    # warm-starting from the converged expansion point keeps the hard re-solve
    # from wandering to a different (often worse) stationary point
    final_opts = replace(base, extra_soc=None, params=warm)
    final = cbd(channel, clusters, q, omega, power_w, opts=final_opts)
    if final.status != "ok":
        log.warning("hard-cluster re-solve failed (%s); returning soft iterate", final.message)
        soft_clusters = recover_clusters(res.w, candidates, n_ant)
        return DynRcResult(
            w=res.w,
            clusters=soft_clusters,
            rates=res.rates,
            wsrsu=res.wsrsu,
            iterations_used=state.iteration,
            converged=converged,
            gammas=res.gammas,
            sum_rate=res.sum_rate,
            status="numerical_failure",
            message=f"hard re-solve: {final.message}",
            reweight=state,
            soft_wsrsu=res.wsrsu,
            dropped_users=res.dropped_users,
            cluster_sizes=soft_clusters.cluster_sizes(),
        )
    if res.wsrsu > 0 and final.wsrsu < res.wsrsu * 0.99:
        log.warning(
            "hard-cluster re-solve lost %.2f%% utility (soft %.6g -> hard %.6g)",
            100.0 * (1.0 - final.wsrsu / res.wsrsu),
            res.wsrsu,
            final.wsrsu,
        )
    return DynRcResult(
        w=final.w,
        clusters=clusters,
        rates=final.rates,
        wsrsu=final.wsrsu,
        iterations_used=state.iteration,
        converged=converged,
        gammas=final.gammas,
        sum_rate=final.sum_rate,
        status="ok",
        reweight=state,
        soft_wsrsu=res.wsrsu,
        dropped_users=final.dropped_users,
        cluster_sizes=clusters.cluster_sizes(),
    )

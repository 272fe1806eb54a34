"""Cooperative beamformer design for a fixed (or candidate-weighted)
clustering: the sequential-SOCP solve of the relaxed weighted sum-rate
problem, greedy rate dropping against the computing cap, and the
SINR-target feasibility SOCP.

Internally everything is normalized: beams are expressed in units of the
per-RRH power budget (||w_r|| <= 1), channels are divided by the noise
amplitude and a per-user scale, and the per-user utility exponent variables
are re-scaled by the previous iterate so all cone data stays O(1) even at
interference-limited operating points.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import conic
from .linkmodel import BeamformerSet, ClusterAssignment, evaluate, phase_rotate

_PHI_FLOOR = 1e-12


def scale_utility_weights(q):
    """Uniformly scale weights so min q > 1 (monotone reparameterization)."""
    q = np.asarray(q, dtype=float)
    if q.size == 0 or np.any(q <= 0):
        raise ValueError("utility weights must be positive")
    return q * (1.01 / q.min())


@dataclass
class ScaParams:
    """State of the sequential convex approximation, full length per user,
    in builder-scaled units.

    ``t_star`` is the exponent-space expansion point; ``t_star_root`` holds
    its numerically safe q-th root (1 + previous SINR), which is what the
    linearized constraints are assembled from.
    """

    t_star_root: np.ndarray  # per-user 1 + gamma at the expansion point
    phi: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    q_scaled: np.ndarray

    @property
    def t_star(self):
        with np.errstate(over="ignore"):
            return self.t_star_root**self.q_scaled

    def validate(self, users=None):
        users = range(self.t_star_root.size) if users is None else users
        for u in users:
            if self.t_star_root[u] <= 0 or self.phi[u] <= 0:
                raise ValueError("SCA expansion point and phi must be positive")
            if self.xi[u] < 0 or self.beta[u] < 0:
                raise ValueError("SCA slacks must be nonnegative")
            if self.q_scaled[u] <= 1:
                raise ValueError("scaled utility weights must exceed 1")


@dataclass
class ClusterSoc:
    """Weighted per-RRH cluster-budget cone: sum_u rho[u,r] ||w[u,r]||^2 <= Nr."""

    rho: np.ndarray  # (U, R), units 1/watt against unnormalized beams
    n_antennas: int


@dataclass
class CbdOptions:
    sca_tol: float = 1e-4
    sca_max: int = 30
    tau: float = None  # greedy-drop step; default omega/1000
    solver_tol: float = 1e-8
    solver_max_iters: int = 200
    backend: str = None
    extra_soc: ClusterSoc = None
    params: ScaParams = None  # warm start (same channel/power geometry)


@dataclass
class CbdResult:
    w: BeamformerSet
    rates: np.ndarray  # normalized bits/s/Hz, consistent with w
    wsrsu: float
    sca_trace: list
    dropped_users: list  # (user, residual target rate) pairs
    clusters: ClusterAssignment  # support mask the beams were solved over
    gammas: np.ndarray = None
    sum_rate: float = 0.0
    status: str = "ok"  # ok | numerical_failure
    message: str = ""
    sca_iterations: int = 0
    target_rates: np.ndarray = None
    params: ScaParams = None  # final SCA state, reusable as a warm start


def _candidate_sets(clusters_or_weights, num_users):
    """Per-user RRH index arrays from an assignment or a raw list of sets."""
    if isinstance(clusters_or_weights, ClusterAssignment):
        sets = clusters_or_weights.serving_sets()
    else:
        sets = list(clusters_or_weights)
    if len(sets) != num_users:
        raise ValueError(f"got {len(sets)} serving sets for {num_users} users")
    return [np.unique(np.asarray(s, dtype=int)) for s in sets]


def _interleave(vec):
    """Complex row vector -> (re, im) coefficient rows over interleaved reals."""
    n = vec.size
    re = np.empty(2 * n)
    im = np.empty(2 * n)
    re[0::2] = vec.real
    re[1::2] = -vec.imag
    im[0::2] = vec.imag
    im[1::2] = vec.real
    return re, im


class _CbdBuilder:
    """Precomputed scaled channel data and static constraint blocks for one
    (channel, serving sets, power) geometry; rebuilds the SCA subproblem or
    the feasibility program cheaply per iteration."""

    def __init__(self, channel, sets, power_w):
        h = channel.h
        self.channel = channel
        self.num_users, self.num_rrh, self.nant = h.shape
        self.sets = sets
        self.power_w = np.broadcast_to(
            np.asarray(power_w, dtype=float), (self.num_rrh,)
        ).copy()
        if np.any(self.power_w <= 0):
            raise ValueError("per-RRH power budgets must be positive")
        if channel.noise_power <= 0:
            raise ValueError("noise power must be positive")
        sigma = math.sqrt(channel.noise_power)
        hh = h * np.sqrt(self.power_w)[None, :, None] / sigma
        norms = np.linalg.norm(hh, axis=2)  # (U, R)
        self.active = [
            u for u in range(self.num_users) if sets[u].size and norms[u, sets[u]].max() > 0
        ]
        # per-user scale = interference+noise amplitude at the equal-power MRT
        # point, so every user's constraint block is O(1) in scaled units no
        # matter how wildly the SINRs differ across users (>= 1 since the
        # sigma-normalized noise amplitude is 1)
        self.scale_u = np.ones(self.num_users)
        self.hhat = hh
        self.nu = np.ones(self.num_users)
        self._static = None
        if self.active:
            _, beta0 = self.sinr_scaled(self.mrt_point())
            self.scale_u = np.maximum(beta0, 1.0)
        self.hhat = hh / self.scale_u[:, None, None]
        self.nu = 1.0 / self.scale_u  # per-user scaled noise amplitude

    # -- variable layout -------------------------------------------------------

    def _layout(self, users):
        cols = {}
        start = 0
        for u in users:
            for r in self.sets[u]:
                cols[(u, r)] = np.arange(start, start + 2 * self.nant)
                start += 2 * self.nant
        return cols, start

    def _coupling_rows(self, u_rx, u_tx, cols):
        """(re_data, im_data, cidx) for the coupling of u_rx with u_tx's beams."""
        res, ims, cs = [], [], []
        for r in self.sets[u_tx]:
            re, im = _interleave(self.hhat[u_rx, r])
            res.append(re)
            ims.append(im)
            cs.append(cols[(u_tx, r)])
        return np.concatenate(res), np.concatenate(ims), np.concatenate(cs)

    def _static_blocks(self):
        """Params-independent pieces of the relaxed problem, built once.

        Coupling terms are lifted into auxiliary variables (one real pair per
        user pair) defined by sparse equality rows, so every cone row touches
        a single variable and the KKT factorization stays sparse.
        """
        if self._static is not None:
            return self._static
        users = self.active
        cols, nw = self._layout(users)
        st = {"cols": cols, "nw": nw}
        # per-RRH power cone column sets
        power = []
        for r in range(self.num_rrh):
            cs = [cols[(u, r)] for u in users if (u, r) in cols]
            if cs:
                power.append((r, np.concatenate(cs)))
        st["power"] = power
        # Lemma-1 rows: Im(h . w) == 0 and Re(h . w) >= 0 per pair
        eq_d, ineq_d, rows, cs_all = [], [], [], []
        row = 0
        for u in users:
            for r in self.sets[u]:
                re, im = _interleave(self.hhat[u, r])
                c = cols[(u, r)]
                eq_d.append(im)
                ineq_d.append(-re)
                rows.append(np.full(c.size, row))
                cs_all.append(c)
                row += 1
        st["lemma_rows"] = row
        st["lemma_ridx"] = np.concatenate(rows)
        st["lemma_cidx"] = np.concatenate(cs_all)
        st["lemma_eq_data"] = np.concatenate(eq_d)
        st["lemma_ineq_data"] = np.concatenate(ineq_d)
        # Interference neighborhoods: a pair (u, v) enters user u's cone only
        # when v's beams can move u's interference norm by more than 1e-4 of
        # u's noise entry; anything below shifts the SINR by < 1e-8 relative.
        gain = np.zeros((self.num_users, self.num_users))
        for u in users:
            hn = np.linalg.norm(self.hhat[u], axis=1)  # (R,)
            for v in users:
                gain[u, v] = sum(hn[r] for r in self.sets[v])
        neigh = {
            u: [v for v in users if v != u and gain[u, v] >= 1e-4 * self.nu[u]] for u in users
        }
        st["neigh"] = neigh
        # coupling-variable layout: Re+Im per interfering pair, Re on diagonal
        pidx = {}
        nxt = nw
        for u in users:
            pidx[(u, u)] = (nxt, None)
            nxt += 1
            for v in neigh[u]:
                pidx[(u, v)] = (nxt, nxt + 1)
                nxt += 2
        st["pidx"] = pidx
        st["npsi"] = nxt - nw
        # defining equalities: psi[u,v] - sum_r h[u,r].w[v,r] = 0
        datas, rids, cids = [], [], []
        row = 0
        for (u, v), (iR, iI) in pidx.items():
            re, im, c = self._coupling_rows(u, v, cols)
            datas += [-re, np.ones(1)]
            rids += [np.full(c.size, row), np.full(1, row)]
            cids += [c, np.full(1, iR)]
            row += 1
            if iI is not None:
                datas += [-im, np.ones(1)]
                rids += [np.full(c.size, row), np.full(1, row)]
                cids += [c, np.full(1, iI)]
                row += 1
        st["psi_rows"] = row
        st["psi_eq"] = (np.concatenate(datas), np.concatenate(rids), np.concatenate(cids))
        # own-signal expression per user is just its diagonal coupling variable
        st["psi"] = {u: conic.LinExpr({pidx[(u, u)][0]: 1.0}) for u in users}
        # interference cone per user: singleton rows over the off-diagonal
        # coupling variables plus the constant noise entry
        interf = {}
        for u in users:
            cidx = []
            for v in neigh[u]:
                iR, iI = pidx[(u, v)]
                cidx += [iR, iI]
            m = len(cidx)
            b = np.zeros(m + 1)
            b[m] = self.nu[u]
            interf[u] = (np.ones(m), np.arange(m), np.asarray(cidx, dtype=np.int64), b)
        st["interf"] = interf
        self._static = st
        return st

    # -- reference points and SCA state ------------------------------------------

    def mrt_point(self, extra_soc=None):
        """Equal-power maximum-ratio beams over the serving sets (scaled
        units), with per-beam powers capped so any weighted cluster budget
        holds at the point as well."""
        w = np.zeros((self.num_users, self.num_rrh, self.nant), dtype=complex)
        served = {r: [] for r in range(self.num_rrh)}
        for u in self.active:
            for r in self.sets[u]:
                served[r].append(u)
        rho_hat = None
        if extra_soc is not None and np.any(np.asarray(extra_soc.rho) > 0):
            rho_hat = np.asarray(extra_soc.rho) * self.power_w[None, :]
        for r, us in served.items():
            if not us:
                continue
            n_served = len(us)
            for u in us:
                p_each = 1.0 / n_served
                if rho_hat is not None and rho_hat[u, r] > 0:
                    p_each = min(p_each, extra_soc.n_antennas / (n_served * rho_hat[u, r]))
                hn = np.linalg.norm(self.hhat[u, r])
                if hn > 0:
                    w[u, r] = math.sqrt(p_each) * self.hhat[u, r].conj() / hn
        return w

    def sinr_scaled(self, w_scaled):
        """(gamma, beta) of scaled beams against scaled channels, full length."""
        users = self.active
        gam = np.zeros(self.num_users)
        beta = np.zeros(self.num_users)
        if not users:
            return gam, beta
        idx = np.asarray(users, dtype=int)
        psi = np.einsum("urn,vrn->uv", self.hhat[idx], w_scaled[idx])
        p = np.abs(psi) ** 2
        own = np.diag(p)
        inter = p.sum(axis=1) - own
        den = inter + self.nu[idx] ** 2
        gam[idx] = own / den
        beta[idx] = np.sqrt(den)
        return gam, beta

    def _params_at(self, w_scaled, q_scaled):
        # phi and beta are stored in sigma-normalized units, independent of
        # the per-user scaling, so warm starts survive set changes
        gam, beta_hat = self.sinr_scaled(w_scaled)
        beta = beta_hat * self.scale_u
        xi = gam.copy()
        phi = np.maximum(np.sqrt(np.maximum(xi, 0.0)), _PHI_FLOOR) / np.maximum(beta, 1e-300)
        phi = np.maximum(phi, _PHI_FLOOR)
        return ScaParams(
            t_star_root=1.0 + gam,
            phi=phi,
            beta=beta,
            xi=xi,
            q_scaled=np.asarray(q_scaled, dtype=float),
        )

    def init_params(self, q_scaled, extra_soc=None):
        """SCA start at the equal-power MRT point with the AM-GM-equality phi."""
        return self._params_at(self.mrt_point(extra_soc), q_scaled)

    def params_from_beams(self, w_scaled, q_scaled):
        """Re-expansion at an achieved point, which it makes surrogate-feasible
        with equality -- this is what keeps the utility trace nondecreasing."""
        return self._params_at(w_scaled, q_scaled)

    # -- program assembly ----------------------------------------------------------

    def build_relaxed(self, params, extra_soc=None, objective_floor=1e-4):
        """One SCA subproblem: geometric-mean objective over the rescaled
        exponent variables, power cones, interference cones, the AM-GM
        surrogate of the signal constraint, and the linearized exponent
        constraint; plus the optional weighted cluster cone."""
        params.validate(self.active)
        st = self._static_blocks()
        users = self.active
        na = len(users)
        prog = conic.ConeProgram("relaxed_cbd")
        for u in users:
            prog.add_var(f"w{u}", 2 * self.nant * len(self.sets[u]))
        psi = prog.add_var("psi", st["npsi"])
        # Every auxiliary variable is substituted so its meaningful range is
        # O(1) regardless of the SINR operating point: xi = sig * xi_hat,
        # t = t_star * (1 + a * t_hat), g = 1 + s_obj * g_hat. Without this
        # the solver cannot separate the tiny feasible ranges from rays.
        t = prog.add_var("t", na)
        beta = prog.add_var("beta", na)
        xi = prog.add_var("xi", na)
        g = prog.add_var("g", 1)
        assert psi.start == st["nw"]
        gamma_prev = params.t_star_root - 1.0
        sig = {}
        for u in users:
            gmax = (
                sum(np.linalg.norm(self.hhat[u, r]) for r in self.sets[u]) / self.nu[u]
            ) ** 2
            sig[u] = float(np.clip(gamma_prev[u], max(gmax, 1e-300) * 1e-8, max(gmax, 1e-300)))
        kprime = 1 << max(0, (na - 1).bit_length())
        s_obj = math.log(2.0) / max(kprime, 1) * sum(
            params.q_scaled[u] * math.log2(params.t_star_root[u]) for u in users
        )
        # the floor caps the objective-vector magnitude at 1/floor; solvers
        # misread steeper objectives as unboundedness certificates
        s_obj = min(max(s_obj, objective_floor), 1.0)
        g_expr = g[0] + 1.0

        for _r, cidx in st["power"]:
            m = cidx.size
            prog.add_soc((np.ones(m), np.arange(m), cidx), np.zeros(m), None, 1.0)
        if extra_soc is not None and np.any(np.asarray(extra_soc.rho) > 0):
            self._add_cluster_soc(prog, st, extra_soc)
        zeros = np.zeros(st["lemma_rows"])
        prog.add_linear_eq_coo(st["lemma_eq_data"], st["lemma_ridx"], st["lemma_cidx"], zeros)
        prog.add_linear_ineq_coo(st["lemma_ineq_data"], st["lemma_ridx"], st["lemma_cidx"], zeros)
        d, ri, ci = st["psi_eq"]
        prog.add_linear_eq_coo(d, ri, ci, np.zeros(st["psi_rows"]))

        t_leaves = []
        for i, u in enumerate(users):
            data, rids, cids, b = st["interf"][u]
            prog.add_soc((data, rids, cids), b, beta[i], 0.0)
            # signal surrogate Psi - xi/(2 phi) >= (phi/2) beta^2, written as
            # the equivalent hyperbolic (2/phi)(Psi - xi/(2 phi)) * 1 >= beta^2
            # so all coefficients sit at the beta ~ O(1) scale; phi converts
            # from sigma-normalized to this builder's per-user scaled units
            phi_u = params.phi[u] * self.scale_u[u]
            a_expr = st["psi"][u] * (2.0 / phi_u) - xi[i] * (sig[u] / phi_u**2)
            prog.add_hyperbolic(a_expr, 1.0, beta[i])
            # linearized exponent constraint, divided through by sig:
            # t_hat - xi_hat <= -gamma_prev / sig
            root = params.t_star_root[u]
            prog.add_linear_ineq(t[i] - xi[i], -gamma_prev[u] / sig[u])
            a_u = params.q_scaled[u] * sig[u] / root
            t_leaves.append(t[i] * a_u + 1.0)
        prog.add_nonneg([xi[i] for i in range(na)])
        prog.add_geomean_epigraph(t_leaves, g_expr)
        # objective weight 1/s_obj puts the optimal cost at O(1), so the
        # duality-gap tolerance resolves the utility even at tiny SINR; the
        # homogeneous embedding absorbs the cost scale itself
        prog.set_objective_max(g[0] * (1.0 / s_obj))
        return prog

    def _add_cluster_soc(self, prog, st, extra):
        rho = np.asarray(extra.rho, dtype=float)
        if np.any(rho < 0):
            raise ValueError("cluster weights must be nonnegative")
        for r in range(self.num_rrh):
            datas, cids = [], []
            for u in self.active:
                if (u, r) in st["cols"] and rho[u, r] > 0:
                    # weights act on physical beams; rho*P rescales normalized ones
                    coef = math.sqrt(rho[u, r] * self.power_w[r])
                    c = st["cols"][(u, r)]
                    datas.append(np.full(c.size, coef))
                    cids.append(c)
            if not datas:
                continue
            data = np.concatenate(datas)
            cidx = np.concatenate(cids)
            prog.add_soc(
                (data, np.arange(data.size), cidx),
                np.zeros(data.size),
                None,
                math.sqrt(extra.n_antennas),
            )

    def build_feasibility(self, gamma_star, include=None):
        """SINR-target feasibility SOCP with minimum-total-power tie-break."""
        gamma_star = np.asarray(gamma_star, dtype=float)
        include = (
            np.ones(self.num_users, dtype=bool)
            if include is None
            else np.asarray(include, dtype=bool)
        )
        users = [u for u in self.active if include[u]]
        bad = [u for u in users if not np.isfinite(gamma_star[u]) or gamma_star[u] <= 0]
        if bad:
            raise ValueError(
                f"SINR targets must be positive for retained users; offending users {bad}"
            )
        prog = conic.ConeProgram("cbd_feasibility")
        cols, nw = self._layout(users)
        for u in users:
            prog.add_var(f"w{u}", 2 * self.nant * len(self.sets[u]))
        tau = prog.add_var("tau", 1)
        # same negligible-interferer rule as the relaxed program
        hn = {u: np.linalg.norm(self.hhat[u], axis=1) for u in users}
        neigh = {
            u: [
                v
                for v in users
                if v == u or sum(hn[u][r] for r in self.sets[v]) >= 1e-4 * self.nu[u]
            ]
            for u in users
        }

        prog.add_soc((np.ones(nw), np.arange(nw), np.arange(nw)), np.zeros(nw), tau[0], 0.0)
        for r in range(self.num_rrh):
            cs = [cols[(u, r)] for u in users if (u, r) in cols]
            if not cs:
                continue
            cidx = np.concatenate(cs)
            prog.add_soc((np.ones(cidx.size), np.arange(cidx.size), cidx), np.zeros(cidx.size), None, 1.0)
        eqs, ineqs = [], []
        for u in users:
            for r in self.sets[u]:
                re, im = _interleave(self.hhat[u, r])
                c = cols[(u, r)]
                eqs.append(conic.LinExpr(dict(zip(c.tolist(), im.tolist()))))
                ineqs.append(conic.LinExpr(dict(zip(c.tolist(), (-re).tolist()))))
        prog.add_linear_eq(eqs, 0.0)
        prog.add_linear_ineq(ineqs, 0.0)
        for u in users:
            datas, rids, cids = [], [], []
            row = 0
            own = None
            for v in neigh[u]:
                re, im, c = self._coupling_rows(u, v, cols)
                datas += [re, im]
                rids += [np.full(c.size, row), np.full(c.size, row + 1)]
                cids += [c, c]
                if v == u:
                    own = conic.LinExpr(dict(zip(c.tolist(), re.tolist())))
                row += 2
            b = np.zeros(row + 1)
            b[row] = self.nu[u]
            coef = math.sqrt(1.0 + 1.0 / gamma_star[u])
            prog.add_soc(
                (np.concatenate(datas), np.concatenate(rids), np.concatenate(cids)),
                b,
                own * coef,
                0.0,
            )
        prog.set_objective_max(-tau.expr())
        return prog, cols

    # -- extraction ------------------------------------------------------------------

    def scaled_from_solution(self, x, cols):
        w = np.zeros((self.num_users, self.num_rrh, self.nant), dtype=complex)
        for (u, r), c in cols.items():
            blk = x[c]
            w[u, r] = blk[0::2] + 1j * blk[1::2]
        return w

    def beams_from_scaled(self, w_scaled):
        """Normalized solver beams -> physical sqrt-watt beams."""
        w = w_scaled * np.sqrt(self.power_w)[None, :, None]
        return BeamformerSet(w=w)

    def support_assignment(self):
        s = np.zeros((self.num_users, self.num_rrh), dtype=np.int8)
        for u in range(self.num_users):
            s[u, self.sets[u]] = 1
        return ClusterAssignment(s=s, candidate_sets=list(self.sets))


def build_relaxed_cbd(channel, clusters_or_weights, q, params, power_w, extra_soc=None):
    """Standalone assembly of one SCA subproblem (mainly for inspection)."""
    sets = _candidate_sets(clusters_or_weights, channel.num_users)
    builder = _CbdBuilder(channel, sets, power_w)
    return builder.build_relaxed(params, extra_soc=extra_soc)


def initial_sca_params(channel, clusters_or_weights, q, power_w):
    """MRT-equal-power SCA initialization (full-length per-user arrays)."""
    sets = _candidate_sets(clusters_or_weights, channel.num_users)
    builder = _CbdBuilder(channel, sets, power_w)
    return builder.init_params(scale_utility_weights(q))


def _zero_result(channel, sets, message="", status="ok"):
    U, R, N = channel.h.shape
    s = np.zeros((U, R), dtype=np.int8)
    for u in range(U):
        s[u, sets[u]] = 1
    return CbdResult(
        w=BeamformerSet(w=np.zeros((U, R, N), dtype=complex)),
        rates=np.zeros(U),
        wsrsu=0.0,
        sca_trace=[],
        dropped_users=[],
        clusters=ClusterAssignment(s=s, candidate_sets=list(sets)),
        gammas=np.zeros(U),
        sum_rate=0.0,
        status=status,
        message=message,
    )


def sca_solve(channel, clusters_or_weights, q, sca_tol=1e-4, sca_max=30, opts=None, power_w=None):
    """Iterate the convexified subproblem to a stationary point of the
    weighted sum-rate objective.

    Each iteration re-expands at the achieved beamformers, which makes the
    previous point feasible (with equality) for the next surrogate, so the
    recorded utility trace is nondecreasing up to solver tolerance.
    """
    opts = opts or CbdOptions()
    if power_w is None:
        raise ValueError("power_w (per-RRH budget, watts) is required")
    q = np.asarray(q, dtype=float)
    sets = _candidate_sets(clusters_or_weights, channel.num_users)
    builder = _CbdBuilder(channel, sets, power_w)
    if not builder.active:
        return _zero_result(channel, sets)
    qs = scale_utility_weights(q)
    mu = channel.coding_eff
    mask = builder.support_assignment()
    cols = builder._static_blocks()["cols"]

    if opts.params is not None:
        params = replace(opts.params, q_scaled=qs)
    else:
        params = builder.init_params(qs, extra_soc=opts.extra_soc)
    trace = []
    best = None
    cold_retried = opts.params is None
    shrink = 0
    stall = 0
    obj_floor = 1e-4
    iterations = 0
    status, message = "ok", ""
    for _ in range(max(1, sca_max)):
        iterations += 1
        prog = builder.build_relaxed(params, extra_soc=opts.extra_soc, objective_floor=obj_floor)
        sol = conic.solve(
            prog, tol=opts.solver_tol, max_iters=opts.solver_max_iters, backend=opts.backend
        )
        usable = sol.status == "optimal"
        if not usable and sol.x is not None and sol.status != "infeasible":
            usable = conic.check_solution(prog, sol.x, 1e-6)["ok"]
        if not usable:
            if not cold_retried:
                # warm start did not carry over to the new constraint set
                params = builder.init_params(qs, extra_soc=opts.extra_soc)
                cold_retried = True
                continue
            if obj_floor < 1e-2:
                obj_floor *= 100.0  # flatter objective, cheaper certificate check
                continue
            if shrink < 3:
                # smaller phi relaxes the AM-GM surrogate toward feasibility
                params = replace(params, phi=np.maximum(params.phi * 0.25, _PHI_FLOOR))
                shrink += 1
                continue
            status = "numerical_failure"
            message = f"solver: {sol.status} ({sol.message})"
            break
        w_scaled = builder.scaled_from_solution(sol.x, cols)
        beams = phase_rotate(channel, builder.beams_from_scaled(w_scaled))
        report = evaluate(channel, beams, mask, q, mu=mu)
        thresh = sca_tol * max(abs(best[0]) if best else 0.0, 1e-9)
        if best is not None and report.wsrsu < best[0] - 1e-9 * max(1.0, abs(best[0])):
            # solver noise produced a worse point; retry from the best one
            stall += 1
            if stall >= 2:
                break
            params = best[3]
            continue
        trace.append(report.wsrsu)
        params = builder.params_from_beams(w_scaled, qs)
        improvement = report.wsrsu - best[0] if best else float("inf")
        if best is None or report.wsrsu >= best[0]:
            best = (report.wsrsu, beams, report, params)
        # stop once the best utility stops moving; two strikes so one noisy
        # solve cannot end the ascent early
        if improvement <= 0.01 * thresh:
            stall += 2
        elif improvement <= thresh:
            stall += 1
        else:
            stall = 0
        if stall >= 2:
            break

    if best is None:
        return _zero_result(channel, sets, message=message, status="numerical_failure")
    _, beams, report, final_params = best
    return CbdResult(
        w=beams,
        rates=report.rates,
        wsrsu=report.wsrsu,
        sca_trace=trace,
        dropped_users=[],
        clusters=mask,
        gammas=report.gammas,
        sum_rate=report.sum_rate,
        status=status,
        message=message,
        sca_iterations=iterations,
        params=final_params,
    )


def greedy_drop(rates, q, omega, tau):
    """Reduce rates in tau-steps, smallest utility weight first, until the
    total fits under omega; each user is exhausted before moving on."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    r = np.asarray(rates, dtype=float).copy()
    qv = np.asarray(q, dtype=float)
    total = r.sum()
    if math.isinf(omega) or total <= omega:
        return r
    order = np.lexsort((np.arange(r.size), qv))
    for u in order:
        excess = total - omega
        if excess <= 0:
            break
        if r[u] <= 0 or qv[u] <= 0:
            continue
        steps = math.ceil(excess / tau - 1e-12)
        if steps * tau <= r[u]:
            r[u] -= steps * tau
            total -= steps * tau
        else:
            total -= r[u]
            r[u] = 0.0
    return np.maximum(r, 0.0)


def build_feasibility(channel, clusters, gamma_star, power_w, include=None):
    """Standalone feasibility program (power cones + per-user SINR cones)."""
    sets = _candidate_sets(clusters, channel.num_users)
    builder = _CbdBuilder(channel, sets, power_w)
    prog, _ = builder.build_feasibility(gamma_star, include=include)
    return prog


def cbd(channel, clusters, q, omega, power_w, opts=None):
    """Full beamformer design: SCA solve, computing-cap check, greedy rate
    dropping, and the feasibility re-solve that realizes the reduced rates."""
    opts = opts or CbdOptions()
    q = np.asarray(q, dtype=float)
    res = sca_solve(
        channel,
        clusters,
        q,
        sca_tol=opts.sca_tol,
        sca_max=opts.sca_max,
        opts=opts,
        power_w=power_w,
    )
    if res.status != "ok":
        return res
    if omega is None or math.isinf(omega) or res.sum_rate <= omega + 1e-9:
        return res

    tau = opts.tau if opts.tau is not None else (omega / 1000.0 if omega > 0 else 1.0)
    targets = greedy_drop(res.rates, q, omega, tau)
    targets[targets < 1e-12] = 0.0  # numerical dust below any solver tolerance
    dropped = [(int(u), float(targets[u])) for u in np.flatnonzero(targets < res.rates - 1e-12)]
    sets = _candidate_sets(clusters, channel.num_users)
    if not np.any(targets > 0):
        out = _zero_result(channel, sets)
        out.sca_trace = res.sca_trace
        out.dropped_users = dropped
        out.target_rates = targets
        out.sca_iterations = res.sca_iterations
        return out

    mu = channel.coding_eff
    gamma_star = (np.exp2(targets) - 1.0) / mu
    builder = _CbdBuilder(channel, sets, power_w)
    include = targets > 0
    prog, cols = builder.build_feasibility(gamma_star, include=include)
    sol = conic.solve(
        prog, tol=opts.solver_tol, max_iters=opts.solver_max_iters, backend=opts.backend
    )
    if sol.status != "optimal" or sol.x is None:
        res.status = "numerical_failure"
        res.message = (
            f"feasibility solve after rate dropping returned {sol.status} "
            f"({sol.message}); targets sum {targets.sum():.6g} vs omega {omega:.6g}"
        )
        res.dropped_users = dropped
        res.target_rates = targets
        return res
    beams = phase_rotate(
        channel, builder.beams_from_scaled(builder.scaled_from_solution(sol.x, cols))
    )
    report = evaluate(channel, beams, res.clusters, q, mu=mu)
    return CbdResult(
        w=beams,
        rates=report.rates,
        wsrsu=report.wsrsu,
        sca_trace=res.sca_trace,
        dropped_users=dropped,
        clusters=res.clusters,
        gammas=report.gammas,
        sum_rate=report.sum_rate,
        status="ok",
        sca_iterations=res.sca_iterations,
        target_rates=targets,
        params=res.params,
    )

"""Standard-form second-order cone programs: modeling layer, SOC rewriting
utilities (hyperbolic and geometric-mean constructions), and solver backends.

A ConeProgram holds named real variables (complex model quantities are lifted
to interleaved real/imaginary parts by callers), a linear objective to
maximize, and constraints of four kinds: linear equality, linear inequality,
second-order cone ||Ax + b|| <= c'x + d, and rotated cone 2uv >= ||z||^2.
Rotated cones are lowered to plain SOCs when the program is compiled.

Backends: clarabel (default when installed) and cvxopt's conelp, both
primal-dual interior-point methods with homogeneous/self-dual embeddings.
"""

import logging
import os
import threading
import time

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

_BACKENDS = []
try:
    import clarabel  # noqa: F401

    _BACKENDS.append("clarabel")
except ImportError:
    pass
try:
    import cvxopt  # noqa: F401
    import cvxopt.solvers

    _BACKENDS.append("cvxopt")
except ImportError:
    pass

DEFAULT_BACKEND = _BACKENDS[0] if _BACKENDS else None
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 200

_dump_state = {"dir": None, "count": 0}
_dump_lock = threading.Lock()


class NumericalFailure(RuntimeError):
    """Solver did not reach an optimal point; carries whatever is known."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


def set_dump_dir(path):
    """Write every subsequently solved program to ``path`` (None disables)."""
    with _dump_lock:
        _dump_state["dir"] = path
        _dump_state["count"] = 0
        if path is not None:
            os.makedirs(path, exist_ok=True)


class Var:
    """Handle for a named block of ``dim`` consecutive real scalars."""

    __slots__ = ("name", "start", "dim")

    def __init__(self, name, start, dim):
        self.name = name
        self.start = start
        self.dim = dim

    def __getitem__(self, i):
        if not 0 <= i < self.dim:
            raise IndexError(f"{self.name}[{i}] out of range (dim {self.dim})")
        return LinExpr({self.start + i: 1.0})

    def expr(self):
        if self.dim != 1:
            raise ValueError(f"{self.name} is not scalar")
        return self[0]

    @property
    def indices(self):
        return np.arange(self.start, self.start + self.dim)


class LinExpr:
    """Sparse scalar affine expression: sum coeff_i * x_i + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def wrap(v):
        if isinstance(v, LinExpr):
            return v
        if isinstance(v, Var):
            return v.expr()
        return LinExpr(const=float(v))

    def __add__(self, other):
        other = LinExpr.wrap(other)
        out = LinExpr(self.terms, self.const + other.const)
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        return out

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-LinExpr.wrap(other))

    def __rsub__(self, other):
        return LinExpr.wrap(other) + (-self)

    def __mul__(self, a):
        a = float(a)
        return LinExpr({k: a * v for k, v in self.terms.items()}, a * self.const)

    __rmul__ = __mul__

    def row(self):
        idx = np.fromiter(self.terms.keys(), dtype=np.int64, count=len(self.terms))
        val = np.fromiter(self.terms.values(), dtype=float, count=len(self.terms))
        return idx, val, self.const

    def value(self, x):
        return sum(v * x[k] for k, v in self.terms.items()) + self.const


def _as_rows(exprs):
    """Stack scalar LinExprs into a local COO block plus offset vector."""
    data, ridx, cidx, offs = [], [], [], []
    for i, e in enumerate(exprs):
        e = LinExpr.wrap(e)
        idx, val, c = e.row()
        ridx.append(np.full(idx.size, i, dtype=np.int64))
        cidx.append(idx)
        data.append(val)
        offs.append(c)
    cat = lambda parts, dt: (
        np.concatenate(parts) if parts else np.empty(0, dtype=dt)
    )
    return (
        cat(data, float),
        cat(ridx, np.int64),
        cat(cidx, np.int64),
        np.asarray(offs, dtype=float),
    )


class ConeProgram:
    """Maximize a linear functional subject to linear and second-order cones."""

    def __init__(self, name="program"):
        self.name = name
        self.nvar = 0
        self.vars = {}
        self._eq = []  # (data, ridx, cidx, rhs_vec)
        self._ineq = []  # (data, ridx, cidx, ub_vec): rows <= ub
        self._soc = []  # (data, ridx, cidx, b_vec, c_idx, c_val, d, kind)
        self.objective = None  # (idx, val, const)

    # -- variables -----------------------------------------------------------

    def add_var(self, name, dim=1):
        if name in self.vars:
            raise ValueError(f"duplicate variable {name!r}")
        v = Var(name, self.nvar, int(dim))
        self.vars[name] = v
        self.nvar += v.dim
        return v

    # -- objective ------------------------------------------------------------

    def set_objective_max(self, expr):
        idx, val, const = LinExpr.wrap(expr).row()
        self.objective = (idx, val, const)

    # -- linear constraints ----------------------------------------------------

    def add_linear_eq(self, exprs, rhs=0.0):
        """expr == rhs, scalar or batched."""
        if isinstance(exprs, (LinExpr, Var)):
            exprs = [exprs]
        data, ridx, cidx, offs = _as_rows(exprs)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (len(offs),))
        self._eq.append((data, ridx, cidx, rhs - offs))
        return ("eq", len(self._eq) - 1)

    def add_linear_ineq(self, exprs, ub=0.0):
        """expr <= ub, scalar or batched."""
        if isinstance(exprs, (LinExpr, Var)):
            exprs = [exprs]
        data, ridx, cidx, offs = _as_rows(exprs)
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (len(offs),))
        self._ineq.append((data, ridx, cidx, ub - offs))
        return ("ineq", len(self._ineq) - 1)

    def add_nonneg(self, exprs):
        """expr >= 0."""
        if isinstance(exprs, (LinExpr, Var)):
            exprs = [exprs]
        return self.add_linear_ineq([-LinExpr.wrap(e) for e in exprs], 0.0)

    def add_linear_eq_coo(self, data, ridx, cidx, rhs):
        """Batched equality rows given directly in COO triplet form."""
        rhs = np.asarray(rhs, dtype=float)
        self._eq.append(
            (
                np.asarray(data, dtype=float),
                np.asarray(ridx, dtype=np.int64),
                np.asarray(cidx, dtype=np.int64),
                rhs.copy(),
            )
        )
        return ("eq", len(self._eq) - 1)

    def add_linear_ineq_coo(self, data, ridx, cidx, ub):
        """Batched <= rows given directly in COO triplet form."""
        ub = np.asarray(ub, dtype=float)
        self._ineq.append(
            (
                np.asarray(data, dtype=float),
                np.asarray(ridx, dtype=np.int64),
                np.asarray(cidx, dtype=np.int64),
                ub.copy(),
            )
        )
        return ("ineq", len(self._ineq) - 1)

    # -- cones -----------------------------------------------------------------

    def add_soc(self, A, b, c, d, cols=None, kind="soc"):
        """Register ||A x + b||_2 <= c'x + d.

        A: (m, k) dense or scipy-sparse, or a raw (data, rowidx, colidx) COO
        triple over global indices (then b fixes m); b: (m,); c: LinExpr,
        (idx, val) pair, or None for a constant right side; cols: optional
        global column indices for A's k columns (defaults to 0..k-1).
        """
        if isinstance(A, tuple):
            data, ridx, cidx = A
            data = np.asarray(data, dtype=float)
            ridx = np.asarray(ridx, dtype=np.int64)
            cidx = np.asarray(cidx, dtype=np.int64)
            b = np.asarray(b, dtype=float)
            m, k = b.size, 0
            cols = None
        elif sp.issparse(A):
            A = A.tocoo()
            data, ridx, cidx = A.data.copy(), A.row.astype(np.int64), A.col.astype(np.int64)
            m, k = A.shape
        else:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            m, k = A.shape
            ridx, cidx = np.nonzero(A)
            data = A[ridx, cidx]
            ridx = ridx.astype(np.int64)
            cidx = cidx.astype(np.int64)
        b = np.broadcast_to(np.asarray(b, dtype=float), (m,)).copy()
        if cols is not None:
            cols = np.asarray(cols, dtype=np.int64)
            if cols.size != k:
                raise ValueError(f"cols has {cols.size} entries for {k} matrix columns")
            cidx = cols[cidx]
        if cidx.size and (cidx.max() >= self.nvar or cidx.min() < 0):
            raise ValueError("constraint references unknown variable index")
        if c is None:
            c_idx, c_val, d0 = np.empty(0, np.int64), np.empty(0, float), 0.0
        elif isinstance(c, (LinExpr, Var)):
            c_idx, c_val, d0 = LinExpr.wrap(c).row()
        else:
            c_idx, c_val = np.asarray(c[0], np.int64), np.asarray(c[1], float)
            d0 = 0.0
        self._soc.append((data, ridx, cidx, b, c_idx, c_val, float(d) + d0, kind))
        return ("soc", len(self._soc) - 1)

    def add_soc_exprs(self, lhs_exprs, rhs_expr, kind="soc"):
        """||[lhs...]|| <= rhs with every side a scalar affine expression."""
        data, ridx, cidx, offs = _as_rows(lhs_exprs)
        r_idx, r_val, r_c = LinExpr.wrap(rhs_expr).row()
        self._soc.append((data, ridx, cidx, offs, r_idx, r_val, r_c, kind))
        return ("soc", len(self._soc) - 1)

    def add_rotated(self, u, v, z_exprs):
        """2uv >= ||z||^2 with u, v >= 0, via ||[u - v, sqrt(2) z]|| <= u + v."""
        u = LinExpr.wrap(u)
        v = LinExpr.wrap(v)
        lhs = [u - v] + [LinExpr.wrap(z) * np.sqrt(2.0) for z in z_exprs]
        return self.add_soc_exprs(lhs, u + v, kind="rotated")

    def add_hyperbolic(self, a, b, c):
        """ab >= c^2 with a, b >= 0, via ||[a - b, 2c]|| <= a + b."""
        a = LinExpr.wrap(a)
        b = LinExpr.wrap(b)
        c = LinExpr.wrap(c)
        return self.add_soc_exprs([a - b, c * 2.0], a + b, kind="hyperbolic")

    def add_geomean_epigraph(self, t_exprs, g):
        """Enforce g <= (prod t)^(1/K) via a power-of-two tree of hyperbolics.

        The leaf list is padded to the next power of two with copies of g
        itself, which cancels the padding exponent.
        """
        if len(t_exprs) == 0:
            raise ValueError("geometric mean of an empty list")
        g_expr = LinExpr.wrap(g)
        handles = []
        leaves = [LinExpr.wrap(t) for t in t_exprs]
        if len(leaves) == 1:
            handles.append(self.add_linear_ineq(g_expr - leaves[0], 0.0))
            return handles
        size = 1
        while size < len(leaves):
            size *= 2
        leaves = leaves + [g_expr] * (size - len(leaves))
        aux = 0
        while len(leaves) > 2:
            nxt = []
            for i in range(0, len(leaves), 2):
                y = self.add_var(f"_geo{len(self._soc)}_{aux}", 1)
                aux += 1
                handles.append(self.add_hyperbolic(leaves[i], leaves[i + 1], y))
                nxt.append(y.expr())
            leaves = nxt
        handles.append(self.add_hyperbolic(leaves[0], leaves[1], g_expr))
        return handles

    # -- compilation -----------------------------------------------------------

    def blocks(self):
        """(A_eq, b_eq, A_ineq, ub, soc_list); socs as (A, b, c_row, d)."""
        n = self.nvar

        def stack(chunks):
            datas, rids, cids, rhss = [], [], [], []
            row0 = 0
            for data, ridx, cidx, rhs in chunks:
                datas.append(data)
                rids.append(ridx + row0)
                cids.append(cidx)
                rhss.append(rhs)
                row0 += len(rhs)
            if not rhss:
                return sp.csr_matrix((0, n)), np.empty(0)
            A = sp.coo_matrix(
                (np.concatenate(datas), (np.concatenate(rids), np.concatenate(cids))),
                shape=(row0, n),
            ).tocsr()
            return A, np.concatenate(rhss)

        A_eq, b_eq = stack(self._eq)
        A_in, ub = stack(self._ineq)
        socs = []
        for data, ridx, cidx, b, c_idx, c_val, d, _kind in self._soc:
            m = len(b)
            A = sp.coo_matrix((data, (ridx, cidx)), shape=(m, n)).tocsr()
            socs.append((A, b, (c_idx, c_val), d))
        return A_eq, b_eq, A_in, ub, socs

    def referenced_mask(self):
        mask = np.zeros(self.nvar, dtype=bool)
        for data, ridx, cidx, rhs in self._eq + self._ineq:
            mask[cidx] = True
        for data, ridx, cidx, b, c_idx, c_val, d, _k in self._soc:
            mask[cidx] = True
            mask[c_idx] = True
        if self.objective is not None:
            mask[self.objective[0]] = True
        return mask

    def validate(self):
        if self.objective is None:
            raise ValueError("program has no objective")
        mask = self.referenced_mask()
        if not mask.all():
            missing = [
                v.name for v in self.vars.values() if not mask[v.start : v.start + v.dim].any()
            ]
            raise ValueError(f"variables never referenced: {missing}")

    def dump(self, path):
        """Human-readable text dump for external cross-checking."""
        A_eq, b_eq, A_in, ub, socs = self.blocks()

        def fmt_row(idx, val, const=0.0):
            parts = [f"{v:+.12g}*x{i}" for i, v in zip(idx, val)]
            if const:
                parts.append(f"{const:+.12g}")
            return " ".join(parts) if parts else "0"

        with open(path, "w") as f:
            f.write(f"# cone program: {self.name}\n# nvar {self.nvar}\n")
            for v in self.vars.values():
                f.write(f"var {v.name} start {v.start} dim {v.dim}\n")
            idx, val, const = self.objective
            f.write(f"maximize {fmt_row(idx, val, const)}\n")
            Ae = A_eq.tocoo()
            for r in range(A_eq.shape[0]):
                m = Ae.row == r
                f.write(f"eq {fmt_row(Ae.col[m], Ae.data[m])} == {b_eq[r]:.12g}\n")
            Ai = A_in.tocoo()
            for r in range(A_in.shape[0]):
                m = Ai.row == r
                f.write(f"ineq {fmt_row(Ai.col[m], Ai.data[m])} <= {ub[r]:.12g}\n")
            for k, (A, b, (ci, cv), d) in enumerate(socs):
                f.write(f"soc {k} dim {A.shape[0]} rhs {fmt_row(ci, cv, d)}\n")
                Ac = A.tocoo()
                for r in range(A.shape[0]):
                    m = Ac.row == r
                    f.write(f"  row {fmt_row(Ac.col[m], Ac.data[m], b[r])}\n")


class ConeSolution:
    """Solver outcome: status, primal point, objective, and residuals."""

    def __init__(
        self,
        status,
        x=None,
        objective=np.nan,
        primal_residual=np.nan,
        dual_residual=np.nan,
        gap=np.nan,
        iterations=0,
        message="",
        backend="",
    ):
        self.status = status
        self.x = x
        self.objective = objective
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.gap = gap
        self.iterations = iterations
        self.message = message
        self.backend = backend

    def value(self, var):
        if self.x is None:
            return None
        if isinstance(var, Var):
            out = self.x[var.start : var.start + var.dim]
            return float(out[0]) if var.dim == 1 else out
        return LinExpr.wrap(var).value(self.x)

    def __repr__(self):
        return (
            f"ConeSolution(status={self.status!r}, objective={self.objective:.6g}, "
            f"iterations={self.iterations}, backend={self.backend!r})"
        )


def _maybe_dump(prog):
    with _dump_lock:
        d = _dump_state["dir"]
        if d is None:
            return
        _dump_state["count"] += 1
        path = os.path.join(d, f"{prog.name}_{_dump_state['count']:05d}.txt")
    prog.dump(path)


def solve(prog, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, backend=None):
    """Solve the program; optimal status implies residuals within ``tol``."""
    backend = backend or DEFAULT_BACKEND
    if backend is None:
        raise RuntimeError("no conic solver backend available (install clarabel or cvxopt)")
    prog.validate()
    _maybe_dump(prog)
    t0 = time.perf_counter()
    if backend == "clarabel":
        out = _solve_clarabel(prog, tol, max_iters)
    elif backend == "cvxopt":
        out = _solve_cvxopt(prog, tol, max_iters)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    log.debug(
        "%s: %s in %d iters, %.2fs (%s, n=%d)",
        prog.name,
        out.status,
        out.iterations,
        time.perf_counter() - t0,
        backend,
        prog.nvar,
    )
    return out


def _objective_vector(prog):
    f = np.zeros(prog.nvar)
    idx, val, const = prog.objective
    np.add.at(f, idx, val)
    return f, const


def _soc_matrices(prog, n):
    """Per-SOC (G_block, h_block) with s0 = c'x + d, s_i = A_i x + b_i."""
    out = []
    _, _, _, _, socs = prog.blocks()
    for A, b, (ci, cv), d in socs:
        m = A.shape[0]
        crow = sp.coo_matrix((cv, (np.zeros(len(ci), np.int64), ci)), shape=(1, n))
        if m == 0:
            # degenerate cone: plain nonnegativity c'x + d >= 0
            out.append(("lin", -crow.tocsr(), np.array([d])))
            continue
        G = sp.vstack([-crow, -A], format="csr")
        h = np.concatenate(([d], b))
        out.append(("soc", G, h))
    return out


def _solve_clarabel(prog, tol, max_iters):
    import clarabel

    n = prog.nvar
    f, f0 = _objective_vector(prog)
    A_eq, b_eq, A_in, ub, _ = prog.blocks()
    socs = _soc_matrices(prog, n)

    mats = []
    rhs = []
    cones = []
    if A_eq.shape[0]:
        mats.append(A_eq)
        rhs.append(b_eq)
        cones.append(clarabel.ZeroConeT(A_eq.shape[0]))
    lin_rows = [(A_in, ub)] if A_in.shape[0] else []
    lin_rows += [(G, h) for kind, G, h in socs if kind == "lin"]
    if lin_rows:
        Gl = sp.vstack([g for g, _ in lin_rows], format="csr")
        hl = np.concatenate([h for _, h in lin_rows])
        mats.append(Gl)
        rhs.append(hl)
        cones.append(clarabel.NonnegativeConeT(Gl.shape[0]))
    for kind, G, h in socs:
        if kind == "soc":
            mats.append(G)
            rhs.append(h)
            cones.append(clarabel.SecondOrderConeT(G.shape[0]))
    A = sp.vstack(mats, format="csc")
    b = np.concatenate(rhs)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(max_iters)
    settings.tol_gap_rel = tol
    settings.tol_gap_abs = tol
    settings.tol_feas = tol
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), -f, A, b, cones, settings)
    sol = solver.solve()
    status_name = str(sol.status)
    x = np.asarray(sol.x) if sol.x is not None else None
    obj = float(f @ x + f0) if x is not None else np.nan
    mapping = {
        "Solved": "optimal",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "MaxIterations": "max_iterations",
    }
    status = mapping.get(status_name, "numerical_failure")
    return ConeSolution(
        status=status,
        x=x,
        objective=obj,
        primal_residual=float(sol.r_prim),
        dual_residual=float(sol.r_dual),
        gap=abs(float(sol.obj_val) - float(sol.obj_val_dual)),
        iterations=int(sol.iterations),
        message=status_name,
        backend="clarabel",
    )


def _solve_cvxopt(prog, tol, max_iters):
    import cvxopt
    import cvxopt.solvers

    n = prog.nvar
    f, f0 = _objective_vector(prog)
    A_eq, b_eq, A_in, ub, _ = prog.blocks()
    socs = _soc_matrices(prog, n)

    def to_cvx(M):
        C = M.tocoo()
        return cvxopt.spmatrix(
            C.data, C.row.astype(int), C.col.astype(int), size=C.shape, tc="d"
        )

    g_parts = [(A_in, ub)] if A_in.shape[0] else []
    g_parts += [(G, h) for kind, G, h in socs if kind == "lin"]
    dims = {"l": sum(g.shape[0] for g, _ in g_parts), "q": [], "s": []}
    for kind, G, h in socs:
        if kind == "soc":
            g_parts.append((G, h))
            dims["q"].append(G.shape[0])
    G = sp.vstack([g for g, _ in g_parts], format="coo") if g_parts else sp.coo_matrix((0, n))
    h = np.concatenate([hh for _, hh in g_parts]) if g_parts else np.empty(0)

    options = {
        "show_progress": False,
        "maxiters": int(max_iters),
        "abstol": tol,
        "reltol": tol,
        "feastol": max(tol, 1e-9),
    }
    kwargs = {}
    if A_eq.shape[0]:
        kwargs["A"] = to_cvx(A_eq)
        kwargs["b"] = cvxopt.matrix(b_eq)
    try:
        sol = cvxopt.solvers.conelp(
            cvxopt.matrix(-f), to_cvx(G), cvxopt.matrix(h), dims, options=options, **kwargs
        )
    except Exception as exc:  # cvxopt raises on singular KKT systems
        return ConeSolution(status="numerical_failure", message=str(exc), backend="cvxopt")
    status_name = sol["status"]
    x = np.asarray(sol["x"]).ravel() if sol["x"] is not None else None
    obj = float(f @ x + f0) if x is not None else np.nan
    if status_name == "optimal":
        status = "optimal"
    elif status_name == "primal infeasible":
        status = "infeasible"
    elif status_name == "unknown" and sol.get("iterations", 0) >= max_iters:
        status = "max_iterations"
    else:
        status = "numerical_failure"
    return ConeSolution(
        status=status,
        x=x,
        objective=obj,
        primal_residual=float(sol.get("primal infeasibility") or np.nan),
        dual_residual=float(sol.get("dual infeasibility") or np.nan),
        gap=float(sol.get("relative gap") or np.nan),
        iterations=int(sol.get("iterations") or 0),
        message=status_name,
        backend="cvxopt",
    )


def check_solution(prog, x, tol):
    """Independently re-evaluate every registered constraint at ``x``.

    Returns a dict with the worst violation of each constraint family and an
    overall ``ok`` flag (violations measured relative to 1 + |rhs|).
    """
    A_eq, b_eq, A_in, ub, socs = prog.blocks()
    eq_v = 0.0
    if A_eq.shape[0]:
        r = A_eq @ x - b_eq
        eq_v = float(np.max(np.abs(r) / (1.0 + np.abs(b_eq))))
    in_v = 0.0
    if A_in.shape[0]:
        r = A_in @ x - ub
        in_v = float(np.max(r / (1.0 + np.abs(ub))))
    soc_v = 0.0
    for A, b, (ci, cv), d in socs:
        lhs = np.linalg.norm(A @ x + b)
        rhs = float(np.dot(cv, x[ci]) + d) if len(ci) else d
        soc_v = max(soc_v, (lhs - rhs) / (1.0 + abs(rhs)))
    worst = max(eq_v, in_v, soc_v)
    return {
        "eq": eq_v,
        "ineq": in_v,
        "soc": float(soc_v),
        "worst": float(worst),
        "ok": bool(worst <= tol),
    }

import numpy as np
import pytest

from cran_dynrc import conic

BACKENDS = conic._BACKENDS


def solve_max(prog, **kw):
    sol = conic.solve(prog, **kw)
    assert sol.status == "optimal", sol.message
    return sol


class TestSocMembership:
    def test_unit_ball(self):
        p = conic.ConeProgram()
        x = p.add_var("x", 1)
        p.add_soc(np.eye(1), [0.0], None, 1.0)
        p.set_objective_max(x.expr())
        assert solve_max(p).objective == pytest.approx(1.0, abs=1e-7)

    def test_hyperbolic_identity_vs_direct(self):
        # footnote identity membership vs ab >= c^2 on 1e4 random triples
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 2, 10000)
        b = rng.uniform(0, 2, 10000)
        c = rng.uniform(-2, 2, 10000)
        direct = a * b >= c * c
        soc = np.hypot(a - b, 2 * c) <= a + b
        assert np.array_equal(direct, soc)

    def test_hyperbolic_boundary_point(self):
        # a=4, b=1, c=2: ||[3, 4]|| = 5 = a + b, exactly on the cone
        assert np.hypot(4 - 1, 2 * 2) == pytest.approx(4 + 1)

    def test_hyperbolic_infeasible_point(self):
        a, b, c = 1.0, 1.0, 1.01
        assert a * b < c * c
        assert np.hypot(a - b, 2 * c) > a + b

    def test_hyperbolic_zero_c_means_nonneg(self):
        p = conic.ConeProgram()
        a = p.add_var("a", 1)
        b = p.add_var("b", 1)
        p.add_hyperbolic(a.expr(), b.expr(), 0.0)
        p.add_linear_ineq(a.expr() + b.expr(), 5.0)
        p.set_objective_max(-1.0 * a.expr() - b.expr())
        sol = solve_max(p)
        # maximizing -(a+b) subject to a,b >= 0 drives both to zero
        assert sol.value(a) == pytest.approx(0.0, abs=1e-6)
        assert sol.value(b) == pytest.approx(0.0, abs=1e-6)

    def test_zero_row_soc_infeasible(self):
        p = conic.ConeProgram()
        y = p.add_var("y", 1)
        p.add_soc(np.zeros((1, 1)), [0.0], None, -1.0)  # 0 <= -1
        p.add_linear_ineq(y.expr(), 1.0)
        p.set_objective_max(y.expr())
        assert conic.solve(p).status == "infeasible"

    def test_dimension_mismatch(self):
        p = conic.ConeProgram()
        p.add_var("x", 2)
        with pytest.raises(ValueError):
            p.add_soc(np.eye(3), np.zeros(3), None, 1.0, cols=np.array([0, 1]))


class TestHyperbolicSolve:
    def test_max_c_given_ab(self):
        p = conic.ConeProgram()
        c = p.add_var("c", 1)
        p.add_hyperbolic(4.0, 1.0, c.expr())
        p.set_objective_max(c.expr())
        assert solve_max(p).objective == pytest.approx(2.0, abs=1e-7)

    def test_rotated_cone(self):
        # max z s.t. 2uv >= z^2 with u=2, v=1 -> z = 2
        p = conic.ConeProgram()
        u = p.add_var("u", 1)
        v = p.add_var("v", 1)
        z = p.add_var("z", 1)
        p.add_linear_eq(u.expr(), 2.0)
        p.add_linear_eq(v.expr(), 1.0)
        p.add_rotated(u.expr(), v.expr(), [z.expr()])
        p.set_objective_max(z.expr())
        assert solve_max(p).objective == pytest.approx(2.0, abs=1e-7)


class TestGeomean:
    def geomean_prog(self, t_vals):
        p = conic.ConeProgram()
        t = p.add_var("t", len(t_vals))
        g = p.add_var("g", 1)
        for i, v in enumerate(t_vals):
            p.add_linear_eq(t[i], float(v))
        p.add_geomean_epigraph([t[i] for i in range(len(t_vals))], g)
        p.set_objective_max(g.expr())
        return p

    def test_single_entry(self):
        assert solve_max(self.geomean_prog([3.7])).objective == pytest.approx(3.7, rel=1e-7)

    def test_pair(self):
        # sqrt(4 * 1) = 2 via one hyperbolic constraint
        assert solve_max(self.geomean_prog([4.0, 1.0])).objective == pytest.approx(2.0, rel=1e-7)

    def test_padded_triple(self):
        # g^4 = 8 * 1 * 1 * g -> g = 2
        assert solve_max(self.geomean_prog([8.0, 1.0, 1.0])).objective == pytest.approx(
            2.0, rel=1e-7
        )

    @pytest.mark.parametrize("k", range(1, 9))
    def test_random_lengths_match_direct_formula(self, k):
        rng = np.random.default_rng(k)
        for _ in range(3):
            vals = rng.uniform(0.2, 5.0, k)
            expect = float(np.exp(np.mean(np.log(vals))))
            got = solve_max(self.geomean_prog(vals)).objective
            assert got == pytest.approx(expect, rel=1e-6)

    def test_empty_rejected(self):
        p = conic.ConeProgram()
        g = p.add_var("g", 1)
        with pytest.raises(ValueError):
            p.add_geomean_epigraph([], g)


class TestSolveContract:
    def test_simple_lp(self):
        p = conic.ConeProgram()
        x = p.add_var("x", 1)
        p.add_linear_ineq(x.expr(), 3.0)
        p.set_objective_max(x.expr())
        sol = solve_max(p)
        assert sol.objective == pytest.approx(3.0, abs=1e-7)
        assert sol.iterations >= 1

    def test_brute_force_battery(self):
        # max x + y s.t. x^2 + y^2 <= 2: analytic optimum (1, 1) -> 2
        p = conic.ConeProgram()
        xy = p.add_var("xy", 2)
        p.add_soc(np.eye(2), np.zeros(2), None, np.sqrt(2.0))
        p.set_objective_max(xy[0] + xy[1])
        assert solve_max(p).objective == pytest.approx(2.0, abs=1e-6)

        # grid-search oracle on: max 2a - b s.t. ab >= 1, a <= 3, b >= 0
        a_grid = np.linspace(1e-3, 3.0, 1200)
        b_grid = 1.0 / a_grid  # ab = 1 binds at optimum for b cost
        oracle = np.max(2 * a_grid - b_grid)
        p2 = conic.ConeProgram()
        a = p2.add_var("a", 1)
        b = p2.add_var("b", 1)
        p2.add_hyperbolic(a.expr(), b.expr(), 1.0)
        p2.add_linear_ineq(a.expr(), 3.0)
        p2.set_objective_max(a.expr() * 2.0 - b.expr())
        assert solve_max(p2).objective == pytest.approx(oracle, abs=1e-4)

    def test_equality_and_value_lookup(self):
        p = conic.ConeProgram()
        x = p.add_var("x", 3)
        p.add_linear_eq(x[0] + x[1] + x[2], 6.0)
        p.add_soc(np.eye(3), np.zeros(3), None, 4.0)
        p.set_objective_max(x[2])
        sol = solve_max(p)
        vals = sol.value(x)
        assert vals.shape == (3,)
        assert np.sum(vals) == pytest.approx(6.0, abs=1e-6)

    def test_unreferenced_variable_rejected(self):
        p = conic.ConeProgram()
        p.add_var("x", 1)
        y = p.add_var("y", 1)
        p.add_linear_ineq(y.expr(), 1.0)
        p.set_objective_max(y.expr())
        with pytest.raises(ValueError):
            conic.solve(p)

    def test_round_trip_check(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            p = conic.ConeProgram()
            x = p.add_var("x", 3)
            A = rng.standard_normal((3, 3))
            p.add_soc(A, rng.standard_normal(3), None, 5.0)
            p.add_linear_ineq(x[0] - x[1], rng.uniform(0.5, 2))
            p.add_linear_eq(x[1] + x[2], rng.uniform(-1, 1))
            p.set_objective_max(x[0] + 0.3 * x[2])
            sol = conic.solve(p, tol=1e-8)
            if sol.status != "optimal":
                continue
            assert conic.check_solution(p, sol.x, 1e-7)["ok"]

    @pytest.mark.skipif(len(BACKENDS) < 2, reason="needs both backends installed")
    def test_backends_agree(self):
        p = conic.ConeProgram()
        x = p.add_var("x", 2)
        p.add_soc(np.eye(2), np.zeros(2), None, 1.0)
        p.add_linear_ineq(x[0] - x[1], 0.25)
        p.set_objective_max(x[0] + 2.0 * x[1])
        vals = [conic.solve(p, backend=b).objective for b in BACKENDS]
        assert vals[0] == pytest.approx(vals[1], abs=1e-6)

    def test_dump(self, tmp_path):
        p = conic.ConeProgram("dumpme")
        x = p.add_var("x", 1)
        p.add_soc(np.eye(1), [0.0], None, 1.0)
        p.set_objective_max(x.expr())
        path = tmp_path / "prog.txt"
        p.dump(path)
        text = path.read_text()
        assert "maximize" in text and "soc" in text

    def test_dump_dir_hook(self, tmp_path):
        p = conic.ConeProgram("hooked")
        x = p.add_var("x", 1)
        p.add_soc(np.eye(1), [0.0], None, 1.0)
        p.set_objective_max(x.expr())
        conic.set_dump_dir(str(tmp_path))
        try:
            conic.solve(p)
        finally:
            conic.set_dump_dir(None)
        assert any(f.name.startswith("hooked") for f in tmp_path.iterdir())

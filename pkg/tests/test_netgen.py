import numpy as np
import pytest

from cran_dynrc import netgen


def pairwise_distances(pos):
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    return d[np.triu_indices(len(pos), k=1)]


class TestHexLayout:
    def test_single_cell_at_origin(self):
        layout = netgen.build_hex_layout(1, 1, 1.0, 4, 10)
        assert layout.num_rrh == 1
        assert np.allclose(layout.rrh_positions, 0.0)

    def test_16_cells_min_spacing(self):
        layout = netgen.build_hex_layout(4, 4, 1.0, 4, 10)
        assert layout.num_rrh == 16
        assert pairwise_distances(layout.rrh_positions).min() == pytest.approx(1.0)

    def test_two_cells_exact_distance(self):
        layout = netgen.build_hex_layout(2, 1, 2.0, 1, 0)
        # independent check: direct distance computation
        d = np.linalg.norm(layout.rrh_positions[0] - layout.rrh_positions[1])
        assert d == pytest.approx(2.0, rel=1e-12)

    def test_neighbor_counts(self):
        layout = netgen.build_hex_layout(5, 5, 1.0, 2, 0)
        d = np.linalg.norm(
            layout.rrh_positions[:, None, :] - layout.rrh_positions[None, :, :], axis=2
        )
        for i in range(25):
            neighbors = np.sum(np.abs(d[i] - 1.0) < 1e-9)
            assert 2 <= neighbors <= 6

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            netgen.build_hex_layout(0, 4, 1.0, 4, 10)
        with pytest.raises(ValueError):
            netgen.build_hex_layout(2, 2, -1.0, 4, 10)
        with pytest.raises(ValueError):
            netgen.build_hex_layout(2, 2, 1.0, 0, 10)


class TestScenarios:
    def test_uniform_16_cells_gives_32_users(self):
        layout = netgen.build_hex_layout(4, 4, 1.0, 4, 10)
        sc = netgen.make_scenario(layout, "uniform")
        assert sc.num_users() == 32

    def test_all_light_four_cells(self):
        layout = netgen.build_hex_layout(2, 2, 1.0, 4, 10)
        sc = netgen.Scenario(cell_load_map=["light"] * 4)
        drop = netgen.place_users(layout, sc, 3)
        assert drop.num_users == 4
        assert sorted(drop.user_cell.tolist()) == [0, 1, 2, 3]

    def test_intermixed_and_grouped_counts(self):
        layout = netgen.build_hex_layout(4, 4, 1.0, 4, 10)
        for kind in ("intermixed", "grouped"):
            sc = netgen.make_scenario(layout, kind)
            assert sorted(sc.cell_load_map.count(l) for l in ("light", "heavy")) == [8, 8]
            assert sc.num_users() == 32

    def test_grouped_heavies_are_central(self):
        layout = netgen.build_hex_layout(4, 4, 1.0, 4, 10)
        sc = netgen.make_scenario(layout, "grouped")
        center = layout.rrh_positions.mean(axis=0)
        d = np.linalg.norm(layout.rrh_positions - center, axis=1)
        heavy = [i for i, l in enumerate(sc.cell_load_map) if l == "heavy"]
        light = [i for i, l in enumerate(sc.cell_load_map) if l == "light"]
        assert d[heavy].max() <= d[light].min() + 1e-9

    def test_unknown_label_rejected(self):
        layout = netgen.build_hex_layout(2, 2, 1.0, 4, 10)
        sc = netgen.Scenario(cell_load_map=["light", "medium", "heavy", "weird"])
        with pytest.raises(ValueError):
            netgen.place_users(layout, sc, 0)


class TestPlacement:
    def test_determinism(self):
        layout = netgen.build_hex_layout(4, 4, 1.0, 4, 10)
        sc = netgen.make_scenario(layout, "uniform")
        a = netgen.place_users(layout, sc, 42)
        b = netgen.place_users(layout, sc, 42)
        assert np.array_equal(a.user_positions, b.user_positions)
        c = netgen.place_users(layout, sc, 43)
        assert not np.array_equal(a.user_positions, c.user_positions)

    def test_users_inside_home_cell(self):
        # independent oracle: inside the hexagonal Voronoi cell iff the home
        # RRH is the nearest one
        layout = netgen.build_hex_layout(4, 4, 1.0, 4, 10)
        sc = netgen.make_scenario(layout, "uniform")
        drop = netgen.place_users(layout, sc, 7)
        d = np.linalg.norm(
            drop.user_positions[:, None, :] - layout.rrh_positions[None, :, :], axis=2
        )
        nearest = d.argmin(axis=1)
        assert np.array_equal(nearest, drop.user_cell)


class TestPathLoss:
    def test_reference_values(self):
        assert netgen.path_loss_db(1.0) == pytest.approx(148.1, abs=1e-12)
        # direct evaluation: 148.1 + 37.6*log10(0.1) = 148.1 - 37.6
        assert netgen.path_loss_db(0.1) == pytest.approx(110.5, abs=1e-9)
        assert netgen.path_loss_db(10.0) == pytest.approx(185.7, abs=1e-9)

    def test_strictly_increasing(self):
        d = np.linspace(0.01, 20.0, 500)
        pl = netgen.path_loss_db(d)
        assert np.all(np.diff(pl) > 0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            netgen.path_loss_db(0.0)
        with pytest.raises(ValueError):
            netgen.path_loss_db(-1.0)


class TestChannel:
    def test_noise_power(self):
        # -100 dBm/Hz over 10 MHz -> -30 dBm = 1e-6 W
        assert netgen.noise_power_w(-100.0, 10e6) == pytest.approx(1e-6, rel=1e-12)

    def test_deterministic_channel_matches_path_loss(self):
        layout = netgen.build_hex_layout(1, 1, 1.0, 1, 10)
        drop = netgen.UserDrop(
            user_positions=np.array([[0.2, 0.0]]), user_cell=np.array([0]), rng_seed=0
        )
        ch = netgen.gen_channel(layout, drop, 0, shadowing_std_db=0.0, fading="ones")
        expect = 10 ** (-netgen.path_loss_db(0.2) / 10.0)
        assert abs(ch.h[0, 0, 0]) ** 2 == pytest.approx(expect, rel=1e-12)

    def test_min_distance_clamp(self):
        layout = netgen.build_hex_layout(1, 1, 1.0, 1, 10)
        drop = netgen.UserDrop(
            user_positions=np.array([[0.0, 0.0]]), user_cell=np.array([0]), rng_seed=0
        )
        ch = netgen.gen_channel(layout, drop, 0, shadowing_std_db=0.0, fading="ones")
        expect = 10 ** (-netgen.path_loss_db(0.01) / 10.0)
        assert abs(ch.h[0, 0, 0]) ** 2 == pytest.approx(expect, rel=1e-12)

    def test_shadowing_std_monte_carlo(self):
        # Monte-Carlo estimate of the configured spread over 1e5 links
        layout = netgen.build_hex_layout(1, 1, 1.0, 1, 10)
        n = 100000
        drop = netgen.UserDrop(
            user_positions=np.tile([[0.3, 0.0]], (n, 1)),
            user_cell=np.zeros(n, dtype=int),
            rng_seed=0,
        )
        ch = netgen.gen_channel(layout, drop, 5, fading="ones")
        loss_db = -10.0 * np.log10(np.abs(ch.h[:, 0, 0]) ** 2)
        shadow = loss_db - netgen.path_loss_db(0.3)
        assert np.std(shadow) == pytest.approx(8.0, abs=0.2)
        assert abs(np.mean(shadow)) < 0.2

    def test_magnitude_decreases_with_distance(self):
        layout = netgen.build_hex_layout(1, 1, 1.0, 1, 10)
        n = 10000
        pos = np.vstack([np.tile([[0.2, 0.0]], (n, 1)), np.tile([[1.0, 0.0]], (n, 1))])
        drop = netgen.UserDrop(
            user_positions=pos, user_cell=np.zeros(2 * n, dtype=int), rng_seed=0
        )
        ch = netgen.gen_channel(layout, drop, 11)
        p = np.abs(ch.h[:, 0, 0]) ** 2
        assert p[:n].mean() > p[n:].mean()

    def test_full_determinism(self):
        layout = netgen.build_hex_layout(2, 2, 1.0, 2, 10)
        sc = netgen.make_scenario(layout, "uniform")
        drops = [netgen.place_users(layout, sc, 9) for _ in range(2)]
        chans = [netgen.gen_channel(layout, d, 10) for d in drops]
        assert np.array_equal(chans[0].h, chans[1].h)

    def test_fading_unit_variance(self):
        layout = netgen.build_hex_layout(1, 1, 1.0, 8, 10)
        n = 5000
        drop = netgen.UserDrop(
            user_positions=np.tile([[0.3, 0.0]], (n, 1)),
            user_cell=np.zeros(n, dtype=int),
            rng_seed=0,
        )
        ch = netgen.gen_channel(layout, drop, 3, shadowing_std_db=0.0)
        g2 = np.abs(ch.h) ** 2 / 10 ** (-netgen.path_loss_db(0.3) / 10.0)
        assert np.mean(g2) == pytest.approx(1.0, abs=0.05)

"""Hexagonal network layouts, scenario-driven user drops, and fading channels.

Geometry convention: RRHs sit on a triangular lattice with nearest-neighbor
spacing equal to the inter-site distance; each cell is the pointy-top hexagonal
Voronoi cell of its RRH (circumradius isd/sqrt(3), x-halfwidth isd/2).
All distances are in km, powers in linear watts unless a name says otherwise.
"""

from dataclasses import dataclass, field

import numpy as np

# Minimum user-RRH distance (km). Avoids the path-loss singularity at d -> 0.
MIN_LINK_DISTANCE_KM = 0.01

DEFAULT_NOISE_PSD_DBM_HZ = -100.0
DEFAULT_BANDWIDTH_HZ = 10e6
DEFAULT_SHADOWING_STD_DB = 8.0

DEFAULT_USERS_PER_LABEL = {"light": 1, "medium": 2, "heavy": 3}

# Named RNG sub-streams hanging off one master seed, so each randomness
# source is independently reproducible.
_STREAMS = {"placement": 1, "shadowing": 2, "fading": 3, "qweights": 4}


def substream(seed, name):
    """Independent Generator for a named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name]]))


@dataclass
class NetworkLayout:
    """RRH positions on a hexagonal lattice plus uniform per-RRH hardware."""

    rrh_positions: np.ndarray  # (R, 2) km
    inter_site_distance: float  # km
    num_antennas_per_rrh: int
    power_budget_dbm: float

    @property
    def num_rrh(self):
        return self.rrh_positions.shape[0]

    @property
    def power_budget_w(self):
        return dbm_to_watts(self.power_budget_dbm)

    def cell_circumradius(self):
        """Center-to-vertex radius of each hexagonal cell (km)."""
        return self.inter_site_distance / np.sqrt(3.0)


@dataclass
class Scenario:
    """Per-cell load labels and the user count each label implies."""

    cell_load_map: list  # one label per cell, in RRH index order
    users_per_label: dict = field(default_factory=lambda: dict(DEFAULT_USERS_PER_LABEL))

    def num_users(self):
        return sum(self.users_per_label[lbl] for lbl in self.cell_load_map)


@dataclass
class UserDrop:
    """One random placement of users, each inside its home cell's hexagon."""

    user_positions: np.ndarray  # (U, 2) km
    user_cell: np.ndarray  # (U,) home-cell index
    rng_seed: int

    @property
    def num_users(self):
        return self.user_positions.shape[0]


@dataclass
class ChannelState:
    """Flat-fading channel rows h[u, r] (length Nr each) plus noise/rate units.

    Entries are linear amplitude gains; ``noise_power`` is sigma^2 in watts
    over ``bandwidth_hz``.
    """

    h: np.ndarray  # (U, R, Nr) complex
    noise_power: float
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ
    spectral_eff: float = 1.0
    coding_eff: float = 1.0

    @property
    def num_users(self):
        return self.h.shape[0]

    @property
    def num_rrh(self):
        return self.h.shape[1]

    @property
    def num_antennas(self):
        return self.h.shape[2]


def dbm_to_watts(p_dbm):
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watts_to_dbm(p_w):
    return 10.0 * np.log10(p_w) + 30.0


def noise_power_w(noise_psd_dbm_hz=DEFAULT_NOISE_PSD_DBM_HZ, bandwidth_hz=DEFAULT_BANDWIDTH_HZ):
    """Total noise power sigma^2 = N0 * B in watts."""
    return dbm_to_watts(noise_psd_dbm_hz + 10.0 * np.log10(bandwidth_hz))


def build_hex_layout(rows, cols, isd_km, n_antennas, p_dbm):
    """Lay out ``rows * cols`` RRHs on a triangular lattice with spacing ``isd_km``.

    Odd rows are shifted half a site to the right, so every pair of
    neighboring centers is exactly ``isd_km`` apart.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be at least 1x1, got {rows}x{cols}")
    if isd_km <= 0:
        raise ValueError(f"inter-site distance must be positive, got {isd_km}")
    if n_antennas < 1:
        raise ValueError(f"need at least one antenna per RRH, got {n_antennas}")
    pos = np.empty((rows * cols, 2))
    row_height = isd_km * np.sqrt(3.0) / 2.0
    k = 0
    for i in range(rows):
        for j in range(cols):
            pos[k, 0] = j * isd_km + (i % 2) * isd_km / 2.0
            pos[k, 1] = i * row_height
            k += 1
    pos -= pos.mean(axis=0)  # center the grid on the origin
    return NetworkLayout(
        rrh_positions=pos,
        inter_site_distance=float(isd_km),
        num_antennas_per_rrh=int(n_antennas),
        power_budget_dbm=float(p_dbm),
    )


def make_scenario(layout, kind, users_per_label=None):
    """Build the per-cell load map for a named user-distribution scenario.

    uniform: every cell medium. intermixed: light/heavy alternating over the
    grid (micro-tidal). grouped: the half of the cells closest to the grid
    center are heavy, the rest light (macro-tidal).
    """
    n = layout.num_rrh
    upl = dict(DEFAULT_USERS_PER_LABEL if users_per_label is None else users_per_label)
    if kind == "uniform":
        labels = ["medium"] * n
    elif kind == "intermixed":
        labels = ["light" if i % 2 == 0 else "heavy" for i in range(n)]
    elif kind == "grouped":
        center = layout.rrh_positions.mean(axis=0)
        d = np.linalg.norm(layout.rrh_positions - center, axis=1)
        order = np.lexsort((np.arange(n), d))  # stable: distance, then index
        n_heavy = n // 2
        labels = ["light"] * n
        for i in order[:n_heavy]:
            labels[i] = "heavy"
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    return Scenario(cell_load_map=labels, users_per_label=upl)


def _point_in_hexagon(dx, dy, circumradius):
    # pointy-top hexagon centered at the origin
    r = circumradius
    return (abs(dx) <= np.sqrt(3.0) / 2.0 * r + 1e-12) and (
        abs(dy) <= r - abs(dx) / np.sqrt(3.0) + 1e-12
    )


def place_users(layout, scenario, seed):
    """Drop users uniformly inside each cell's hexagon (rejection sampling)."""
    if len(scenario.cell_load_map) != layout.num_rrh:
        raise ValueError(
            f"scenario labels {len(scenario.cell_load_map)} cells, layout has {layout.num_rrh}"
        )
    for lbl in scenario.cell_load_map:
        if lbl not in scenario.users_per_label:
            raise ValueError(f"no user count configured for cell label {lbl!r}")
    rng = substream(seed, "placement")
    rc = layout.cell_circumradius()
    half_w = np.sqrt(3.0) / 2.0 * rc
    positions = []
    cells = []
    for cell, lbl in enumerate(scenario.cell_load_map):
        cx, cy = layout.rrh_positions[cell]
        for _ in range(scenario.users_per_label[lbl]):
            while True:
                dx = rng.uniform(-half_w, half_w)
                dy = rng.uniform(-rc, rc)
                if _point_in_hexagon(dx, dy, rc):
                    break
            positions.append((cx + dx, cy + dy))
            cells.append(cell)
    return UserDrop(
        user_positions=np.asarray(positions, dtype=float).reshape(-1, 2),
        user_cell=np.asarray(cells, dtype=int),
        rng_seed=int(seed),
    )


def path_loss_db(d_km):
    """Distance-based loss 148.1 + 37.6 log10(d) dB, d in km."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path loss undefined for nonpositive distance")
    return 148.1 + 37.6 * np.log10(d)


def gen_channel(
    layout,
    drop,
    seed,
    noise_psd_dbm_hz=DEFAULT_NOISE_PSD_DBM_HZ,
    bandwidth_hz=DEFAULT_BANDWIDTH_HZ,
    shadowing_std_db=DEFAULT_SHADOWING_STD_DB,
    fading="rayleigh",
    spectral_eff=1.0,
    coding_eff=1.0,
):
    """Draw one block-fading realization for every user-RRH link.

    h[u, r] = g * sqrt(10^(-(L + S)/10)) with L the path loss at the (clamped)
    link distance, S ~ Normal(0, shadowing_std_db^2) per link, and g a length-Nr
    vector of i.i.d. unit-variance circularly-symmetric complex Gaussians
    (``fading="ones"`` forces g = 1 for deterministic channels).
    """
    u_pos = drop.user_positions
    r_pos = layout.rrh_positions
    nu, nr = u_pos.shape[0], r_pos.shape[0]
    nant = layout.num_antennas_per_rrh
    d = np.linalg.norm(u_pos[:, None, :] - r_pos[None, :, :], axis=2)
    d = np.maximum(d, MIN_LINK_DISTANCE_KM)
    loss_db = path_loss_db(d)
    rng_sh = substream(seed, "shadowing")
    shadow_db = (
        rng_sh.normal(0.0, shadowing_std_db, size=(nu, nr))
        if shadowing_std_db > 0
        else np.zeros((nu, nr))
    )
    amp = np.sqrt(10.0 ** (-(loss_db + shadow_db) / 10.0))
    if fading == "rayleigh":
        rng_f = substream(seed, "fading")
        g = rng_f.standard_normal((nu, nr, nant)) + 1j * rng_f.standard_normal((nu, nr, nant))
        g /= np.sqrt(2.0)
    elif fading == "ones":
        g = np.ones((nu, nr, nant), dtype=complex)
    else:
        raise ValueError(f"unknown fading model {fading!r}")
    h = g * amp[:, :, None]
    return ChannelState(
        h=h,
        noise_power=noise_power_w(noise_psd_dbm_hz, bandwidth_hz),
        bandwidth_hz=float(bandwidth_hz),
        spectral_eff=float(spectral_eff),
        coding_eff=float(coding_eff),
    )

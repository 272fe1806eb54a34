"""Physical-layer evaluation: coupling terms, SINR, rates, and the weighted
sum-rate system utility, plus the phase-rotation canonicalization that makes
every own-channel/beam product real and nonnegative."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BeamformerSet:
    """Beam vectors w[u, r] (length Nr, sqrt-watt units) for every user-RRH pair."""

    w: np.ndarray  # (U, R, Nr) complex

    @property
    def dims(self):
        return self.w.shape

    def per_rrh_power(self):
        """Transmit power at each RRH: sum_u ||w[u, r]||^2."""
        return np.sum(np.abs(self.w) ** 2, axis=(0, 2))

    def beam_power(self):
        """||w[u, r]||^2 for every pair, shape (U, R)."""
        return np.sum(np.abs(self.w) ** 2, axis=2)


@dataclass
class ClusterAssignment:
    """Binary serving matrix s[u, r] plus the per-user candidate RRH sets."""

    s: np.ndarray  # (U, R) in {0, 1}
    candidate_sets: list = None  # per-user arrays of allowed RRH indices

    def __post_init__(self):
        self.s = np.asarray(self.s)
        if self.candidate_sets is None:
            self.candidate_sets = [np.flatnonzero(self.s[u]) for u in range(self.s.shape[0])]

    def serving_sets(self):
        return [np.flatnonzero(self.s[u]) for u in range(self.s.shape[0])]

    def cluster_sizes(self):
        return self.s.sum(axis=1)

    def validate(self, n_antennas):
        if not np.isin(self.s, (0, 1)).all():
            raise ValueError("cluster matrix entries must be 0 or 1")
        for u in range(self.s.shape[0]):
            extra = set(np.flatnonzero(self.s[u])) - set(np.asarray(self.candidate_sets[u]))
            if extra:
                raise ValueError(f"user {u} served by non-candidate RRHs {sorted(extra)}")
        loads = self.s.sum(axis=0)
        if np.any(loads > n_antennas):
            bad = np.flatnonzero(loads > n_antennas)
            raise ValueError(
                f"RRHs {bad.tolist()} serve more than {n_antennas} users (antenna limit)"
            )


@dataclass
class UtilityWeights:
    """Positive per-user utility marginals."""

    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if np.any(self.q <= 0) or not np.all(np.isfinite(self.q)):
            raise ValueError("utility weights must be positive and finite")


def _masked_beams(w, s):
    return w * s[:, :, None]


def coupling(channel, beams, clusters, u, u2):
    """Channel/beam coupling of user u with user u2's transmission:
    sum over RRHs serving u2 of h[u, r] . w[u2, r]."""
    h = channel.h
    if beams.w.shape != h.shape:
        raise ValueError(f"beam dims {beams.w.shape} do not match channel {h.shape}")
    active = np.flatnonzero(clusters.s[u2])
    if active.size == 0:
        return 0j
    return complex(np.sum(h[u, active] * beams.w[u2, active]))


def coupling_matrix(channel, beams, clusters):
    """All pairwise couplings Psi[u, u2], vectorized."""
    wm = _masked_beams(beams.w, clusters.s)
    return np.einsum("urn,vrn->uv", channel.h, wm)


def sinr(channel, beams, clusters, u):
    return sinr_all(channel, beams, clusters)[u]


def sinr_all(channel, beams, clusters):
    """Per-user SINR: |Psi_uu|^2 / (sum_{u'!=u} |Psi_uu'|^2 + sigma^2)."""
    psi = coupling_matrix(channel, beams, clusters)
    p = np.abs(psi) ** 2
    own = np.diag(p).copy()
    interference = p.sum(axis=1) - own
    return own / (interference + channel.noise_power)


def rate(gamma, mu=1.0):
    """Normalized rate log2(1 + mu * gamma) in bits/s/Hz."""
    return np.log2(1.0 + mu * np.asarray(gamma, dtype=float))


def rate_bps(gamma, channel):
    """Physical-units rate eta * B * log2(1 + mu * gamma) in bits/s."""
    return channel.spectral_eff * channel.bandwidth_hz * rate(gamma, channel.coding_eff)


@dataclass
class LinkReport:
    gammas: np.ndarray
    rates: np.ndarray  # normalized bits/s/Hz
    wsrsu: float
    sum_rate: float
    per_rrh_power: np.ndarray = field(default=None)


def evaluate(channel, beams, clusters, weights, mu=None):
    """SINRs, rates, weighted utility, and sum rate for one solution."""
    mu = channel.coding_eff if mu is None else mu
    gammas = sinr_all(channel, beams, clusters)
    rates = rate(gammas, mu)
    q = weights.q if isinstance(weights, UtilityWeights) else np.asarray(weights, dtype=float)
    return LinkReport(
        gammas=gammas,
        rates=rates,
        wsrsu=float(np.dot(q, rates)),
        sum_rate=float(rates.sum()),
        per_rrh_power=beams.per_rrh_power(),
    )


def wsrsu(channel, beams, clusters, weights):
    """Weighted sum-rate system utility sum_u q_u R_u."""
    return evaluate(channel, beams, clusters, weights).wsrsu


def phase_rotate(channel, beams):
    """Rotate each beam so h[u, r] . w[u, r] is real and >= 0.

    Preserves every per-beam norm and every |h . w|; per-user SINRs of
    single-RRH clusters are unchanged.
    """
    prod = np.einsum("urn,urn->ur", channel.h, beams.w)
    phase = np.exp(-1j * np.angle(prod))
    return BeamformerSet(w=beams.w * phase[:, :, None])

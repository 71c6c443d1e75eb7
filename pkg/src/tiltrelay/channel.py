"""Tilt-aware free-space link model for the relay chain.

The relay (UAV-1) forwards traffic from a peer UAV (UAV-2) to a base station.
Both UAVs carry a body-fixed antenna, so every lateral acceleration tilts the
antenna and changes the gain seen along each link.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentNodes, HorizonMismatch
from .geometry import Pose, quat_to_rotmat

DIPOLE_DIRECTIVITY = 1.64
ZERO_RATE = 1e-12
PENALTY_CEILING = 1e12
_MC_CHUNK = 8192


def dipole_gain(direction):
    """Normalized half-wave dipole power gain for a direction in the antenna frame.

    The dipole lies along the frame's z-axis:
    ``g(theta) = [cos(pi/2 cos(theta)) / sin(theta)]**2``, so the broadside
    gain is 1 and the axial gain is 0. Accepts (3,) or (..., 3).
    """
    d = np.asarray(direction, dtype=float)
    n2 = np.sum(d*d, axis=-1)
    return _dipole(d[..., 2] / np.sqrt(n2), (d[..., 0]**2 + d[..., 1]**2) / n2)


def _dipole(cos_t, sin2):
    """Pattern from the polar angle's cosine and squared sine.

    Uses cos(pi/2 c) = sin(pi/2 (1 - |c|)) with 1 - |c| = s^2 / (1 + |c|), so
    the gain near the axis keeps full relative precision.
    """
    c = np.minimum(np.abs(cos_t), 1.0)
    sin2 = np.clip(sin2, 0.0, 1.0)
    num = np.sin(0.5*np.pi * sin2 / (1.0 + c))**2
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(sin2 > 0, num / sin2, 0.0)
    return np.clip(g, 0.0, 1.0)


@dataclass(frozen=True)
class AntennaPattern:
    kind: str = "half_wave_dipole"
    directivity: float | None = None
    axis_body: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("half_wave_dipole", "isotropic"):
            raise ValueError(f"unknown antenna kind {self.kind!r}")
        if self.directivity is None:
            d = DIPOLE_DIRECTIVITY if self.kind == "half_wave_dipole" else 1.0
            object.__setattr__(self, "directivity", d)
        if self.directivity < 1.0:
            raise ValueError("directivity must be >= 1")
        axis = np.asarray(self.axis_body, dtype=float)
        object.__setattr__(self, "axis_body", tuple(axis / np.linalg.norm(axis)))

    @classmethod
    def dipole(cls, axis_body=(0.0, 0.0, 1.0)):
        return cls("half_wave_dipole", DIPOLE_DIRECTIVITY, axis_body)

    @classmethod
    def isotropic(cls):
        return cls("isotropic", 1.0)

    def gain(self, direction_body):
        """Normalized gain in [0, 1] toward a body-frame direction."""
        d = np.asarray(direction_body, dtype=float)
        if self.kind == "isotropic":
            return np.ones(d.shape[:-1]) if d.ndim > 1 else 1.0
        axis = np.asarray(self.axis_body)
        n2 = np.sum(d*d, axis=-1)
        perp = np.cross(d, axis)
        return _dipole(d @ axis / np.sqrt(n2), np.sum(perp*perp, axis=-1) / n2)


@dataclass(frozen=True)
class LinkParams:
    tx_power_w: float = 1.0
    noise_w: float = 1.0
    k0: float = 1.0
    d_b: float = 1.0

    def __post_init__(self):
        if not (self.tx_power_w > 0 and self.noise_w > 0 and self.k0 > 0):
            raise ValueError("tx power, noise power and k0 must be positive")
        if self.d_b < 1.0:
            raise ValueError("beamforming gain d_b must be >= 1")

    def scale(self, tx_ant: AntennaPattern, rx_ant: AntennaPattern) -> float:
        """SNR numerator constant, i.e. everything except pattern and distance."""
        return (self.k0 * tx_ant.directivity**2 * rx_ant.directivity**2 * self.d_b**2
                * self.tx_power_w / self.noise_w)


def friis_k0(frequency_hz: float) -> float:
    """Friis constant (lambda / 4 pi)^2 for a carrier frequency."""
    lam = 299_792_458.0 / frequency_hz
    return (lam / (4*np.pi))**2


def snr_arrays(p_tx, R_tx, p_rx, R_rx, tx_ant, rx_ant, params: LinkParams):
    """Vectorized link SNR; positions (..., 3), rotation matrices (..., 3, 3)."""
    d = np.asarray(p_rx, dtype=float) - np.asarray(p_tx, dtype=float)
    dist2 = np.sum(d*d, axis=-1)
    if np.any(dist2 <= 1e-18):
        raise CoincidentNodes("transmitter and receiver positions coincide")
    u = d / np.sqrt(dist2)[..., None]
    # world -> body is R^T
    g_tx = tx_ant.gain(np.einsum("...ji,...j->...i", R_tx, u))
    g_rx = rx_ant.gain(np.einsum("...ji,...j->...i", R_rx, -u))
    return params.scale(tx_ant, rx_ant) * g_tx * g_rx / dist2


def link_snr(tx: Pose, rx: Pose, tx_ant: AntennaPattern, rx_ant: AntennaPattern,
             params: LinkParams, fading_draw: float | None = None) -> float:
    """Linear SNR of a single tx -> rx link.

    ``SNR = k0 D_tx^2 D_rx^2 d_b^2 g_tx g_rx P / (|p_tx - p_rx|^2 noise)``,
    with each gain evaluated toward the other node in the antenna's own body
    frame. ``fading_draw`` multiplies the result when given.
    """
    snr = float(snr_arrays(tx.position, quat_to_rotmat(tx.orientation),
                           rx.position, quat_to_rotmat(rx.orientation),
                           tx_ant, rx_ant, params))
    return snr if fading_draw is None else snr * fading_draw


def rate(snr):
    return np.log2(1.0 + np.asarray(snr, dtype=float))


def end_to_end_rate(snr1, snr2):
    return np.minimum(rate(snr1), rate(snr2))


def smooth_objective_term(snr1, snr2, p: float = 8):
    """Smooth max of the two inverse link rates.

    ``(R1**-p + R2**-p)**(1/p)`` approximates ``1 / min(R1, R2)`` from above;
    ``p=np.inf`` gives the exact max. Samples where a rate collapses below
    1e-12 return ``PENALTY_CEILING`` to keep sums finite.
    """
    r1 = rate(snr1)
    r2 = rate(snr2)
    dead = (r1 < ZERO_RATE) | (r2 < ZERO_RATE)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv1 = 1.0 / r1
        inv2 = 1.0 / r2
        hi = np.maximum(inv1, inv2)
        if np.isinf(p):
            out = hi
        else:
            lo = np.minimum(inv1, inv2)
            out = hi * (1.0 + (lo / hi)**p)**(1.0 / p)
    out = np.where(dead, PENALTY_CEILING, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class FadingModel:
    """Multiplicative small-scale power gain with unit mean."""

    kind: str = "none"
    sigma_db: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "rayleigh", "log_normal_shadowing"):
            raise ValueError(f"unknown fading kind {self.kind!r}")
        if self.sigma_db < 0:
            raise ValueError("sigma_db must be non-negative")

    @property
    def deterministic(self) -> bool:
        return self.kind == "none"

    def draw(self, rng: np.random.Generator, shape):
        if self.kind == "none":
            return np.ones(shape)
        if self.kind == "rayleigh":
            return rng.exponential(1.0, shape)
        # log-normal power in dB with mean chosen so E[gain] = 1
        s = self.sigma_db * np.log(10) / 10
        return np.exp(rng.normal(-0.5 * s * s, s, shape))


@dataclass(frozen=True)
class RelayLinks:
    """Antennas and link budgets of the peer -> relay -> base-station chain."""

    relay_antenna: AntennaPattern = field(default_factory=AntennaPattern.dipole)
    peer_antenna: AntennaPattern = field(default_factory=AntennaPattern.dipole)
    bs_antenna: AntennaPattern = field(default_factory=AntennaPattern.isotropic)
    relay_to_bs: LinkParams = field(default_factory=LinkParams)
    peer_to_relay: LinkParams = field(default_factory=LinkParams)

    def snrs(self, relay_pos, relay_R, peer_pos, peer_R, bs_pos, bs_R=None):
        """(snr_relay_to_bs, snr_peer_to_relay) for stacked relay states."""
        relay_pos = np.asarray(relay_pos, dtype=float)
        bs_R = np.eye(3) if bs_R is None else bs_R
        snr10 = snr_arrays(relay_pos, relay_R, bs_pos, bs_R,
                           self.relay_antenna, self.bs_antenna, self.relay_to_bs)
        snr21 = snr_arrays(peer_pos, peer_R, relay_pos, relay_R,
                           self.peer_antenna, self.relay_antenna, self.peer_to_relay)
        return snr10, snr21


def snr_traces(traj_relay, traj_peer, bs: Pose, links: RelayLinks):
    """Per-sample deterministic SNRs along two trajectories on a shared grid."""
    if traj_relay.n_samples != traj_peer.n_samples or not np.isclose(traj_relay.Ts, traj_peer.Ts):
        raise HorizonMismatch(
            f"relay has {traj_relay.n_samples} samples at Ts={traj_relay.Ts}, "
            f"peer has {traj_peer.n_samples} at Ts={traj_peer.Ts}")
    return links.snrs(traj_relay.pos, traj_relay.rotmats, traj_peer.pos, traj_peer.rotmats,
                      bs.position, quat_to_rotmat(bs.orientation))


def _mc_chunks(n_mc: int):
    done = 0
    while done < n_mc:
        size = min(_MC_CHUNK, n_mc - done)
        yield size
        done += size


def mean_end_to_end_rate(snr1, snr2, fading: FadingModel, n_mc: int = 1, seed=None):
    """Monte-Carlo mean of min-link rate per sample; independent fading per link."""
    snr1 = np.asarray(snr1, dtype=float)
    snr2 = np.asarray(snr2, dtype=float)
    if fading.deterministic:
        return end_to_end_rate(snr1, snr2)
    rng = np.random.default_rng(fading.seed if seed is None else seed)
    total = np.zeros(snr1.shape)
    for size in _mc_chunks(n_mc):
        h1 = fading.draw(rng, (size,) + snr1.shape)
        h2 = fading.draw(rng, (size,) + snr2.shape)
        total += end_to_end_rate(snr1 * h1, snr2 * h2).sum(axis=0)
    return total / n_mc


def expected_bits_from_snr(t, snr1, snr2, fading: FadingModel = FadingModel(), n_mc: int = 1, seed=None):
    """Trapezoidal time integral of the expected end-to-end rate."""
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        return 0.0
    return float(np.trapezoid(mean_end_to_end_rate(snr1, snr2, fading, n_mc, seed), t))


def expected_bits(traj_relay, traj_peer, bs: Pose, links: RelayLinks,
                  fading: FadingModel = FadingModel(), n_mc: int = 1, seed=None) -> float:
    """Average transmitted bits (per unit bandwidth) along the relay trajectory."""
    snr1, snr2 = snr_traces(traj_relay, traj_peer, bs, links)
    return expected_bits_from_snr(traj_relay.t, snr1, snr2, fading, n_mc, seed)


def exceedance_probability(snr1, snr2, gamma0: float, fading: FadingModel = FadingModel(),
                           n_mc: int = 1, seed=None):
    """Estimated Pr(min(SNR1, SNR2) >= gamma0) per sample."""
    snr1 = np.asarray(snr1, dtype=float)
    snr2 = np.asarray(snr2, dtype=float)
    if fading.deterministic:
        return (np.minimum(snr1, snr2) >= gamma0).astype(float)
    rng = np.random.default_rng(fading.seed if seed is None else seed)
    hits = np.zeros(snr1.shape)
    for size in _mc_chunks(n_mc):
        h1 = fading.draw(rng, (size,) + snr1.shape)
        h2 = fading.draw(rng, (size,) + snr2.shape)
        hits += (np.minimum(snr1 * h1, snr2 * h2) >= gamma0).sum(axis=0)
    return hits / n_mc


def outage_from_snr(snr1, snr2, gamma0: float, epsilon: float,
                    fading: FadingModel = FadingModel(), n_mc: int = 1, seed=None):
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not gamma0 > 0:
        raise ValueError("gamma0 must be positive")
    prob = exceedance_probability(snr1, snr2, gamma0, fading, n_mc, seed)
    return bool(np.all(prob >= 1.0 - epsilon)), prob


def outage_satisfied(traj_relay, traj_peer, bs: Pose, links: RelayLinks, gamma0: float,
                     epsilon: float, fading: FadingModel = FadingModel(), n_mc: int = 1, seed=None):
    """Check the connectivity requirement at every sample.

    Returns ``(ok, prob)`` where ``prob[k]`` estimates the probability that
    the weaker link is at or above ``gamma0`` at sample k.
    """
    snr1, snr2 = snr_traces(traj_relay, traj_peer, bs, links)
    return outage_from_snr(snr1, snr2, gamma0, epsilon, fading, n_mc, seed)

"""Packet success model for a single link and interference-averaged channel probabilities.

A packet of ``packet_bits`` bits crosses a link when every bit survives. The bit
error rate follows the Gaussian tail of ``sqrt(2 * SINR)``, and concurrent
transmitters add their received power to the noise floor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erfc

# Anchor points of the link curve (interference-free): distance in meters, target success.
ANCHOR_DISTANCE = 310.0
ANCHOR_SUCCESS = 0.504
FAR_DISTANCE = 620.0
FAR_MAX_SUCCESS = 0.01
NEAR_DISTANCE = 155.0
NEAR_MIN_SUCCESS = 0.99

CALIBRATION_TOL = 1e-4

# Result of calibrate() on the default parameters, stored so that constructing
# the default channel costs nothing.
_DEFAULT_NOISE_FLOOR = 9.786694621077825e-10


class CalibrationError(ValueError):
    """Raised when the link curve cannot meet one of the anchor targets."""


@dataclass(frozen=True)
class ChannelParams:
    """Physical parameters of the link model.

    Attributes:
        tx_power: Transmit power in mW.
        pathloss_exponent: Exponent of the distance power law.
        noise_floor: Receiver noise power in mW.
        packet_bits: Packet length in bits.
        d_sd: Source to destination distance in meters.
        success_floor: Success probabilities below this value are reported as 0,
            modelling the receiver sensitivity limit.
    """

    tx_power: float = 0.15
    pathloss_exponent: float = 3.0
    noise_floor: float = _DEFAULT_NOISE_FLOOR
    packet_bits: int = 1024
    d_sd: float = 620.0
    success_floor: float = 1e-9

    def __post_init__(self) -> None:
        if self.noise_floor <= 0:
            raise ValueError("noise_floor must be positive")
        if self.tx_power <= 0:
            raise ValueError("tx_power must be positive")
        if self.packet_bits < 1:
            raise ValueError("packet_bits must be at least 1")
        if self.d_sd <= 0:
            raise ValueError("d_sd must be positive")


def _received_power(params: ChannelParams, d: np.ndarray) -> np.ndarray:
    return params.tx_power * np.power(d, -params.pathloss_exponent)


def _packet_success(params: ChannelParams, sinr: np.ndarray) -> np.ndarray:
    ber = 0.5 * erfc(np.sqrt(sinr))
    p = np.exp(params.packet_bits * np.log1p(-ber))
    return np.where(p < params.success_floor, 0.0, p)


def link_success_array(
    d: np.ndarray | float,
    interferer_distances: Sequence[np.ndarray | float] = (),
    params: ChannelParams | None = None,
) -> np.ndarray:
    """Vectorized packet success probability.

    Args:
        d: Transmitter to receiver distances. Values are floored at 1e-9 m so
            that co-located nodes get a perfect link instead of a domain error.
        interferer_distances: One entry per active interferer, each broadcastable
            against ``d``.
        params: Channel parameters, defaults to the calibrated default channel.

    Returns:
        Array of success probabilities with the broadcast shape.
    """
    params = params or default_channel()
    d = np.maximum(np.asarray(d, dtype=float), 1e-9)
    interference = np.zeros_like(d)
    for dk in interferer_distances:
        dk = np.maximum(np.asarray(dk, dtype=float), 1e-9)
        interference = interference + _received_power(params, dk)
    sinr = _received_power(params, d) / (params.noise_floor + interference)
    return _packet_success(params, sinr)


def link_success(
    d: float,
    interferers: Iterable[tuple[float, bool]] = (),
    params: ChannelParams | None = None,
) -> float:
    """Success probability of one packet over a link of length ``d``.

    Args:
        d: Link length in meters, must be positive.
        interferers: ``(distance_to_receiver, active)`` pairs. Inactive
            interferers are ignored.
        params: Channel parameters.

    Raises:
        ValueError: If ``d`` is not positive.
    """
    if not d > 0:
        raise ValueError(f"link distance must be positive, got {d}")
    active = [dk for dk, on in interferers if on]
    return float(link_success_array(d, active, params))


def _distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def interferer_subsets(
    rates: Sequence[float],
) -> list[tuple[tuple[int, ...], float]]:
    """Enumerate activity patterns of independent interferers.

    Args:
        rates: Emission probability of each potential interferer.

    Returns:
        ``(active_indices, weight)`` pairs covering every pattern; the weights
        sum to one.
    """
    out = []
    n = len(rates)
    for pattern in itertools.product((False, True), repeat=n):
        w = 1.0
        for on, t in zip(pattern, rates):
            w *= t if on else 1.0 - t
        out.append((tuple(k for k in range(n) if pattern[k]), w))
    return out


def channel_probability(
    i: int,
    j: int,
    u: int,
    tau: np.ndarray,
    positions: np.ndarray,
    params: ChannelParams | None = None,
) -> float:
    """Probability that a packet sent by ``i`` in slot ``u`` reaches ``j``.

    The value is conditioned on ``j`` listening in slot ``u`` and averaged over
    the activity of every other node allowed to transmit in that slot.

    Args:
        i: Transmitter index.
        j: Receiver index.
        u: Slot index (0-based).
        tau: Emission rates, shape ``(nodes, slots)``.
        positions: Node coordinates, shape ``(nodes, 2)``.
        params: Channel parameters.
    """
    if i == j:
        return 0.0
    others = [k for k in range(tau.shape[0]) if k not in (i, j) and tau[k, u] > 0]
    d_ij = _distance(positions[i], positions[j])
    dists = [_distance(positions[k], positions[j]) for k in others]
    total = 0.0
    for active, w in interferer_subsets([float(tau[k, u]) for k in others]):
        if w == 0.0:
            continue
        ls = float(link_success_array(d_ij, [dists[a] for a in active], params))
        total += w * ls
    return total


def link_table(
    tau: np.ndarray,
    positions: np.ndarray,
    params: ChannelParams | None = None,
    transmit_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Channel probability table ``p[i, j, u]`` for every node pair and slot.

    Entries are zero for transmitters outside ``transmit_mask`` (by default the
    nodes with a positive rate in the slot).
    """
    n, t = tau.shape
    mask = tau > 0 if transmit_mask is None else transmit_mask
    p = np.zeros((n, n, t))
    for u in range(t):
        for i in range(n):
            if not mask[i, u]:
                continue
            for j in range(n):
                if j != i:
                    p[i, j, u] = channel_probability(i, j, u, tau, positions, params)
    return p


def _anchor_success(params: ChannelParams, d: float) -> float:
    return float(link_success_array(d, (), replace(params, success_floor=0.0)))


def _check_targets(params: ChannelParams) -> list[str]:
    failures = []
    p_mid = _anchor_success(params, ANCHOR_DISTANCE)
    if abs(p_mid - ANCHOR_SUCCESS) > CALIBRATION_TOL:
        failures.append(f"p({ANCHOR_DISTANCE:g} m) = {p_mid:.6f}, target {ANCHOR_SUCCESS}")
    p_far = _anchor_success(params, FAR_DISTANCE)
    if p_far > FAR_MAX_SUCCESS:
        failures.append(f"p({FAR_DISTANCE:g} m) = {p_far:.6f} exceeds {FAR_MAX_SUCCESS}")
    p_near = _anchor_success(params, NEAR_DISTANCE)
    if p_near < NEAR_MIN_SUCCESS:
        failures.append(f"p({NEAR_DISTANCE:g} m) = {p_near:.6f} below {NEAR_MIN_SUCCESS}")
    return failures


def calibrate(params: ChannelParams | None = None, max_iter: int = 200) -> ChannelParams:
    """Solve the noise floor so that the anchor link hits its target success.

    Bisection runs on ``log(noise_floor)``, over which the anchor success is
    monotone decreasing. Parameters that already meet every target are
    returned unchanged.

    Raises:
        CalibrationError: If a target cannot be met, naming the target.
    """
    params = params or ChannelParams()
    if not _check_targets(params):
        return params

    def success_at(log_n0: float) -> float:
        return _anchor_success(replace(params, noise_floor=math.exp(log_n0)), ANCHOR_DISTANCE)

    lo, hi = math.log(1e-300), math.log(1e300)
    if not success_at(lo) >= ANCHOR_SUCCESS >= success_at(hi):
        raise CalibrationError(
            f"p({ANCHOR_DISTANCE:g} m) cannot reach {ANCHOR_SUCCESS} for any noise floor"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if success_at(mid) > ANCHOR_SUCCESS:
            lo = mid
        else:
            hi = mid
        if abs(success_at(mid) - ANCHOR_SUCCESS) < 1e-9:
            break
    calibrated = replace(params, noise_floor=math.exp(0.5 * (lo + hi)))
    failures = _check_targets(calibrated)
    if failures:
        raise CalibrationError("; ".join(failures))
    return calibrated


@lru_cache(maxsize=None)
def default_channel(d_sd: float = 620.0) -> ChannelParams:
    """Calibrated default channel for a given source-destination distance."""
    return calibrate(ChannelParams(d_sd=d_sd))

"""Gaussian multiple-access capacity region of the receiver-to-FC backhaul."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scene import Scene

MAX_NODES = 12


@dataclass(frozen=True)
class MacRegion:
    """Sum-rate limits C_S = log2(1 + sum_{n in S} P_n g_n / N0) for every nonempty S.

    :param nodes: receiver ids, in the order used by ``masks``
    :param masks: boolean (2^|nodes| - 1) x |nodes| membership matrix
    :param capacity: C_S in bits per channel use, aligned with ``masks``
    """

    nodes: tuple[int, ...]
    masks: np.ndarray
    capacity: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)

    def subset_capacity(self, subset) -> float:
        want = np.isin(np.array(self.nodes), list(subset))
        hit = np.flatnonzero(np.all(self.masks == want, axis=1))
        if hit.size == 0:
            raise KeyError(tuple(subset))
        return float(self.capacity[hit[0]])


def subset_masks(m: int) -> np.ndarray:
    """All nonempty subsets of m items as rows of a boolean matrix."""
    return np.array([[bool(k >> i & 1) for i in range(m)] for k in range(1, 2 ** m)], dtype=bool).reshape(-1, m)


def build_mac_region(scene: Scene, omega=None) -> MacRegion:
    """Enumerate the capacity constraints of the selected receivers.

    :param omega: receiver ids (default: all receivers)
    """
    nodes = tuple(range(scene.n_receivers)) if omega is None else tuple(int(n) for n in omega)
    if len(nodes) == 0:
        raise ValueError("node set is empty")
    if len(nodes) > MAX_NODES:
        raise ValueError(f"subset enumeration limited to {MAX_NODES} nodes, got {len(nodes)}")
    snr = np.array([scene.backhaul_power[n] * scene.backhaul_gain[n] for n in nodes]) / scene.backhaul_noise
    masks = subset_masks(len(nodes))
    capacity = np.log2(1.0 + masks @ snr)
    return MacRegion(nodes=nodes, masks=masks, capacity=capacity)


def min_channel_uses(node_bits, region: MacRegion, rtol: float = 1e-9) -> int:
    """Smallest integer W >= 1 with sum_{n in S} bits_n <= C_S W for every subset.

    :param node_bits: total bits per node, aligned with region.nodes
    :param rtol: relative slack absorbing round-off in the ratio
    """
    node_bits = np.asarray(node_bits, dtype=float)
    if node_bits.shape != (region.size,):
        raise ValueError("one bit total per node expected")
    if np.any(node_bits < 0):
        raise ValueError("bit totals must be nonnegative")
    need = float(np.max(region.masks @ node_bits / region.capacity))
    return max(1, int(math.ceil(need * (1.0 - rtol))))


def relaxed_channel_uses(node_bits, region: MacRegion) -> float:
    """max_S sum_{n in S} bits_n / C_S, the continuous counterpart of min_channel_uses."""
    node_bits = np.asarray(node_bits, dtype=float)
    return float(np.max(region.masks @ node_bits / region.capacity))


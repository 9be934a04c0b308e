"""Device grouping and round-robin device-model assignment.

Groups and models are numbered from 1; devices are numbered from 0 so
they index channel and data arrays directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def assigned_model(i, t, M):
    """Model trained by group ``i`` in round ``t``: ``((M + i - t mod M - 1) mod M) + 1``."""
    return ((M + i - (t % M) - 1) % M) + 1


def group_training_model(m, t, M):
    """Group that trains model ``m`` in round ``t`` (inverse of :func:`assigned_model`)."""
    return ((m + (t % M) - 1) % M) + 1


@dataclass(frozen=True)
class Schedule:
    """Device partition for one frame.

    ``groups[i - 1]`` holds the sorted device indices of group ``i``.
    """

    frame_index: int
    groups: tuple

    @property
    def M(self) -> int:
        return len(self.groups)

    @property
    def K(self) -> int:
        return sum(len(g) for g in self.groups)

    def members(self, i) -> np.ndarray:
        return self.groups[i - 1]

    def model_of(self, i, t) -> int:
        return assigned_model(i, t, self.M)

    def group_of(self, m, t) -> int:
        return group_training_model(m, t, self.M)

    def group_index(self) -> np.ndarray:
        """Array mapping device -> group number (1-based)."""
        out = np.empty(self.K, dtype=int)
        for i, g in enumerate(self.groups, start=1):
            out[g] = i
        return out


def partition_devices(K, M, rng, frame=0) -> Schedule:
    """Uniformly random partition of ``K`` devices into ``M`` equal groups."""
    if M < 1 or K < 1:
        raise ConfigurationError(f"K and M must be positive, got K={K}, M={M}")
    if K % M:
        raise ConfigurationError(f"K={K} is not divisible by M={M}")
    perm = rng.permutation(K)
    size = K // M
    groups = tuple(np.sort(perm[i * size:(i + 1) * size]) for i in range(M))
    return Schedule(frame_index=int(frame), groups=groups)


def single_group(K, frame=0) -> Schedule:
    return Schedule(frame_index=int(frame), groups=(np.arange(K),))

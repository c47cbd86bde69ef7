"""Noise suppressor and data-to-noise ratio (DNR) helpers.

A deployed layer only ever sees the noisy sum ``h + w``.  ``suppress`` therefore
keys on that sum and on a static per-channel flag that says whether the
channel's noise is believed to be positive.  ``suppress_known`` and
``suppressed_decomposition`` take ``h`` and ``w`` separately and exist to check
the theory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditionViolated, InvalidArgument, SingularDNR


@dataclass(frozen=True)
class SuppressorConfig:
    """Per-channel suppressor settings for one layer input.

    ``active`` switches the channel on, ``noise_positive`` selects the affine
    branch ``value * kappa + rho`` for non-negative values.
    """

    active: tuple[bool, ...]
    kappa: tuple[float, ...]
    rho: tuple[float, ...]
    noise_positive: tuple[bool, ...]

    def __post_init__(self):
        n = len(self.active)
        if not (len(self.kappa) == len(self.rho) == len(self.noise_positive) == n):
            raise InvalidArgument("suppressor channel fields differ in length")

    @classmethod
    def inactive(cls, dim: int) -> "SuppressorConfig":
        return cls((False,) * dim, (1.0,) * dim, (0.0,) * dim, (False,) * dim)

    @classmethod
    def uniform(cls, dim: int, kappa: float, rho: float, noise_positive=True):
        return cls((True,) * dim, (float(kappa),) * dim, (float(rho),) * dim,
                   (bool(noise_positive),) * dim)

    def __len__(self):
        return len(self.active)

    @property
    def any_active(self) -> bool:
        return any(self.active)

    def validate(self, bound: float) -> None:
        """Check |rho_i| >= bound * |kappa_i| on every active affine channel.

        ``bound`` is the caller's declared sup of |h + w| over the input range.
        """
        for i, (on, pos, k, r) in enumerate(
            zip(self.active, self.noise_positive, self.kappa, self.rho)
        ):
            if on and pos and abs(r) < bound * abs(k):
                raise ConditionViolated(
                    f"channel {i}: |rho|={abs(r)} < {bound} * |kappa|={bound * abs(k)}"
                )

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Suppress the last axis of ``y`` channel-wise."""
        if not self.any_active:
            return y
        active = np.array(self.active)
        pos = np.array(self.noise_positive)
        kappa = np.array(self.kappa)
        rho = np.array(self.rho)
        out = np.where(y < 0, 0.0, np.where(pos, y * kappa + rho, y))
        return np.where(active, out, y)

    def derivative(self, y: np.ndarray) -> np.ndarray:
        """Elementwise d apply / d y (0 on the clamped branch)."""
        if not self.any_active:
            return np.ones_like(y)
        active = np.array(self.active)
        pos = np.array(self.noise_positive)
        kappa = np.array(self.kappa)
        d = np.where(y < 0, 0.0, np.where(pos, kappa, 1.0))
        return np.where(active, d, 1.0)


def suppress(value: float, kappa: float = 1.0, rho: float = 0.0,
             noise_positive: bool = False) -> float:
    if value < 0:
        return 0.0
    if noise_positive:
        return value * kappa + rho
    return value


def suppress_known(truth: float, noise: float, kappa: float, rho: float) -> float:
    """Three-case mapping when truth and noise are known separately."""
    total = truth + noise
    if total < 0:
        return 0.0
    if noise > 0:
        return total * kappa + rho
    return total


def condition_holds(truth: float, noise: float, kappa: float, rho: float) -> bool:
    return abs(rho) >= abs(truth + noise) * abs(kappa)


def suppressed_decomposition(truth: float, noise: float, kappa: float, rho: float):
    """Split the suppressor output into (true part, noise part).

    Raises ConditionViolated when |rho| < |truth + noise| * |kappa|.
    """
    if not condition_holds(truth, noise, kappa, rho):
        raise ConditionViolated(
            f"|rho|={abs(rho)} < |h+w|*|kappa|={abs(truth + noise) * abs(kappa)}"
        )
    total = truth + noise
    if total < 0:
        return truth, -truth
    if noise > 0:
        return truth * kappa + rho, noise * kappa
    return truth, noise


def dnr(truth: float, noise: float) -> float:
    if noise == 0:
        raise SingularDNR("DNR undefined for zero noise")
    return truth / noise


def dnr_of_monomial(dnr_i: float, dnr_j: float, p: int, q: int) -> float:
    """|DNR| of x_i^p x_j^q given the DNRs of its two factors."""
    if dnr_i == 0 or dnr_j == 0:
        raise SingularDNR("factor DNR must be non-zero")
    if p < 0 or q < 0 or p + q < 1:
        raise InvalidArgument(f"need p, q >= 0 and p + q >= 1, got ({p}, {q})")
    growth = (1.0 + 1.0 / dnr_i) ** p * (1.0 + 1.0 / dnr_j) ** q
    if growth == 1.0:
        raise SingularDNR("monomial noise vanishes")
    return abs(1.0 / (growth - 1.0))

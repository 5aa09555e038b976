"""Physical and numerical run parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import ConfigError

# Per-step jump probability cap; gamma1*<n>*dt beyond this aborts the run.
JUMP_PROB_CAP = 0.05


@dataclass(frozen=True)
class SimParams:
    """Couplings, detuning and discretisation for one simulation.

    gamma1 couples the counting detector, gamma2 the homodyne port,
    omega is the detuning against the local oscillator. The total loss
    rate is always gamma1 + gamma2.
    """

    gamma1: float
    gamma2: float
    omega: float = 0.0
    dt: float = 1e-3
    t_final: float = 4.0
    dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError("coupling rates must be non-negative")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.t_final <= 0:
            raise ConfigError("t_final must be positive")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")

    @property
    def gamma(self) -> float:
        """Total loss rate."""
        return self.gamma1 + self.gamma2

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_final / self.dt - 1e-9))

    def decay_rate(self) -> complex:
        """Complex single-photon decay rate i*omega + gamma/2."""
        return 1j * self.omega + 0.5 * self.gamma

"""Parameter records for the plant, the channel, the scattering mode and the PI gains."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

NONE = "none"
FIXED_D = "fixed-d"
ZETA = "zeta"
MODES = (NONE, FIXED_D, ZETA)


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class PlantParams:
    """First-order plant ``x' = -a x + b u1``, ``y1 = x``."""

    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        a = _finite("a", self.a)
        b = _finite("b", self.b)
        if a < 0:
            raise ValidationError(f"plant pole a must be >= 0, got {a}")
        if b <= 0:
            raise ValidationError(f"plant gain b must be > 0, got {b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class ChannelParams:
    """Forward (controller to plant) and return delays, in seconds."""

    h1: float = 0.05
    h2: float = 0.05

    def __post_init__(self):
        h1 = _finite("h1", self.h1)
        h2 = _finite("h2", self.h2)
        if h1 < 0 or h2 < 0:
            raise ValidationError(f"delays must be >= 0, got h1={h1}, h2={h2}")
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)

    @property
    def h(self) -> float:
        return self.h1 + self.h2

    @classmethod
    def round_trip(cls, h: float) -> "ChannelParams":
        """Split a round-trip delay evenly between both directions."""
        return cls(h / 2.0, h / 2.0)


@dataclass(frozen=True)
class ScatteringConfig:
    """Scattering mode: ``none``, ``fixed-d`` (constant d) or ``zeta`` (d = zeta*kp)."""

    mode: str = NONE
    d: float | None = None
    zeta: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown scattering mode {self.mode!r}")
        if self.mode == FIXED_D:
            if self.d is None or not _finite("d", self.d) > 0:
                raise ValidationError(f"fixed-d mode needs d > 0, got {self.d!r}")
            object.__setattr__(self, "d", float(self.d))
        elif self.mode == ZETA:
            if self.zeta is None or not _finite("zeta", self.zeta) > 0:
                raise ValidationError(f"zeta mode needs zeta > 0, got {self.zeta!r}")
            object.__setattr__(self, "zeta", float(self.zeta))

    @classmethod
    def none(cls) -> "ScatteringConfig":
        return cls(NONE)

    @classmethod
    def fixed(cls, d: float) -> "ScatteringConfig":
        return cls(FIXED_D, d=d)

    @classmethod
    def proportional(cls, zeta: float) -> "ScatteringConfig":
        return cls(ZETA, zeta=zeta)

    @property
    def active(self) -> bool:
        return self.mode != NONE

    def d_for(self, kp):
        """Scattering impedance used with proportional gain ``kp``."""
        if self.mode == FIXED_D:
            return self.d
        if self.mode == ZETA:
            return self.zeta * kp
        return None

    def describe(self) -> str:
        if self.mode == FIXED_D:
            return f"fixed-d(d={self.d!r})"
        if self.mode == ZETA:
            return f"zeta(zeta={self.zeta!r})"
        return "none"


@dataclass(frozen=True)
class Gains:
    kp: float
    ki: float

    def __post_init__(self):
        kp = _finite("kp", self.kp)
        ki = _finite("ki", self.ki)
        if kp < 0 or ki < 0:
            raise ValidationError(f"gains must be nonnegative, got kp={kp}, ki={ki}")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "ki", ki)


@dataclass(frozen=True)
class LoopConfig:
    plant: PlantParams = PlantParams()
    channel: ChannelParams = ChannelParams()
    scattering: ScatteringConfig = ScatteringConfig()

    def __post_init__(self):
        if self.scattering.active and self.channel.h <= 0:
            raise ValidationError("the scattering transformation needs a round-trip delay h > 0")

    @classmethod
    def make(cls, a=1.0, b=1.0, h=0.1, mode=NONE, d=None, zeta=None, h1=None, h2=None):
        """Convenience constructor; ``h`` is split evenly unless ``h1``/``h2`` are given."""
        if h1 is None and h2 is None:
            channel = ChannelParams.round_trip(h)
        else:
            channel = ChannelParams(h1 or 0.0, h2 or 0.0)
        return cls(PlantParams(a, b), channel, ScatteringConfig(mode, d=d, zeta=zeta))

    @property
    def a(self) -> float:
        return self.plant.a

    @property
    def b(self) -> float:
        return self.plant.b

    @property
    def h(self) -> float:
        return self.channel.h

    @property
    def mode(self) -> str:
        return self.scattering.mode

"""Air-time bookkeeping for an RTS/CTS protected data exchange."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping


class InvalidParameterError(ValueError):
    """Raised when a configuration value is out of its valid range."""


@dataclass(frozen=True)
class PhyMacParams:
    """MAC/PHY constants. Durations in seconds, rates in bit/s.

    Defaults follow 5 GHz OFDM timing with an effective data rate for
    256-QAM 3/4, 2 spatial streams over 80 MHz. Control frames go out at
    the 6 Mb/s non-HT rate (RTS 20 B, CTS 14 B, compressed BlockAck 32 B)
    and the data PPDU carries an HE single-user preamble.
    """

    sigma: float = 9e-6
    sifs: float = 16e-6
    difs: float = 34e-6
    t_rts: float = 52e-6
    t_cts: float = 44e-6
    t_ack: float = 68e-6
    phy_preamble: float = 48e-6
    data_rate: float = 980.4e6
    packet_bits: int = 12000
    cw_min: int = 15
    m_stages: int = 6

    def __post_init__(self) -> None:
        for name in ("sigma", "sifs", "difs", "t_rts", "t_cts", "t_ack",
                     "phy_preamble", "data_rate", "packet_bits"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)!r}")
        if int(self.cw_min) != self.cw_min or self.cw_min < 1:
            raise InvalidParameterError(f"cw_min must be an integer >= 1, got {self.cw_min!r}")
        if int(self.m_stages) != self.m_stages or self.m_stages < 0:
            raise InvalidParameterError(f"m_stages must be an integer >= 0, got {self.m_stages!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PhyMacParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameterError(f"unknown phy parameters: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AirTimes:
    t_data: float
    t_s: float
    t_c: float


def compute_air_times(params: PhyMacParams) -> AirTimes:
    """Durations of the data frame, a successful exchange and a collision.

    Both exchange durations include the trailing DIFS and one empty slot,
    so a busy period occupies exactly one generic backoff slot.
    """
    t_data = params.phy_preamble + params.packet_bits / params.data_rate
    t_c = params.t_rts + params.sifs + params.t_cts + params.difs + params.sigma
    t_s = (params.t_rts + params.sifs + params.t_cts + params.sifs + t_data
           + params.sifs + params.t_ack + params.difs + params.sigma)
    if not t_s > t_c > 0:
        raise InvalidParameterError(f"degenerate air times: t_s={t_s!r}, t_c={t_c!r}")
    return AirTimes(t_data=t_data, t_s=t_s, t_c=t_c)

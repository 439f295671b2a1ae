"""Fanger PMV/PPD thermal comfort."""
from __future__ import annotations

import math
from dataclasses import dataclass

PMV_REPORT_LIMIT = 3.5


class ComfortConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ComfortParams:
    met: float = 1.1
    clo_winter: float = 1.0
    clo_summer: float = 0.5
    summer_months: tuple[int, ...] = (6, 7, 8)
    rh: float = 50.0
    air_speed: float = 0.1

    def __post_init__(self):
        if min(self.met, self.clo_winter, self.clo_summer, self.air_speed) <= 0:
            raise ValueError("met, clo and air speed must be positive")
        if not 0 < self.rh < 100:
            raise ValueError("relative humidity must lie in (0, 100)")

    def clo(self, month: int | None = None) -> float:
        return self.clo_summer if month in self.summer_months else self.clo_winter


def pmv(ta: float, tr: float, vel: float, rh: float, met: float, clo: float,
        wme: float = 0.0, tol: float = 1e-5, max_iter: int = 150) -> float:
    """Predicted mean vote from the Fanger heat balance.

    Temperatures in degC, air speed in m/s, RH in %, activity in met, clothing
    in clo. The clothing surface temperature comes from a damped fixed-point
    iteration on ``tcl / 100`` (kelvin).
    """
    pa = rh * 10.0 * math.exp(16.6536 - 4030.183 / (ta + 235.0))
    icl = 0.155 * clo
    m = met * 58.15
    mw = m - wme * 58.15
    fcl = 1.0 + 1.29 * icl if icl <= 0.078 else 1.05 + 0.645 * icl
    hcf = 12.1 * math.sqrt(vel)
    taa = ta + 273.0
    tra = tr + 273.0

    tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1)
    p1 = icl * fcl
    p2 = p1 * 3.96
    p3 = p1 * 100.0
    p4 = p1 * taa
    p5 = 308.7 - 0.028 * mw + p2 * (tra / 100.0) ** 4
    xn = tcla / 100.0
    xf = tcla / 50.0
    hc = hcf
    n = 0
    while abs(xn - xf) > tol:
        xf = (xf + xn) / 2.0
        hcn = 2.38 * abs(100.0 * xf - taa) ** 0.25
        hc = max(hcf, hcn)
        xn = (p5 + p4 * hc - p2 * xf ** 4) / (100.0 + p3 * hc)
        n += 1
        if n > max_iter:
            raise ComfortConvergenceError(
                f"clothing temperature did not converge (ta={ta}, tr={tr}, vel={vel}, "
                f"rh={rh}, met={met}, clo={clo})"
            )
    tcl = 100.0 * xn - 273.0

    hl1 = 3.05e-3 * (5733.0 - 6.99 * mw - pa)
    hl2 = 0.42 * (mw - 58.15) if mw > 58.15 else 0.0
    hl3 = 1.7e-5 * m * (5867.0 - pa)
    hl4 = 0.0014 * m * (34.0 - ta)
    hl5 = 3.96 * fcl * (xn ** 4 - (tra / 100.0) ** 4)
    hl6 = fcl * hc * (tcl - ta)
    ts = 0.303 * math.exp(-0.036 * m) + 0.028
    return ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6)


def ppd(pmv_value: float) -> float:
    return 100.0 - 95.0 * math.exp(-0.03353 * pmv_value ** 4 - 0.2179 * pmv_value ** 2)


def pmv_ppd(t_zone: float, params: ComfortParams | None = None, month: int | None = None) -> tuple[float, float]:
    """PMV (clamped to +-3.5 for reporting) and PPD (%) with mean radiant temperature = air temperature."""
    params = params or ComfortParams()
    value = pmv(t_zone, t_zone, params.air_speed, params.rh, params.met, params.clo(month))
    clamped = max(-PMV_REPORT_LIMIT, min(PMV_REPORT_LIMIT, value))
    return clamped, ppd(value)

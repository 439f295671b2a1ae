"""Zone thermal model, supervisory MPC and closed-loop energy/comfort simulation.

The plant is the first-order recurrence

    T_z[k+1] = a*T_z[k] + b*T_out[k] + c*u[k] + d*n[k]

with the control input ``u`` taken as the midpoint of the heating and cooling
setpoints. Conditioning effort per step is ``c*(T_mid - T_z)``; positive
effort is booked as heating energy, negative as cooling, each scaled by
``kappa`` kWh per degC-step.
"""
from __future__ import annotations

import configparser
import csv
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Sequence

import numpy as np

from .comfort import ComfortParams, pmv_ppd
from .ingest import WeatherSeries, f_to_c, format_timestamp, lookup
from .occupancy import IntervalSample


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class ZoneModel:
    a: float = 0.9
    b: float = 0.05
    c: float = 0.04
    d: float = 0.1

    def __post_init__(self):
        if not abs(self.a) < 1:
            raise ControlError(f"unstable zone model: |a| = {abs(self.a)} >= 1")


def predict_zone(model: ZoneModel, t_zone: float, t_out: float, u: float, n: float) -> float:
    return model.a * t_zone + model.b * t_out + model.c * u + model.d * n


def midpoint(t_htg: float, t_clg: float) -> float:
    if t_htg > t_clg:
        raise ControlError(f"heating setpoint {t_htg} above cooling setpoint {t_clg}")
    return (t_htg + t_clg) / 2.0


def identify_model(t_zone: Sequence[float], t_out: Sequence[float], u: Sequence[float],
                   n: Sequence[float]) -> ZoneModel:
    """Least-squares one-step-ahead fit of (a, b, c, d) from a logged trajectory.

    ``t_zone`` has one more entry than the inputs or the same length (the last
    input row is then unused).
    """
    tz = np.asarray(t_zone, dtype=float)
    k = min(len(t_out), len(u), len(n), len(tz) - 1)
    if k < 50:
        raise ControlError(f"need at least 50 transitions to identify the model, got {k}")
    X = np.column_stack([tz[:k], np.asarray(t_out[:k], float), np.asarray(u[:k], float), np.asarray(n[:k], float)])
    y = tz[1:k + 1]
    if np.linalg.matrix_rank(X) < 4:
        raise ControlError("regressors are rank deficient (inputs lack persistent excitation)")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    a, b, c, d = (float(v) for v in coef)
    if abs(a) >= 1:
        raise ControlError(f"identified model is unstable (a = {a})")
    return ZoneModel(a, b, c, d)


@dataclass(frozen=True)
class ControlConfig:
    timestep: float = 300.0
    horizon: int = 12
    heating_bounds: tuple[float, float] = (f_to_c(60.0), f_to_c(70.0))
    cooling_bounds: tuple[float, float] = (f_to_c(75.0), f_to_c(80.0))
    baseline_setpoints: tuple[float, float] = (f_to_c(70.0), f_to_c(75.0))
    target: float = 22.5
    w_comfort: float = 1.0
    w_energy: float = 0.5
    grid_step_f: float = 1.0
    kappa: float = 1.0
    t_initial: float = 21.0
    forecaster: str = "perfect"

    def __post_init__(self):
        if self.horizon < 1:
            raise ControlError("horizon must be at least one step")
        (hl, hh), (cl, ch) = self.heating_bounds, self.cooling_bounds
        if not (hl <= hh < cl <= ch):
            raise ControlError("need heating_min <= heating_max < cooling_min <= cooling_max")
        if self.forecaster not in ("perfect", "persistence"):
            raise ControlError(f"unknown forecaster {self.forecaster!r}")
        if self.grid_step_f <= 0 or self.timestep <= 0:
            raise ControlError("grid step and timestep must be positive")

    def _grid(self, lo_c: float, hi_c: float) -> np.ndarray:
        lo_f, hi_f = lo_c * 9 / 5 + 32, hi_c * 9 / 5 + 32
        count = int(round((hi_f - lo_f) / self.grid_step_f)) + 1
        return np.array([f_to_c(v) for v in np.linspace(lo_f, hi_f, max(count, 1))])

    def candidates(self) -> list[tuple[float, float]]:
        """Setpoint pairs on the grid, ordered most energy-conserving first."""
        heat = self._grid(*self.heating_bounds)
        cool = self._grid(*self.cooling_bounds)
        return [(float(h), float(c)) for h in heat for c in cool[::-1]]


@dataclass(frozen=True)
class MPCPlan:
    sequence: tuple[tuple[float, float], ...]
    cost: float
    predicted: tuple[float, ...]


def _horizon_costs(model: ZoneModel, t_zone: float, t_out: np.ndarray, occupied: np.ndarray,
                   mids: np.ndarray, cfg: ControlConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cost of holding each candidate midpoint constant over the horizon, and the predicted temps."""
    tz = np.full(mids.shape, float(t_zone))
    cost = np.zeros(mids.shape)
    traj = np.empty((len(t_out) + 1, len(mids)))
    traj[0] = tz
    for j in range(len(t_out)):
        energy = np.abs(model.c * (mids - tz))
        # occupants during interval j experience the temperature it ends on
        tz = model.a * tz + model.b * t_out[j] + model.c * mids + model.d * occupied[j]
        traj[j + 1] = tz
        cost += cfg.w_comfort * (occupied[j] >= 1) * (tz - cfg.target) ** 2 + cfg.w_energy * energy
    return cost, traj


def mpc_plan(model: ZoneModel, t_zone: float, t_out_forecast: Sequence[float],
             n_forecast: Sequence[float], cfg: ControlConfig | None = None) -> MPCPlan:
    """Enumerate constant setpoint pairs over the horizon and return the cheapest plan.

    Ties (to 1e-9 relative) go to the lowest heating setpoint, then the highest
    cooling setpoint.
    """
    cfg = cfg or ControlConfig()
    t_out = np.asarray(t_out_forecast, dtype=float)
    occ = np.asarray(n_forecast, dtype=float)
    if len(t_out) == 0 or len(t_out) != len(occ):
        raise ControlError("forecasts must be non-empty and of equal length")
    pairs = cfg.candidates()
    mids = np.array([(h + c) / 2.0 for h, c in pairs])
    cost, traj = _horizon_costs(model, t_zone, t_out, occ, mids, cfg)
    best = float(cost.min())
    tied = [i for i in range(len(pairs)) if cost[i] <= best + 1e-9 * (1.0 + abs(best))]
    i = min(tied, key=lambda j: (pairs[j][0], -pairs[j][1]))
    return MPCPlan(tuple([pairs[i]] * len(t_out)), float(cost[i]), tuple(float(v) for v in traj[:, i]))


def mpc_step(model: ZoneModel, t_zone: float, t_out_forecast: Sequence[float],
             n_forecast: Sequence[float], cfg: ControlConfig | None = None) -> tuple[float, float]:
    """Receding-horizon decision: the first setpoint pair of the optimal plan."""
    return mpc_plan(model, t_zone, t_out_forecast, n_forecast, cfg).sequence[0]


def baseline_step(k: int, cfg: ControlConfig | None = None) -> tuple[float, float]:
    """Fixed dual-setpoint schedule (70/75 degF by default), blind to occupancy and weather."""
    return (cfg or ControlConfig()).baseline_setpoints


@dataclass(frozen=True)
class ControlStep:
    k: int
    ts: float
    t_htg: float
    t_clg: float
    t_mid: float
    t_z: float
    t_out: float
    n: float
    q: float
    e_heat: float
    e_cool: float
    pmv: float
    ppd: float

    @property
    def u(self) -> float:
        return self.t_mid

    @property
    def month(self) -> tuple[int, int]:
        dt = datetime.fromtimestamp(self.ts, tz=timezone.utc)
        return dt.year, dt.month


def mean_ppd(steps: Sequence[ControlStep]) -> float:
    """Mean PPD over occupied steps; over all steps when none is occupied."""
    occ = [s.ppd for s in steps if s.n >= 1]
    pool = occ or [s.ppd for s in steps]
    return float(np.mean(pool)) if pool else float("nan")


@dataclass
class SimulationResult:
    steps: list[ControlStep]
    controller: str

    @property
    def e_heat(self) -> float:
        return float(sum(s.e_heat for s in self.steps))

    @property
    def e_cool(self) -> float:
        return float(sum(s.e_cool for s in self.steps))

    @property
    def e_total(self) -> float:
        return self.e_heat + self.e_cool

    @property
    def mean_ppd(self) -> float:
        return mean_ppd(self.steps)

    def totals(self) -> dict:
        return {"controller": self.controller, "e_heat_kwh": self.e_heat, "e_cool_kwh": self.e_cool,
                "e_total_kwh": self.e_total, "mean_ppd": self.mean_ppd, "n_steps": len(self.steps)}


def _check_coverage(occupancy: Sequence[IntervalSample], weather: WeatherSeries, dt: float) -> None:
    for prev, nxt in zip(occupancy, occupancy[1:]):
        if abs(nxt.start - prev.start - dt) > 1e-6:
            raise ControlError(f"occupancy series has a gap or overlap after {prev.start_iso}")
    if occupancy and (occupancy[0].start < weather.times[0] - dt or occupancy[-1].start > weather.times[-1] + dt):
        raise ControlError("weather series does not cover the simulation horizon")


def simulate(
    occupancy: Sequence[IntervalSample],
    weather: WeatherSeries,
    model: ZoneModel | None = None,
    controller: str = "mpc",
    cfg: ControlConfig | None = None,
    comfort: ComfortParams | None = None,
    true_occupancy: Sequence[IntervalSample] | None = None,
    on_plan: Callable[[int, MPCPlan, tuple[float, float]], None] | None = None,
) -> SimulationResult:
    """Closed-loop run of the baseline schedule or the MPC against the zone model.

    ``occupancy`` is what the controller sees; the plant and the comfort
    accounting use ``true_occupancy`` (defaults to ``occupancy``).
    ``on_plan`` is called with ``(k, plan, applied_pair)`` at every MPC step.
    """
    model = model or ZoneModel()
    cfg = cfg or ControlConfig()
    if controller not in ("baseline", "mpc"):
        raise ControlError(f"unknown controller {controller!r}")
    truth = true_occupancy if true_occupancy is not None else occupancy
    if len(truth) != len(occupancy) or any(a.start != b.start for a, b in zip(truth, occupancy)):
        raise ControlError("true occupancy must share the controller occupancy index")
    _check_coverage(occupancy, weather, cfg.timestep)

    times = [iv.start for iv in occupancy]
    t_out_all = np.array([lookup(weather, t) for t in times])
    n_ctrl = np.array([iv.n for iv in occupancy], dtype=float)
    steps = []
    tz = cfg.t_initial
    for k, iv in enumerate(occupancy):
        if controller == "baseline":
            pair = baseline_step(k, cfg)
        else:
            end = min(k + cfg.horizon, len(occupancy))
            if cfg.forecaster == "persistence":
                n_fc = np.full(end - k, n_ctrl[k])
            else:
                n_fc = n_ctrl[k:end]
            plan = mpc_plan(model, tz, t_out_all[k:end], n_fc, cfg)
            pair = plan.sequence[0]
            if on_plan is not None:
                on_plan(k, plan, pair)
        t_mid = midpoint(*pair)
        q = model.c * (t_mid - tz)
        month = datetime.fromtimestamp(iv.start, tz=timezone.utc).month
        p_mv, p_pd = pmv_ppd(tz, comfort, month)
        n_true = truth[k].n
        steps.append(ControlStep(k, iv.start, pair[0], pair[1], t_mid, tz, float(t_out_all[k]), n_true,
                                 q, cfg.kappa * max(0.0, q), cfg.kappa * max(0.0, -q), p_mv, p_pd))
        tz = predict_zone(model, tz, t_out_all[k], t_mid, n_true)
    return SimulationResult(steps, controller)


def savings(baseline_kwh: float, case_kwh: float) -> float:
    """Percent saved relative to the baseline, rounded half-up to 2 decimals."""
    if not baseline_kwh > 0:
        raise ValueError("baseline energy must be positive")
    base = Decimal(repr(float(baseline_kwh)))
    pct = (base - Decimal(repr(float(case_kwh)))) * 100 / base
    return float(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class MonthlyRow:
    year: int
    month: int
    e_heat: float
    e_cool: float
    mean_ppd: float


def monthly_rollup(steps: Sequence[ControlStep]) -> list[MonthlyRow]:
    groups: dict[tuple[int, int], list[ControlStep]] = {}
    for s in steps:
        groups.setdefault(s.month, []).append(s)
    return [
        MonthlyRow(y, m, float(sum(s.e_heat for s in g)), float(sum(s.e_cool for s in g)), mean_ppd(g))
        for (y, m), g in sorted(groups.items())
    ]


# --------------------------------------------------------------------------- #
# files

STEP_FIELDS = ["k", "ts", "t_htg", "t_clg", "t_mid", "t_z", "t_out", "n", "q", "e_heat", "e_cool", "pmv", "ppd"]


def write_steps(steps: Iterable[ControlStep], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(STEP_FIELDS)
    for s in steps:
        row = asdict(s)
        row["ts"] = format_timestamp(s.ts)
        writer.writerow([row["k"], row["ts"]] + [f"{row[f]:.6f}" for f in STEP_FIELDS[2:]])


def read_steps(stream) -> list[ControlStep]:
    from .ingest import parse_timestamp

    out = []
    for row in csv.DictReader(stream):
        out.append(ControlStep(int(row["k"]), parse_timestamp(row["ts"]),
                               *(float(row[f]) for f in STEP_FIELDS[2:])))
    return out


def summary(result: SimulationResult, baseline: dict | SimulationResult | None = None,
            baseline_name: str = "baseline") -> dict:
    """Annual totals, mean PPD and (optionally) savings versus a named baseline run."""
    out = {
        "controller": result.controller,
        "avg_ppd": round(result.mean_ppd, 4),
        "energy_kwh": {"cooling": round(result.e_cool, 1), "heating": round(result.e_heat, 1),
                       "total": round(result.e_total, 1)},
        "n_steps": len(result.steps),
    }
    if baseline is not None:
        b = baseline.totals() if isinstance(baseline, SimulationResult) else baseline
        out["baseline"] = baseline_name
        out["savings_pct"] = {
            "cooling": savings(b["e_cool_kwh"], result.e_cool) if b["e_cool_kwh"] > 0 else None,
            "heating": savings(b["e_heat_kwh"], result.e_heat) if b["e_heat_kwh"] > 0 else None,
            "total": savings(b["e_total_kwh"], result.e_total) if b["e_total_kwh"] > 0 else None,
        }
    out["totals"] = result.totals()
    return out


def write_summary(data: dict, stream) -> None:
    json.dump(data, stream, indent=2, sort_keys=True)
    stream.write("\n")


# --------------------------------------------------------------------------- #
# configuration file (INI)
#
#   [zone]     a, b, c, d
#   [control]  timestep_s, horizon, heating_min_c|_f, heating_max_c|_f,
#              cooling_min_c|_f, cooling_max_c|_f, baseline_heating_c|_f,
#              baseline_cooling_c|_f, target_c|_f, w_comfort, w_energy,
#              grid_step_f, kappa, t_initial_c|_f, forecaster
#   [comfort]  met, clo_winter, clo_summer, summer_months (comma list), rh, air_speed

def _temp(section, key: str, default: float) -> float:
    if f"{key}_c" in section:
        return section.getfloat(f"{key}_c")
    if f"{key}_f" in section:
        return f_to_c(section.getfloat(f"{key}_f"))
    return default


def load_sim_config(stream) -> tuple[ZoneModel, ControlConfig, ComfortParams]:
    parser = configparser.ConfigParser()
    parser.read_file(stream)
    known = {"zone", "control", "comfort"}
    extra = set(parser.sections()) - known
    if extra:
        raise ControlError(f"unknown config sections: {sorted(extra)}")

    zone = parser["zone"] if parser.has_section("zone") else {}
    zd = ZoneModel()
    model = ZoneModel(*(float(zone.get(k, getattr(zd, k))) for k in "abcd"))

    cd = ControlConfig()
    if parser.has_section("control"):
        sec = parser["control"]
        cfg = ControlConfig(
            timestep=sec.getfloat("timestep_s", cd.timestep),
            horizon=sec.getint("horizon", cd.horizon),
            heating_bounds=(_temp(sec, "heating_min", cd.heating_bounds[0]), _temp(sec, "heating_max", cd.heating_bounds[1])),
            cooling_bounds=(_temp(sec, "cooling_min", cd.cooling_bounds[0]), _temp(sec, "cooling_max", cd.cooling_bounds[1])),
            baseline_setpoints=(_temp(sec, "baseline_heating", cd.baseline_setpoints[0]),
                                _temp(sec, "baseline_cooling", cd.baseline_setpoints[1])),
            target=_temp(sec, "target", cd.target),
            w_comfort=sec.getfloat("w_comfort", cd.w_comfort),
            w_energy=sec.getfloat("w_energy", cd.w_energy),
            grid_step_f=sec.getfloat("grid_step_f", cd.grid_step_f),
            kappa=sec.getfloat("kappa", cd.kappa),
            t_initial=_temp(sec, "t_initial", cd.t_initial),
            forecaster=sec.get("forecaster", cd.forecaster),
        )
    else:
        cfg = cd

    pd = ComfortParams()
    if parser.has_section("comfort"):
        sec = parser["comfort"]
        months = sec.get("summer_months")
        comfort = ComfortParams(
            met=sec.getfloat("met", pd.met),
            clo_winter=sec.getfloat("clo_winter", pd.clo_winter),
            clo_summer=sec.getfloat("clo_summer", pd.clo_summer),
            summer_months=tuple(int(m) for m in months.split(",")) if months else pd.summer_months,
            rh=sec.getfloat("rh", pd.rh),
            air_speed=sec.getfloat("air_speed", pd.air_speed),
        )
    else:
        comfort = pd
    return model, cfg, comfort


def dump_sim_config(model: ZoneModel, cfg: ControlConfig, comfort: ComfortParams, stream) -> None:
    parser = configparser.ConfigParser()
    parser["zone"] = {k: repr(getattr(model, k)) for k in "abcd"}
    parser["control"] = {
        "timestep_s": repr(cfg.timestep), "horizon": str(cfg.horizon),
        "heating_min_c": repr(cfg.heating_bounds[0]), "heating_max_c": repr(cfg.heating_bounds[1]),
        "cooling_min_c": repr(cfg.cooling_bounds[0]), "cooling_max_c": repr(cfg.cooling_bounds[1]),
        "baseline_heating_c": repr(cfg.baseline_setpoints[0]), "baseline_cooling_c": repr(cfg.baseline_setpoints[1]),
        "target_c": repr(cfg.target), "w_comfort": repr(cfg.w_comfort), "w_energy": repr(cfg.w_energy),
        "grid_step_f": repr(cfg.grid_step_f), "kappa": repr(cfg.kappa),
        "t_initial_c": repr(cfg.t_initial), "forecaster": cfg.forecaster,
    }
    parser["comfort"] = {
        "met": repr(comfort.met), "clo_winter": repr(comfort.clo_winter), "clo_summer": repr(comfort.clo_summer),
        "summer_months": ",".join(str(m) for m in comfort.summer_months),
        "rh": repr(comfort.rh), "air_speed": repr(comfort.air_speed),
    }
    parser.write(stream)

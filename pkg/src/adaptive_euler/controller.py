"""Timestep plans from coarse-run indicators."""
from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from .forward import wave_rate

EXPLICIT = "explicit"
IMPLICIT = "implicit"


@dataclass
class TimestepPlan:
    entries: list = field(default_factory=list)  # (dt, kind)

    @property
    def T(self):
        return math.fsum(dt for dt, _ in self.entries)

    @property
    def dts(self):
        return np.array([dt for dt, _ in self.entries])

    @property
    def kinds(self):
        return [k for _, k in self.entries]

    @property
    def times(self):
        """Right end points of the entries."""
        clock = _Clock()
        return np.array([clock.add(dt) for dt, _ in self.entries])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def count(self, kind):
        return sum(1 for _, k in self.entries if k == kind)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("dt,kind\n")
            for dt, k in self.entries:
                fh.write(f"{dt!r},{k}\n")

    @classmethod
    def read(cls, path):
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("dt"):
                    continue
                dt, kind = line.replace(",", " ").split()
                if kind not in (EXPLICIT, IMPLICIT):
                    raise ValueError(f"unknown step kind {kind!r}")
                entries.append((float(dt), kind))
        return cls(entries)


@dataclass
class ControllerConfig:
    tol: float | None = None  # None: 2**-(L_fine - L_coarse) * mean indicator
    cfl_floor: float = 0.8
    cfl_explicit: float = 0.5
    cfl_switch: float = 5.0
    cfl_cap: float = 200.0
    mode: str = "implicit"  # implicit | eximp
    smooth_indicator: bool = False

    def __post_init__(self):
        if not 0 < self.cfl_explicit <= 1 < self.cfl_switch:
            raise ValueError("need 0 < cfl_explicit <= 1 < cfl_switch")
        if not 0 < self.cfl_floor <= self.cfl_cap:
            raise ValueError("need 0 < cfl_floor <= cfl_cap")
        if self.mode not in ("implicit", "eximp"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def from_mapping(cls, values):
        kw = {}
        for key, kind in (("tol", float), ("cfl_floor", float), ("cfl_explicit", float),
                          ("cfl_switch", float), ("cfl_cap", float), ("mode", str)):
            if key in values:
                kw[key] = kind(values[key])
        if "smooth_indicator" in values:
            kw["smooth_indicator"] = str(values["smooth_indicator"]).lower() in ("1", "true", "yes", "on")
        return cls(**kw)


class _Clock:
    """Neumaier-compensated running sum of step sizes."""

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x):
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t
        return self.s + self.c


class RateHistory:
    """Piecewise-constant wave rate ``max (|v.n|+c)/width`` over coarse steps."""

    def __init__(self, t_edges, rates, level_shift=0):
        self.t_edges = np.asarray(t_edges, dtype=float)
        self.rates = np.asarray(rates, dtype=float) * 2.0 ** level_shift
        if self.t_edges.size != self.rates.size + 1:
            raise ValueError("need one rate per interval")
        self._edges = self.t_edges.tolist()
        self._rates = self.rates.tolist()

    def __call__(self, t):
        if np.ndim(t) == 0:
            k = bisect.bisect_right(self._edges, t) - 1
            return self._rates[min(max(k, 0), len(self._rates) - 1)]
        k = np.searchsorted(self.t_edges, t, side="right") - 1
        return self.rates[np.clip(k, 0, self.rates.size - 1)]

    def max_over(self, t0, t1):
        a = max(np.searchsorted(self.t_edges, t0, side="right") - 1, 0)
        b = min(np.searchsorted(self.t_edges, t1, side="left"), self.rates.size)
        return float(self.rates[a:max(b, a + 1)].max())

    @classmethod
    def constant(cls, T, rate):
        return cls([0.0, T], [rate])


def default_tolerance(indicators, L_fine, L_coarse):
    return 2.0 ** -(L_fine - L_coarse) * float(np.mean(indicators))


def _fit_end(entries, T):
    """Replace the last entry so that the compensated sum is exactly ``T``."""
    if not entries:
        return entries
    head = math.fsum(dt for dt, _ in entries[:-1])
    dt_last = T - head
    if dt_last <= 0:
        raise ValueError("plan overshoots the horizon")
    entries[-1] = (dt_last, entries[-1][1])
    return entries


def equidistribute(indicators, dts, tol, rates: RateHistory, config: ControllerConfig | None = None):
    """Steps ``dt = tol / density`` with the density ``eta_m / dt_m`` piecewise
    constant over the coarse steps.

    A step starting at ``t`` obeys ``dt <= tol / density`` on every coarse
    interval it covers, or stops at the edge of the first one that forbids
    it.  Steps are clipped to ``[cfl_floor, cfl_cap] / rate`` with the
    (fine-grid) rate at their start; a vanishing density gives the cap.  The
    last step is fitted to end on ``T``.
    """
    cfg = ControllerConfig() if config is None else config
    eta = np.asarray(indicators, dtype=float)
    dts = np.asarray(dts, dtype=float)
    if eta.shape != dts.shape or eta.size == 0:
        raise ValueError("indicators and steps must be non-empty and of equal length")
    if np.any(eta < 0) or np.any(dts <= 0):
        raise ValueError("indicators must be non-negative and steps positive")
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    tol = float(tol)
    if cfg.smooth_indicator and eta.size >= 3:
        eta = median_filter(eta, size=3, mode="nearest")
    T = math.fsum(dts)
    edges = list(itertools.accumulate(dts.tolist()))
    dens = (eta / dts).tolist()
    last = len(dens) - 1
    entries = []
    clock = _Clock()
    t = 0.0
    while T - t > 1e-13 * T:
        k = min(bisect.bisect_right(edges, t), last)
        r = float(rates(t))
        dt = tol / dens[k] if dens[k] > 0 else math.inf
        dt = min(dt, cfg.cfl_cap / r)
        # do not run into a later interval whose density asks for less
        j = k
        while j < last and edges[j] - t < dt:
            j += 1
            if dens[j] > 0:
                dt = min(dt, max(edges[j - 1] - t, tol / dens[j]))
        dt = max(dt, cfg.cfl_floor / r)
        rest = T - t - dt
        if rest < cfg.cfl_floor / r:
            # no room for another floor-sized step: absorb the remainder
            rest = T - t
            dt = rest if rest * r <= cfg.cfl_cap else 0.5 * rest
        entries.append((dt, IMPLICIT))
        t = clock.add(dt)
    return TimestepPlan(_fit_end(entries, T))


def apply_strategy(plan: TimestepPlan, config: ControllerConfig, rates: RateHistory):
    """Mark entries implicit, or split low-CFL entries into explicit runs."""
    if config.mode == "implicit":
        return TimestepPlan([(dt, IMPLICIT) for dt, _ in plan.entries])
    T = plan.T
    out = []
    clock = _Clock()
    t0 = 0.0
    for dt, _ in plan.entries:
        cfl = dt * float(rates(t0))
        if cfl < config.cfl_switch:
            k = math.ceil(cfl / config.cfl_explicit - 1e-12)
            k = max(k, 1)
            while dt / k * rates.max_over(t0, t0 + dt) > 1.0:
                k += 1
            out.extend([(dt / k, EXPLICIT)] * k)
        else:
            out.append((dt, IMPLICIT))
        t0 = clock.add(dt)
    return TimestepPlan(_fit_end(out, T))


def uniform_plan(T, rate, cfl, kind=IMPLICIT):
    """Constant steps with ``dt * rate <= cfl`` covering ``[0, T]``."""
    if T == 0:
        return TimestepPlan([])
    n = max(1, math.ceil(T * rate / cfl - 1e-9))
    return TimestepPlan(_fit_end([(T / n, kind)] * n, T))


def uniform_plan_for(mesh, field, T, cfl, kind=IMPLICIT, gamma=1.4):
    return uniform_plan(T, wave_rate(mesh, field, gamma), cfl, kind)


def cfl_series(plan: TimestepPlan, rates: RateHistory):
    starts = np.concatenate([[0.0], plan.times[:-1]])
    return plan.dts * rates(starts)

"""Synthetic households built from rectangular on/off appliance profiles."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..errors import ConfigError
from .series import PowerSeries

DAY = 86400.0


@dataclass
class ApplianceProfile:
    """An alternating on/off renewal process with constant power while on.

    Each on (off) duration is ``mean * ((1 - jitter) + jitter * E)`` with
    ``E ~ Exp(1)``, so the mean duration does not depend on ``jitter``.
    """

    name: str
    on_power: float
    on_duration: float
    off_duration: float
    jitter: float = 0.3
    max_power: Optional[float] = None
    on_threshold: Optional[float] = None

    def validate(self) -> None:
        if not (self.on_duration > 0 and self.off_duration > 0):
            raise ConfigError(f"{self.name}: on/off durations must be positive")
        if not self.on_power >= 0:
            raise ConfigError(f"{self.name}: on_power must be >= 0")
        if not 0 <= self.jitter <= 1:
            raise ConfigError(f"{self.name}: jitter must lie in [0, 1]")

    @property
    def duty_cycle(self) -> float:
        return self.on_duration / (self.on_duration + self.off_duration)

    @property
    def mean_power(self) -> float:
        return self.on_power * self.duty_cycle


@dataclass
class SynthSpec:
    appliances: List[ApplianceProfile]
    base_load: float = 80.0
    noise_std: float = 5.0
    period: float = 6.0
    start: float = 1_500_000_000.0
    days: float = 7.0
    seed: int = 1
    houses: int = 1

    def validate(self) -> None:
        if not self.appliances:
            raise ConfigError("synthetic spec lists no appliances")
        for a in self.appliances:
            a.validate()
        if self.base_load < 0 or self.noise_std < 0 or self.period <= 0:
            raise ConfigError("base_load and noise_std must be >= 0, period > 0")
        if self.days <= 0:
            raise ConfigError("days must be positive")
        if self.houses < 1:
            raise ConfigError("houses must be >= 1")


def default_spec() -> SynthSpec:
    """Fridge, dish washer and washing machine with well separated power levels.

    The two program-driven appliances get little jitter so that a week of data
    keeps their duty cycle within a few percent of the expectation.
    """
    return SynthSpec(appliances=[
        ApplianceProfile("fridge", 120.0, 600.0, 1200.0, 0.3, 300.0, 50.0),
        ApplianceProfile("dish_washer", 2000.0, 3600.0, 21600.0, 0.05, 2500.0, 10.0),
        ApplianceProfile("washing_machine", 500.0, 2700.0, 25200.0, 0.05, 2500.0, 20.0),
    ])


def _on_mask(profile: ApplianceProfile, rel_times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    horizon = rel_times[-1] + 1.0 if rel_times.size else 0.0
    on = bool(rng.random() < profile.duty_cycle)
    means = (profile.on_duration, profile.off_duration)

    def draw(is_on, size):
        e = rng.exponential(1.0, size)
        return means[0 if is_on else 1] * ((1 - profile.jitter) + profile.jitter * e)

    # first segment is already partly elapsed
    bounds = [0.0, float(draw(on, 1)[0] * rng.random())]
    state = on
    while bounds[-1] < horizon:
        chunk = 256
        ons = draw(True, chunk)
        offs = draw(False, chunk)
        seq = np.empty(2 * chunk)
        # segments after the first alternate starting from the opposite state
        if state:
            seq[0::2], seq[1::2] = offs, ons
        else:
            seq[0::2], seq[1::2] = ons, offs
        bounds.extend((bounds[-1] + np.cumsum(seq)).tolist())
    seg = np.searchsorted(np.asarray(bounds), rel_times, side="right") - 1
    return (seg % 2 == 0) == on


def synth_generate(spec: SynthSpec, seed: int, duration: float) -> Dict[str, PowerSeries]:
    """Generate mains plus one channel per appliance on the ``spec.period`` grid.

    Returns a dict keyed by ``"mains"`` and the appliance names.
    """
    spec.validate()
    if duration <= 0:
        raise ConfigError("duration must be positive")
    n = int(duration // spec.period)
    rel = spec.period * np.arange(n, dtype=np.float64)
    t = spec.start + rel
    children = np.random.SeedSequence(seed).spawn(len(spec.appliances) + 1)
    out = {}
    total = np.full(n, float(spec.base_load))
    for prof, ss in zip(spec.appliances, children[1:]):
        power = np.where(_on_mask(prof, rel, np.random.default_rng(ss)), prof.on_power, 0.0)
        total += power
        out[prof.name] = PowerSeries(prof.name, t, power, spec.period)
    if spec.noise_std > 0:
        total += np.random.default_rng(children[0]).normal(0.0, spec.noise_std, n)
    mains = PowerSeries("mains", t, np.maximum(total, 0.0), spec.period)
    return {"mains": mains, **out}


def load_synth_spec(path) -> SynthSpec:
    """Read a synthetic household spec (INI: [household], [generate], [appliance.NAME])."""
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise ConfigError(f"cannot read synthetic spec {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return spec_from_parser(cp, str(path))


def spec_from_parser(cp: configparser.ConfigParser, where: str = "<spec>") -> SynthSpec:
    try:
        hh = cp["household"] if cp.has_section("household") else {}
        gen = cp["generate"] if cp.has_section("generate") else {}
        apps = []
        for sec in cp.sections():
            if not sec.startswith("appliance."):
                continue
            s = cp[sec]
            apps.append(ApplianceProfile(
                name=sec.split(".", 1)[1],
                on_power=float(s["on_power"]),
                on_duration=float(s["on_duration"]),
                off_duration=float(s["off_duration"]),
                jitter=float(s.get("jitter", 0.3)),
                max_power=float(s["max_power"]) if "max_power" in s else None,
                on_threshold=float(s["on_threshold"]) if "on_threshold" in s else None,
            ))
        spec = SynthSpec(
            appliances=apps,
            base_load=float(hh.get("base_load", 80.0)),
            noise_std=float(hh.get("noise_std", 5.0)),
            period=float(hh.get("period", 6.0)),
            start=float(hh.get("start", 1_500_000_000.0)),
            days=float(gen.get("days", 7.0)),
            seed=int(gen.get("seed", 1)),
            houses=int(gen.get("houses", 1)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{where}: bad synthetic spec entry: {exc}") from None
    spec.validate()
    return spec


def dump_synth_spec(spec: SynthSpec) -> str:
    lines = ["[household]", f"base_load = {spec.base_load:g}", f"noise_std = {spec.noise_std:g}",
             f"period = {spec.period:g}", f"start = {spec.start:.0f}", "",
             "[generate]", f"days = {spec.days:g}", f"seed = {spec.seed}", f"houses = {spec.houses}", ""]
    for a in spec.appliances:
        lines += [f"[appliance.{a.name}]", f"on_power = {a.on_power:g}", f"on_duration = {a.on_duration:g}",
                  f"off_duration = {a.off_duration:g}", f"jitter = {a.jitter:g}"]
        if a.max_power is not None:
            lines.append(f"max_power = {a.max_power:g}")
        if a.on_threshold is not None:
            lines.append(f"on_threshold = {a.on_threshold:g}")
        lines.append("")
    return "\n".join(lines)


def house_seed(seed: int, house_index: int) -> int:
    """Seed for the i-th (0-based) generated house of a run."""
    return int(seed) + 1000 * int(house_index)

"""Material constants, EM driving force, stress diffusivity, temperature
profiles and the magnitude-scaling scheme used for training."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np


class NonpositiveTemperature(ValueError):
    pass


class OutOfTable(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    """Copper interconnect parameters (SI units, activation energy in eV)."""

    k_boltzmann: float = 1.38e-23
    e_charge: float = 1.6e-19
    z_eff: float = 10.0
    e_activation: float = 1.1
    bulk_modulus_B: float = 1.0e11
    d0_self_diffusion: float = 5.2e-5
    resistivity: float = 2.2e-8
    atomic_volume: float = 8.78e-30
    sigma_crit: float = 4.0e8
    # only used for flux reporting; roughly 1/atomic_volume for Cu
    c_v_atoms_per_m3: float = 1.139e29

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"material parameter {name} must be positive, got {value}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "MaterialParams":
        return cls(**(data or {}))


@dataclass(frozen=True)
class TemperatureModel:
    kind: str = "constant"
    T0: float = 350.0
    amplitude: float = 0.0
    angular_rate: float = 0.0
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal", "tabulated"):
            raise ValueError(f"unknown temperature kind {self.kind!r}")
        if self.kind == "tabulated":
            if not self.table or len(self.table) < 2:
                raise ValueError("tabulated temperature needs at least two (t, T) rows")
            ts = [row[0] for row in self.table]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("temperature table times must be strictly increasing")
            if any(row[1] <= 0 for row in self.table):
                raise NonpositiveTemperature("tabulated temperature must be positive")
        elif self.kind == "sinusoidal" and self.T0 - abs(self.amplitude) <= 0:
            raise NonpositiveTemperature("sinusoidal profile dips below 0 K")
        elif self.T0 <= 0:
            raise NonpositiveTemperature(f"T0 must be positive, got {self.T0}")

    @classmethod
    def constant(cls, T0: float = 350.0) -> "TemperatureModel":
        return cls(kind="constant", T0=T0)

    @classmethod
    def sinusoidal(cls, T0: float = 350.0, amplitude: float = 30.0,
                   angular_rate: float = 4e-8 * math.pi) -> "TemperatureModel":
        return cls(kind="sinusoidal", T0=T0, amplitude=amplitude, angular_rate=angular_rate)

    @classmethod
    def from_dict(cls, data: dict | None) -> "TemperatureModel":
        data = dict(data or {})
        if data.get("table") is not None:
            data["table"] = tuple((float(a), float(b)) for a, b in data["table"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["table"] is not None:
            out["table"] = [list(row) for row in out["table"]]
        return out


def temperature(t, model: TemperatureModel):
    """Temperature in K at time(s) ``t`` (seconds, t >= 0)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("temperature queried at negative time")
    if model.kind == "constant":
        out = np.full_like(t_arr, model.T0)
    elif model.kind == "sinusoidal":
        out = model.T0 + model.amplitude * np.sin(model.angular_rate * t_arr)
    else:
        ts = np.array([row[0] for row in model.table])
        Ts = np.array([row[1] for row in model.table])
        if np.any(t_arr < ts[0]) or np.any(t_arr > ts[-1]):
            raise OutOfTable(f"t outside tabulated range [{ts[0]}, {ts[-1]}]")
        out = np.interp(t_arr, ts, Ts)
    return float(out) if np.ndim(t) == 0 else out


def em_driving_force(j, params: MaterialParams):
    """G = Z* e rho j / Omega in Pa/m; the sign follows j."""
    coef = params.z_eff * params.e_charge * params.resistivity / params.atomic_volume
    return coef * (np.asarray(j, dtype=float) if np.ndim(j) else float(j))


def diffusivity(T, params: MaterialParams):
    """Stress diffusivity kappa = D0 exp(-Ea/kT) B Omega / (kT), m^2/s."""
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr <= 0):
        raise NonpositiveTemperature(f"temperature must be positive, got {T}")
    kT = params.k_boltzmann * T_arr
    d_a = params.d0_self_diffusion * np.exp(-params.e_activation * params.e_charge / kT)
    kappa = d_a * params.bulk_modulus_B * params.atomic_volume / kT
    return float(kappa) if np.ndim(T) == 0 else kappa


@dataclass(frozen=True)
class ScalingFactors:
    """Magnitude normalisation.

    Scaled quantities are ``x / omega_x``, ``t * omega_t`` and
    ``sigma * omega_sigma``; with the defaults a 10 um wire stressed for
    1e8 s maps to lengths ~1, times ~10 and stresses ~10.
    """

    omega_x: float = 1e-5
    omega_t: float = 1e-7
    omega_sigma: float = 1e-7

    def __post_init__(self):
        for v in (self.omega_x, self.omega_t, self.omega_sigma):
            if not v > 0:
                raise ValueError("scaling factors must be strictly positive")

    @classmethod
    def identity(cls) -> "ScalingFactors":
        return cls(1.0, 1.0, 1.0)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ScalingFactors":
        return cls(**(data or {}))

    def to_dict(self) -> dict:
        return asdict(self)

    def length(self, x):
        return x / self.omega_x

    def time(self, t):
        return t * self.omega_t

    def stress(self, sigma):
        return sigma * self.omega_sigma

    def driving_force(self, G):
        # G = -d(sigma)/dx at equilibrium, so it scales like sigma/x
        return G * self.omega_sigma * self.omega_x

    def kappa(self, kappa):
        return kappa / (self.omega_t * self.omega_x ** 2)

    def unscale_time(self, t_s):
        return t_s / self.omega_t

    def unscale_length(self, x_s):
        return x_s * self.omega_x


def unscale_stress(sigma_scaled, factors: ScalingFactors):
    return sigma_scaled / factors.omega_sigma


def scale_problem(tree, params: MaterialParams, factors: ScalingFactors,
                  temperature_K: float = 350.0):
    """Node and segment contexts with lengths, driving forces and the
    diffusivity expressed in scaled units."""
    from .geometry import node_contexts

    return node_contexts(tree, params, temperature_K, factors)

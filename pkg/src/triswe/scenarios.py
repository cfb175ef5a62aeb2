"""Run configuration and the benchmark scenario presets.

Each preset wires a bottom topography, initial water level and velocity,
boundary conditions and the solver constants used for that test.  A config
file is plain JSON with exactly the RunConfig field names; unknown keys are
rejected so typos fail fast.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .wlr import INDICATOR_POLICIES, WLR_LEVELED


class ConfigError(Exception):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Everything a run needs; JSON keys match the field names exactly."""

    scenario: str = "ex1"
    gravity: float = 1.0
    domain: tuple = (0.0, 2.0, 0.0, 1.0)
    nx: int = 25
    ny: int = 25
    max_level: int = 1
    sigma_tol: float = 0.01
    c_coarsen: float = 0.1
    sigma_flux: float = 1e-6
    eps: float = 1e-4
    tau: float | None = None          # None: max cell area squared, per mesh
    kappa_dry: float | None = None    # None: 1e-12 * max(1, max |B|)
    manning_n: float = 0.0
    t_end: float = 0.07
    output_interval: float = 0.0      # 0: only the first and final frames
    boundary: dict = field(default_factory=lambda: {
        "left": "extrapolate", "right": "extrapolate",
        "bottom": "extrapolate", "top": "extrapolate"})
    indicator: str = WLR_LEVELED
    grad_threshold: float = 5e-4
    threads: int = 1
    out_dir: str = "out"
    perturbation: float | None = None  # scenario-specific override
    dt_max: float = 1e-3
    mesh_file: str | None = None

    def validate(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("nx, ny must be positive")
        if not 0.0 < self.sigma_tol < 1.0:
            raise ConfigError("sigma_tol must be in (0, 1)")
        if self.gravity <= 0 or self.t_end <= 0:
            raise ConfigError("gravity and t_end must be positive")
        if self.max_level < 0:
            raise ConfigError("max_level must be >= 0")
        if self.indicator not in INDICATOR_POLICIES:
            raise ConfigError(f"unknown indicator {self.indicator!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("degenerate domain")
        for side in ("left", "right", "bottom", "top"):
            if side not in self.boundary:
                raise ConfigError(f"boundary side {side!r} missing")
        return self

    @classmethod
    def from_dict(cls, data):
        fields = set(cls.__dataclass_fields__)
        unknown = set(data) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if isinstance(cfg.domain, list):
            cfg.domain = tuple(cfg.domain)
        return cfg.validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)


@dataclass
class Scenario:
    """Bottom, initial data and equilibrium level of one benchmark."""

    name: str
    bottom: callable            # B(x, y)
    init_level: callable        # target water level, -inf marks dry start
    init_u: callable
    init_v: callable
    w_eq: float
    defaults: dict


def _zero(x, y):
    return np.zeros_like(x)


def scenario(name, perturbation=None):
    """Preset by id; raises on an unknown one.

    ``perturbation`` overrides the preset perturbation height where the
    scenario has one (the flat-surface tests).
    """
    if name == "ex1":
        def bottom(x, y):
            return 0.5 * np.exp(-25 * (x - 1.0) ** 2 - 50 * (y - 0.5) ** 2)

        return Scenario(
            name, bottom,
            init_level=lambda x, y: np.ones_like(x),
            init_u=lambda x, y: np.full_like(x, 0.3),
            init_v=_zero, w_eq=1.0,
            defaults=dict(gravity=1.0, domain=(0.0, 2.0, 0.0, 1.0),
                          sigma_tol=0.01, eps=1e-4, manning_n=0.0,
                          t_end=0.07,
                          boundary={"left": "extrapolate", "right": "extrapolate",
                                    "bottom": "extrapolate", "top": "extrapolate"}))

    if name in ("ex2_tiny", "ex2_perturb"):
        eps_pert = perturbation
        if eps_pert is None:
            eps_pert = 1e-14 if name == "ex2_tiny" else 1e-2

        def bottom(x, y):
            return 0.8 * np.exp(-5 * (x - 0.9) ** 2 - 50 * (y - 0.5) ** 2)

        def init_level(x, y):
            return np.where((x > 0.05) & (x < 0.15), 1.0 + eps_pert, 1.0)

        return Scenario(
            name, bottom, init_level, _zero, _zero, w_eq=1.0,
            defaults=dict(gravity=1.0, domain=(0.0, 2.0, 0.0, 1.0),
                          sigma_tol=0.1, eps=1e-4, manning_n=0.0,
                          t_end=0.1 if name == "ex2_tiny" else 1.8,
                          boundary={"left": "extrapolate", "right": "extrapolate",
                                    "bottom": "periodic", "top": "periodic"}))

    if name == "ex2_island":
        eps_pert = 1e-2 if perturbation is None else perturbation

        def bottom(x, y):
            r = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
            return np.where(r <= 0.1, 1.1,
                            np.where(r <= 0.2, 11.0 * (0.2 - r), 0.0))

        def init_level(x, y):
            # outside the perturbed band the lake sits at 1; the island pokes
            # through and those cells start dry
            return np.where((x > 0.1) & (x < 0.2), 1.0 + eps_pert, 1.0)

        return Scenario(
            name, bottom, init_level, _zero, _zero, w_eq=1.0,
            defaults=dict(gravity=9.8, domain=(0.0, 1.0, 0.0, 1.0),
                          sigma_tol=0.01, eps=1e-2, manning_n=0.0,
                          t_end=0.2,
                          boundary={"left": "neumann", "right": "neumann",
                                    "bottom": "neumann", "top": "neumann"}))

    if name == "ex3_dambreak":
        def bottom(x, y):
            return np.maximum.reduce([
                0.5 * np.exp(-8 * (x - 2.0) ** 2 - 10 * (y - 3.0) ** 2),
                0.2 * np.exp(-3 * (x - 4.0) ** 2 - 4 * (y - 4.8) ** 2),
                0.2 * np.exp(-3 * (x - 4.0) ** 2 - 4 * (y - 1.2) ** 2),
            ])

        def init_level(x, y):
            return np.where(x < 1.0, 0.5, -np.inf)  # dry bed past the dam

        return Scenario(
            name, bottom, init_level, _zero, _zero, w_eq=0.5,
            defaults=dict(gravity=9.8, domain=(0.0, 6.0, 0.0, 6.0),
                          sigma_tol=0.01, eps=1e-4, manning_n=0.01,
                          t_end=4.0,
                          boundary={"left": "wall", "right": "neumann",
                                    "bottom": "wall", "top": "wall"}))

    raise ConfigError(f"unknown scenario id {name!r}")


def make_config(name, **overrides):
    """RunConfig for a scenario preset, with explicit overrides on top."""
    sc = scenario(name, perturbation=overrides.get("perturbation"))
    data = dict(scenario=name)
    data.update(sc.defaults)
    data.update(overrides)
    return RunConfig.from_dict(data)

"""Scenario files: the geometry of a corner plus the settings of its checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .expr import ExprError
from .geometry import GeometryError, MetricChart
from .numerics import named_rng
from .surfaces import GraphHypersurface, ProperSubdomain
from .varifold import DiscreteVarifold, VarifoldError, disk_mesh, segment_varifold

SCHEMA_VERSION = 1
BUNDLED = ("flat_halfspace", "cap_corner", "conformal_cap")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    tau_orth: float = 1e-3
    tau_conv: float = 1e-8
    tau_neg: float = 1e-8


@dataclass(frozen=True)
class SamplingConfig:
    lemma33_samples: int = 100
    lemma33_radius: float = 0.15
    foliation_samples: int = 40
    boundary_samples: int = 9


@dataclass(frozen=True)
class GeneratedVarifold:
    kind: str  # "segment" or "half_disk"
    radius: float = 0.1
    bend: float = 0.0
    resolution: int = 12
    weight: float = 1.0


@dataclass
class Scenario:
    name: str
    chart: MetricChart
    surface: GraphHypersurface
    p: np.ndarray
    m: tuple[int, ...]
    epsilon: tuple[float, ...]
    delta: float | None
    foliation_fd_step: float
    tolerances: Tolerances
    sampling: SamplingConfig
    generated: tuple[GeneratedVarifold, ...]
    explicit: tuple[DiscreteVarifold, ...]
    seed: int
    source: dict = field(repr=False, default_factory=dict)

    @property
    def domain(self) -> ProperSubdomain:
        return ProperSubdomain(self.chart, self.surface, self.m[0])

    def rng(self, stream: str):
        return named_rng(self.seed, stream)

    def with_overrides(self, **kw) -> "Scenario":
        src = json.loads(json.dumps(self.source))
        for key, val in kw.items():
            if val is None:
                continue
            if key == "seed":
                src["seed"] = int(val)
            elif key == "epsilon":
                src["epsilon"] = list(val)
            elif key == "foliation_fd_step":
                src.setdefault("foliation", {})["fd_step"] = float(val)
            elif key == "resolution":
                for v in src.get("varifolds", {}).get("generate", []):
                    v["resolution"] = int(val)
            else:
                raise KeyError(key)
        return from_dict(src)

    # -- generated varifolds --------------------------------------------------

    def varifolds(self, m: int) -> list[tuple[str, DiscreteVarifold]]:
        """Touching varifolds of dimension m: graph patches over base half-disks at p."""
        out = []
        S = self.surface
        n = S.n
        for spec in self.generated:
            dim = 1 if spec.kind == "segment" else 2
            if dim != m or dim > n:
                continue
            if dim == 1:
                t = np.linspace(0, spec.radius, 4 * spec.resolution + 1)
                y = np.zeros((len(t), n))
                y[:, 0] = t
                pts = S.embed(y, S.orientation * spec.bend * t**2)
                V = segment_varifold(self.chart, None, None, weight=spec.weight, points=pts)
            else:
                p2, tris = disk_mesh(spec.radius, spec.resolution, 4 * spec.resolution, half=True)
                y = np.zeros((len(p2), n))
                y[:, :2] = p2
                pts = S.embed(y, S.orientation * spec.bend * np.sum(p2 * p2, axis=1))
                V = DiscreteVarifold(self.chart, 2, pts[tris], spec.weight)
            out.append((f"{spec.kind}_r{spec.radius:g}_c{spec.bend:g}", V))
        out += [(f"explicit_{i}", V) for i, V in enumerate(self.explicit) if V.m == m]
        return out


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}: missing '{key}'")
    return d[key]


def _num(v, where: str, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioError(f"{where}: expected a finite number")
    if positive and v <= 0:
        raise ScenarioError(f"{where}: must be positive")
    return float(v)


def from_dict(src: dict) -> Scenario:
    if not isinstance(src, dict):
        raise ScenarioError("scenario must be a JSON object")
    version = src.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version}")
    name = str(_req(src, "name", "scenario"))
    c = _req(src, "chart", "scenario")
    dim = int(_req(c, "dim", "chart"))
    try:
        chart = MetricChart.from_expressions(
            dim,
            _req(c, "lo", "chart"),
            _req(c, "hi", "chart"),
            _req(c, "metric", "chart"),
            bool(c.get("half_space", True)),
            _num(c.get("fd_step", 1e-5), "chart.fd_step", True),
            _num(c.get("halo", 0.05), "chart.halo", True),
        )
        s = _req(src, "surface", "scenario")
        surface = GraphHypersurface(
            chart,
            str(_req(s, "f", "surface")),
            _num(_req(s, "r0", "surface"), "surface.r0", True),
            int(s.get("orientation", 1)),
            s.get("height_index"),
            _num(s.get("fd_step", 1e-3), "surface.fd_step", True),
        )
    except ExprError as exc:
        raise ScenarioError(f"expression error: {exc}") from exc
    except GeometryError as exc:
        raise ScenarioError(str(exc)) from exc

    p = np.asarray(src.get("p", [0.0] * dim), dtype=float)
    if p.shape != (dim,):
        raise ScenarioError("p must have length dim")
    if chart.half_space and abs(p[0]) > 1e-8:
        raise ScenarioError("p must lie on {x1 = 0}")
    if abs(surface.leaf_value(p)) > 1e-8:
        raise ScenarioError("p must lie on the surface")

    ms = src.get("m", [1])
    ms = tuple(int(v) for v in (ms if isinstance(ms, list) else [ms]))
    if not ms or any(not 1 <= v <= surface.n for v in ms):
        raise ScenarioError(f"m values must lie in 1..{surface.n}")
    eps = src.get("epsilon", [0.05])
    eps = tuple(_num(v, "epsilon", True) for v in (eps if isinstance(eps, list) else [eps]))
    if not eps:
        raise ScenarioError("epsilon list is empty")
    fol = src.get("foliation", {})
    delta = fol.get("delta")
    delta = None if delta is None else _num(delta, "foliation.delta", True)
    tol = Tolerances(**{k: _num(v, f"tolerances.{k}", True) for k, v in src.get("tolerances", {}).items()})
    samp = src.get("sampling", {})
    sampling = SamplingConfig(
        int(samp.get("lemma33_samples", 100)),
        _num(samp.get("lemma33_radius", 0.15), "sampling.lemma33_radius", True),
        int(samp.get("foliation_samples", 40)),
        int(samp.get("boundary_samples", 9)),
    )
    var = src.get("varifolds", {})
    try:
        gen = tuple(GeneratedVarifold(**g) for g in var.get("generate", []))
    except TypeError as exc:
        raise ScenarioError(f"varifolds.generate: {exc}") from exc
    for g in gen:
        if g.kind not in ("segment", "half_disk"):
            raise ScenarioError(f"unknown varifold kind '{g.kind}'")
    try:
        explicit = tuple(
            DiscreteVarifold(chart, int(v["m"]), np.asarray(v["simplices"], float), np.asarray(v.get("weights", 1.0), float))
            for v in var.get("explicit", [])
        )
    except (KeyError, VarifoldError, ValueError) as exc:
        raise ScenarioError(f"varifolds.explicit: {exc}") from exc
    seed = int(src.get("seed", 0))
    return Scenario(
        name, chart, surface, p, ms, eps, delta,
        _num(fol.get("fd_step", 5e-3), "foliation.fd_step", True),
        tol, sampling, gen, explicit, seed, src,
    )


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        src = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at offset {exc.pos}") from exc
    return from_dict(src)


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ScenarioError(f"unknown bundled scenario '{name}'")
    return Path(str(resources.files("fbmax") / "scenarios" / f"{name}.json"))


def bundled(name: str) -> Scenario:
    return load(bundled_path(name))


def resolve(spec: str) -> Path:
    """A path, or the name of a bundled scenario."""
    return bundled_path(spec) if spec in BUNDLED and not Path(spec).exists() else Path(spec)

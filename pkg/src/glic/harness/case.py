"""YAML case files: schema, defaults and validation.

A case describes a rectangular global grid, refined patches over groups of
global elements, boundary conditions and loads chosen by geometric node
selectors, and every coupling setting. Unknown keys are rejected so that
typos never silently fall back to defaults.
"""

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from glic.coupling.controls import (
    AcceleratorConfig,
    CouplingControls,
    IncrementationPolicy,
    InexactControl,
)
from glic.coupling.engine import STRATEGIES
from glic.errors import CaseValidationError, GlicError
from glic.fem.material import HardeningCurve, Material
from glic.fem.model import NewtonControls

COMPONENTS = {"x": 0, "y": 1}

_TOP_KEYS = {
    "name", "description", "materials", "global", "patches", "boundary_conditions",
    "loads", "steps", "schedule", "coupling", "accelerator", "inexact",
    "incrementation", "newton", "output",
}
_MATERIAL_KEYS = {"youngs_modulus", "poisson_ratio", "hardening"}
_GLOBAL_KEYS = {"origin", "size", "elements", "material", "thickness"}
_PATCH_KEYS = {"name", "region", "refinement", "material", "hole"}
_HOLE_KEYS = {"center", "radius"}
_BC_KEYS = {"nodes", "component", "value"}
_LOAD_KEYS = {"nodes", "component", "force"}
_SELECTOR_KEYS = {"x", "y", "box"}
_COUPLING_KEYS = {
    "strategy", "abs_tol", "rel_inc_tol", "rel_step_tol", "max_gl_iterations",
    "divergence_factor",
}
_ACCELERATOR_KEYS = {"kind", "omega", "max_columns", "max_rank", "drop_tolerance", "history"}
_INEXACT_KEYS = {"alpha", "mode"}
_POLICY_KEYS = {
    "initial_fraction", "max_fraction", "cutback_factor", "growth_factor",
    "fast_iteration_threshold", "max_cutbacks",
}
_NEWTON_KEYS = {
    "residual_ratio_tol", "correction_ratio_tol", "max_iterations",
    "relaxed_residual_ratio_tol", "relaxed_correction_ratio_tol",
}
_OUTPUT_KEYS = {"directory"}


@dataclass(frozen=True)
class NodeSelector:
    """Nodes on a vertical line, a horizontal line, or inside a closed box."""

    x: float = None
    y: float = None
    box: tuple = None

    def select(self, nodes, tol=1e-9):
        nodes = np.asarray(nodes)
        mask = np.ones(len(nodes), dtype=bool)
        if self.x is not None:
            mask &= np.abs(nodes[:, 0] - self.x) <= tol
        if self.y is not None:
            mask &= np.abs(nodes[:, 1] - self.y) <= tol
        if self.box is not None:
            x0, x1, y0, y1 = self.box
            mask &= (nodes[:, 0] >= x0 - tol) & (nodes[:, 0] <= x1 + tol)
            mask &= (nodes[:, 1] >= y0 - tol) & (nodes[:, 1] <= y1 + tol)
        return np.nonzero(mask)[0]

    def describe(self):
        parts = []
        if self.x is not None:
            parts.append(f"x={self.x:g}")
        if self.y is not None:
            parts.append(f"y={self.y:g}")
        if self.box is not None:
            parts.append("box=" + ",".join(f"{v:g}" for v in self.box))
        return " ".join(parts)


@dataclass(frozen=True)
class BoundarySpec:
    nodes: NodeSelector
    component: int
    value: float


@dataclass(frozen=True)
class LoadSpec:
    nodes: NodeSelector
    component: int
    force: float


@dataclass(frozen=True)
class HoleSpec:
    center: tuple
    radius: float


@dataclass(frozen=True)
class PatchSpec:
    name: str
    region: tuple
    refinement: int
    material: str
    hole: HoleSpec = None


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    size: tuple
    elements: tuple
    material: str
    thickness: float = 1.0

    @property
    def spacing(self):
        return (self.size[0] / self.elements[0], self.size[1] / self.elements[1])


@dataclass(frozen=True)
class Case:
    """Validated case description; see :func:`parse_case` for the schema."""

    name: str
    grid: GridSpec
    materials: dict
    patches: tuple
    boundary_conditions: tuple
    loads: tuple = ()
    steps: int = 1
    schedule: tuple = None
    strategy: str = "explicit_subdomain0"
    controls: CouplingControls = field(default_factory=CouplingControls)
    policy: IncrementationPolicy = field(default_factory=IncrementationPolicy)
    newton: NewtonControls = field(default_factory=NewtonControls)
    description: str = ""
    output_directory: str = None
    source: str = None

    def amplitude(self, t):
        """Load amplitude at load time ``t`` (piecewise linear over steps)."""
        knots = np.arange(self.steps + 1, dtype=float)
        return float(np.interp(t, knots, self.schedule))

    def with_accelerator(self, kind=None, omega=None):
        acc = self.controls.accelerator
        changes = {}
        if kind is not None:
            changes["kind"] = kind
        if omega is not None:
            changes["omega"] = float(omega)
        return replace(self, controls=replace(self.controls, accelerator=replace(acc, **changes)))

    def with_inexact(self, alpha, mode="previous_residual"):
        inexact = None if alpha is None else InexactControl(float(alpha), mode)
        return replace(self, controls=replace(self.controls, inexact=inexact))

    def with_strategy(self, strategy):
        if strategy not in STRATEGIES:
            raise CaseValidationError(f"unknown strategy {strategy!r}")
        return replace(self, strategy=strategy)


# ------------------------------------------------------------------ parsing
def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise CaseValidationError(f"{where}: expected a mapping")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise CaseValidationError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require(data, key, where):
    if key not in data:
        raise CaseValidationError(f"{where}: missing required key {key!r}")
    return data[key]


def _floats(value, n, where):
    try:
        arr = [float(v) for v in value]
    except (TypeError, ValueError):
        raise CaseValidationError(f"{where}: expected {n} numbers") from None
    if len(arr) != n:
        raise CaseValidationError(f"{where}: expected {n} numbers, got {len(arr)}")
    return tuple(arr)


def _component(value, where):
    if value not in COMPONENTS:
        raise CaseValidationError(f"{where}: component must be 'x' or 'y'")
    return COMPONENTS[value]


def _selector(data, where):
    _check_keys(data, _SELECTOR_KEYS, where)
    if not data:
        raise CaseValidationError(f"{where}: empty node selector")
    box = _floats(data["box"], 4, f"{where}.box") if "box" in data else None
    x = float(data["x"]) if "x" in data else None
    y = float(data["y"]) if "y" in data else None
    return NodeSelector(x, y, box)


def _build(cls, data, keys, where):
    """Instantiate a controls dataclass, turning its errors into case errors."""
    data = data or {}
    _check_keys(data, keys, where)
    try:
        return cls(**data)
    except (GlicError, TypeError, ValueError) as exc:
        raise CaseValidationError(f"{where}: {exc}") from None


def _history(value, where):
    if value == "clear":
        return "clear"
    if isinstance(value, dict) and set(value) == {"retain"}:
        return ("retain", int(value["retain"]))
    raise CaseValidationError(f"{where}: history must be 'clear' or {{retain: k}}")


def parse_case(data, source=None):
    """Validate a case mapping (as loaded from YAML) and return a :class:`Case`."""
    _check_keys(data, _TOP_KEYS, "case")
    name = str(data.get("name") or (Path(source).stem if source else "case"))

    materials = {}
    for key, spec in (_require(data, "materials", "case") or {}).items():
        where = f"materials.{key}"
        _check_keys(spec, _MATERIAL_KEYS, where)
        try:
            curve = HardeningCurve(spec["hardening"]) if spec.get("hardening") else None
            materials[key] = Material(
                float(_require(spec, "youngs_modulus", where)),
                float(_require(spec, "poisson_ratio", where)),
                curve,
            )
        except GlicError as exc:
            raise CaseValidationError(f"{where}: {exc}") from None

    g = _require(data, "global", "case")
    _check_keys(g, _GLOBAL_KEYS, "global")
    elements = tuple(int(v) for v in _floats(_require(g, "elements", "global"), 2, "global.elements"))
    grid = GridSpec(
        origin=_floats(g.get("origin", (0.0, 0.0)), 2, "global.origin"),
        size=_floats(_require(g, "size", "global"), 2, "global.size"),
        elements=elements,
        material=str(_require(g, "material", "global")),
        thickness=float(g.get("thickness", 1.0)),
    )
    if min(grid.size) <= 0 or min(grid.elements) < 1 or grid.thickness <= 0:
        raise CaseValidationError("global: size, element counts and thickness must be positive")

    patches = []
    for i, p in enumerate(_require(data, "patches", "case") or []):
        where = f"patches[{i}]"
        _check_keys(p, _PATCH_KEYS, where)
        hole = None
        if p.get("hole") is not None:
            _check_keys(p["hole"], _HOLE_KEYS, f"{where}.hole")
            hole = HoleSpec(
                _floats(_require(p["hole"], "center", f"{where}.hole"), 2, f"{where}.hole.center"),
                float(_require(p["hole"], "radius", f"{where}.hole")),
            )
            if hole.radius <= 0:
                raise CaseValidationError(f"{where}.hole: radius must be positive")
        ref = p.get("refinement", 1)
        if int(ref) != ref or ref < 1:
            raise CaseValidationError(f"{where}: refinement must be a positive integer")
        patches.append(PatchSpec(
            name=str(p.get("name", f"patch{i + 1}")),
            region=_floats(_require(p, "region", where), 4, f"{where}.region"),
            refinement=int(ref),
            material=str(_require(p, "material", where)),
            hole=hole,
        ))
    if not patches:
        raise CaseValidationError("case: at least one patch is required")

    bcs = []
    for i, b in enumerate(data.get("boundary_conditions") or []):
        where = f"boundary_conditions[{i}]"
        _check_keys(b, _BC_KEYS, where)
        bcs.append(BoundarySpec(
            _selector(_require(b, "nodes", where), f"{where}.nodes"),
            _component(_require(b, "component", where), where),
            float(b.get("value", 0.0)),
        ))
    loads = []
    for i, ld in enumerate(data.get("loads") or []):
        where = f"loads[{i}]"
        _check_keys(ld, _LOAD_KEYS, where)
        loads.append(LoadSpec(
            _selector(_require(ld, "nodes", where), f"{where}.nodes"),
            _component(_require(ld, "component", where), where),
            float(_require(ld, "force", where)),
        ))

    for ref_name in [grid.material] + [p.material for p in patches]:
        if ref_name not in materials:
            raise CaseValidationError(f"unknown material {ref_name!r}")

    steps = int(data.get("steps", 1))
    if steps < 1:
        raise CaseValidationError("steps must be at least 1")
    schedule = data.get("schedule")
    if schedule is None:
        schedule = tuple(np.arange(steps + 1) / steps)
    else:
        schedule = _floats(schedule, steps + 1, "schedule")

    coupling = dict(data.get("coupling") or {})
    _check_keys(coupling, _COUPLING_KEYS, "coupling")
    strategy = coupling.pop("strategy", "explicit_subdomain0")
    if strategy not in STRATEGIES:
        raise CaseValidationError(f"coupling.strategy must be one of {', '.join(STRATEGIES)}")

    acc = dict(data.get("accelerator") or {})
    if "history" in acc:
        acc["history"] = _history(acc["history"], "accelerator")
    accelerator = _build(AcceleratorConfig, acc, _ACCELERATOR_KEYS, "accelerator")
    try:
        accelerator.build()
    except GlicError as exc:
        raise CaseValidationError(f"accelerator: {exc}") from None
    inexact = None
    if data.get("inexact") is not None:
        inexact = _build(InexactControl, data["inexact"], _INEXACT_KEYS, "inexact")
    controls = _build(CouplingControls, coupling, _COUPLING_KEYS, "coupling")
    controls = replace(controls, accelerator=accelerator, inexact=inexact)

    output = data.get("output") or {}
    _check_keys(output, _OUTPUT_KEYS, "output")

    return Case(
        name=name,
        grid=grid,
        materials=materials,
        patches=tuple(patches),
        boundary_conditions=tuple(bcs),
        loads=tuple(loads),
        steps=steps,
        schedule=tuple(float(v) for v in schedule),
        strategy=strategy,
        controls=controls,
        policy=_build(IncrementationPolicy, data.get("incrementation"), _POLICY_KEYS, "incrementation"),
        newton=_build(NewtonControls, data.get("newton"), _NEWTON_KEYS, "newton"),
        description=str(data.get("description", "")),
        output_directory=output.get("directory"),
        source=str(source) if source else None,
    )


def builtin_cases():
    """Names of the case files shipped with the package."""
    root = resources.files("glic.harness") / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_case(ref):
    """Load a case from a file path or a built-in case name."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
        source = str(path)
    else:
        res = resources.files("glic.harness") / "cases" / f"{ref}.yaml"
        if not res.is_file():
            raise CaseValidationError(
                f"no case file {ref!r}; built-in cases: {', '.join(builtin_cases())}"
            )
        text = res.read_text()
        source = f"{ref}.yaml"
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CaseValidationError(f"{source}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise CaseValidationError(f"{source}: a case file must contain a mapping")
    return parse_case(data, source)

"""Scenario files: a YAML description of one control experiment.

Top-level keys (all but ``modes``, ``steps`` and ``horizon`` are optional)::

    name: wave_example
    modes: 16                 # N, modes 1..N
    steps: 1024               # M grid intervals
    horizon: pi               # T; number or expression in pi
    damping: {kind: cos, amplitude: 0.5}        # zero | cos | sin | piecewise (knots, values)
    input_operator: {kind: identity}            # identity | zero | diagonal (values) | dense (matrix); optional scale
    inclusion:
      center: {kind: zero}    # zero | constant | source | saturating | linear
      radius: 0.0
      radius_slope: 0.0
    initial_position: {1: 1.0, 2: "0.5j"}       # full list of N or {mode: value}
    initial_velocity: {}
    target: {2: 0.5}
    regularization: 1.0e-3    # a
    a_list: [1, 0.1, 0.01]
    nonlocal: {g: {kind: point, eps: 0.1, time: 0}, h: {kind: zero}}
    impulses: [{time: pi/2, jump_pos: {kind: constant, coeffs: {1: 0.1}}, jump_vel: {kind: zero}}]
    selection: {kind: center} # center | min-norm-shift | random-extreme
    tolerances: {fixed_point: 1.0e-9, max_iter: 200, relaxation: 1.0}
    probes: [{1: 1.0}]        # extra probe vectors for the decay table
    seed: 0

Complex coefficients are written as strings such as ``"1-0.5j"``.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import DiagnosticError, ScenarioError
from .families import DampingSpec, EvolutionKernel, TimeGrid, build_kernel
from .inclusion import (
    ControlProblem,
    ImpulseSpec,
    NonlocalSpec,
    SelectionStrategy,
    SetValuedMap,
    StateMap,
    TrajectoryMap,
)
from .spectral import ComplexArray, ModeSet, coefficients

DEFAULT_A_LIST = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)

DEFAULT_TOLERANCES = {
    "fixed_point": 1e-9,
    "max_iter": 200,
    "relaxation": 1.0,
    "step": 1e-6,
    "derivative": 1e-5,
    "gronwall": 1e-9,
    "oracle": 1e-6,
}

TOP_LEVEL = {
    "name", "modes", "steps", "horizon", "damping", "input_operator", "inclusion",
    "initial_position", "initial_velocity", "target", "regularization", "a_list",
    "nonlocal", "impulses", "selection", "tolerances", "probes", "seed",
}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def _eval_real(text: str) -> float:
    """Evaluate ``pi``-expressions such as ``"3*pi/4"`` without ``eval``."""

    def walk(node: ast.AST) -> float:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -walk(node.operand)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        raise ValueError(f"unsupported expression {text!r}")

    return walk(ast.parse(text.strip(), mode="eval"))


def _line_map(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            k = key.value
            if isinstance(key, yaml.ScalarNode) and key.tag.endswith(":int"):
                k = int(k)
            out[path + (k,)] = key.start_mark.line + 1
            _line_map(value, path + (k,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, path + (i,), out)
    return out


class _Reader:
    """Typed access into the parsed document with line-aware errors."""

    def __init__(self, data: dict, lines: dict, source: str):
        self.data, self.lines, self.source = data, lines, source

    def line(self, path: tuple) -> int | None:
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path: tuple, message: str) -> ScenarioError:
        where = ".".join(str(p) for p in path) or "<root>"
        return ScenarioError(f"{where}: {message}", self.line(path), self.source)

    def real(self, value: Any, path: tuple) -> float:
        try:
            if isinstance(value, bool):
                raise ValueError
            out = _eval_real(value) if isinstance(value, str) else float(value)
        except (TypeError, ValueError, SyntaxError):
            raise self.fail(path, f"expected a real number, got {value!r}") from None
        if not math.isfinite(out):
            raise self.fail(path, "value must be finite")
        return out

    def cplx(self, value: Any, path: tuple) -> complex:
        if isinstance(value, str):
            try:
                return complex(value.replace(" ", ""))
            except ValueError:
                return complex(self.real(value, path))
        return complex(self.real(value, path))

    def integer(self, value: Any, path: tuple, minimum: int) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(path, f"expected an integer, got {value!r}")
        if value < minimum:
            raise self.fail(path, f"must be >= {minimum}, got {value}")
        return value

    def mapping(self, value: Any, path: tuple, keys: set[str]) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.fail(path, f"expected a mapping, got {type(value).__name__}")
        for k in value:
            if k not in keys:
                raise self.fail(path + (k,), f"unknown key {k!r}; allowed: {sorted(keys)}")
        return value

    def vector(self, value: Any, path: tuple, modes: ModeSet) -> ComplexArray:
        if value is None:
            return modes.zeros()
        if isinstance(value, dict):
            entries = {}
            for n, v in value.items():
                if not isinstance(n, int) or n not in modes.modes:
                    raise self.fail(path + (n,), f"mode {n!r} is not in 1..{modes.dim}")
                entries[n] = self.cplx(v, path + (n,))
            return coefficients(entries, modes)
        if isinstance(value, list):
            if len(value) != modes.dim:
                raise self.fail(path, f"coefficient list has {len(value)} entries, expected {modes.dim}")
            return np.array([self.cplx(v, path + (i,)) for i, v in enumerate(value)], dtype=complex)
        raise self.fail(path, "expected a coefficient list or a {mode: value} mapping")

    def kind(self, spec: dict, path: tuple, kinds: tuple[str, ...], default: str | None = None) -> str:
        kind = spec.get("kind", default)
        if kind not in kinds:
            raise self.fail(path + ("kind",), f"unknown kind {kind!r}; expected one of {kinds}")
        return kind


@dataclass(frozen=True, eq=False)
class Scenario:
    """Validated scenario with defaults applied; builders produce solver inputs."""

    name: str
    modes: ModeSet
    grid: TimeGrid
    damping: DampingSpec
    B: ComplexArray
    inclusion: SetValuedMap
    x0: ComplexArray
    y0: ComplexArray
    target: ComplexArray
    a: float
    a_list: tuple[float, ...]
    nonlocal_spec: NonlocalSpec | None
    impulses: ImpulseSpec | None
    selection: SelectionStrategy
    tolerances: dict[str, float]
    probes: tuple[ComplexArray, ...]
    seed: int
    digest: str
    source: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def linear(self) -> bool:
        return self.inclusion.kind == "zero"

    def kernel(self) -> EvolutionKernel:
        return build_kernel(self.modes, self.damping, self.grid, step_tol=self.tolerances["step"])

    def problem(self, kernel: EvolutionKernel | None = None, a: float | None = None) -> ControlProblem:
        return ControlProblem(
            kernel or self.kernel(),
            self.B,
            self.inclusion,
            self.x0,
            self.y0,
            self.target,
            self.a if a is None else a,
            tol=self.tolerances["fixed_point"],
            max_iter=int(self.tolerances["max_iter"]),
            relaxation=self.tolerances["relaxation"],
        )


def _damping(rd: _Reader, spec: Any, T: float) -> DampingSpec:
    path = ("damping",)
    spec = rd.mapping(spec, path, {"kind", "amplitude", "knots", "values"})
    kind = rd.kind(spec, path, ("zero", "cos", "sin", "piecewise"), "zero")
    if kind == "zero":
        return DampingSpec.zero()
    if kind == "piecewise":
        knots = [rd.real(v, path + ("knots", i)) for i, v in enumerate(spec.get("knots") or [])]
        values = [rd.real(v, path + ("values", i)) for i, v in enumerate(spec.get("values") or [])]
        try:
            return DampingSpec.piecewise(knots, values)
        except ValueError as exc:
            raise rd.fail(path, str(exc)) from None
    k = rd.real(spec.get("amplitude", 0.0), path + ("amplitude",))
    return DampingSpec.cosine(k) if kind == "cos" else DampingSpec.sine(k, T)


def _input_operator(rd: _Reader, spec: Any, modes: ModeSet) -> ComplexArray:
    path = ("input_operator",)
    spec = rd.mapping(spec, path, {"kind", "values", "matrix", "scale"})
    kind = rd.kind(spec, path, ("identity", "zero", "diagonal", "dense"), "identity")
    scale = rd.cplx(spec.get("scale", 1.0), path + ("scale",))
    dim = modes.dim
    if kind == "identity":
        B = np.eye(dim, dtype=complex)
    elif kind == "zero":
        B = np.zeros((dim, dim), dtype=complex)
    elif kind == "diagonal":
        B = np.diag(rd.vector(spec.get("values"), path + ("values",), modes))
    else:
        rows = spec.get("matrix")
        if not isinstance(rows, list) or len(rows) != dim or any(not isinstance(r, list) or len(r) != dim for r in rows):
            raise rd.fail(path + ("matrix",), f"dense input operator must be a {dim}x{dim} list of lists")
        B = np.array(
            [[rd.cplx(v, path + ("matrix", i, j)) for j, v in enumerate(row)] for i, row in enumerate(rows)],
            dtype=complex,
        )
    return scale * B


def _inclusion(rd: _Reader, spec: Any, modes: ModeSet) -> SetValuedMap:
    path = ("inclusion",)
    spec = rd.mapping(spec, path, {"center", "radius", "radius_slope"})
    cpath = path + ("center",)
    center = rd.mapping(spec.get("center"), cpath, {"kind", "coeffs", "amplitude", "gain"})
    kind = rd.kind(center, cpath, ("zero", "constant", "source", "saturating", "linear"), "zero")
    radius = rd.real(spec.get("radius", 0.0), path + ("radius",))
    slope = rd.real(spec.get("radius_slope", 0.0), path + ("radius_slope",))
    if radius < 0 or slope < 0:
        raise rd.fail(path, "radius and radius_slope must be nonnegative")
    if kind == "zero" and radius == 0 and slope == 0:
        return SetValuedMap.zero()
    if kind == "zero":
        fn, growth = (lambda t, x: np.zeros_like(x)), (0.0, 0.0)
    elif kind in ("constant", "source"):
        c = rd.vector(center.get("coeffs"), cpath + ("coeffs",), modes)
        amp = rd.real(center.get("amplitude", 1.0), cpath + ("amplitude",))
        if kind == "constant":
            fn = lambda t, x, c=amp * c: np.broadcast_to(c, x.shape).copy()  # noqa: E731
        else:
            fn = lambda t, x, c=amp * c: np.cos(t)[:, None] * c  # noqa: E731
        growth = (abs(amp) * float(np.linalg.norm(c)), 0.0)
    else:
        gain = rd.real(center.get("gain", 0.0), cpath + ("gain",))
        if kind == "saturating":
            fn = lambda t, x, g=gain: g * x / (1.0 + np.linalg.norm(x, axis=1, keepdims=True))  # noqa: E731
            growth = (abs(gain), 0.0)
        else:
            fn = lambda t, x, g=gain: g * x  # noqa: E731
            growth = (0.0, abs(gain))
    return SetValuedMap.ball(fn, growth, radius, slope, kind)


def _on_grid(rd: _Reader, value: Any, path: tuple, grid: TimeGrid) -> int:
    t = rd.real(value, path)
    try:
        return grid.index(t)
    except ValueError:
        raise rd.fail(path, f"time {t!r} is not a grid node (spacing T/M = {grid.h!r})") from None


def _trajectory_map(rd: _Reader, spec: Any, path: tuple, modes: ModeSet, grid: TimeGrid) -> TrajectoryMap:
    spec = rd.mapping(spec, path, {"kind", "eps", "time", "coeffs"})
    kind = rd.kind(spec, path, ("zero", "constant", "point", "mean"), "zero")
    if kind == "zero":
        return TrajectoryMap.zero()
    if kind == "constant":
        return TrajectoryMap.constant(rd.vector(spec.get("coeffs"), path + ("coeffs",), modes))
    eps = rd.real(spec.get("eps", 0.0), path + ("eps",))
    if kind == "mean":
        return TrajectoryMap.mean(eps)
    return TrajectoryMap.point(eps, _on_grid(rd, spec.get("time", 0.0), path + ("time",), grid))


def _state_map(rd: _Reader, spec: Any, path: tuple, modes: ModeSet) -> StateMap:
    spec = rd.mapping(spec, path, {"kind", "coeffs", "gain"})
    kind = rd.kind(spec, path, ("zero", "constant", "saturating"), "zero")
    if kind == "zero":
        return StateMap.zero()
    if kind == "constant":
        return StateMap.constant(rd.vector(spec.get("coeffs"), path + ("coeffs",), modes))
    return StateMap.saturating(rd.real(spec.get("gain", 0.0), path + ("gain",)))


def _impulses(rd: _Reader, spec: Any, modes: ModeSet, grid: TimeGrid) -> ImpulseSpec | None:
    if spec is None:
        return None
    if not isinstance(spec, list):
        raise rd.fail(("impulses",), "expected a list of impulses")
    times, pos, vel = [], [], []
    for i, item in enumerate(spec):
        path = ("impulses", i)
        item = rd.mapping(item, path, {"time", "jump_pos", "jump_vel"})
        if "time" not in item:
            raise rd.fail(path, "impulse needs a time")
        k = _on_grid(rd, item["time"], path + ("time",), grid)
        if not 0 < k < grid.steps:
            raise rd.fail(path + ("time",), f"impulse time {grid.nodes[k]!r} must lie strictly inside (0, T)")
        if times and grid.nodes[k] <= times[-1]:
            raise rd.fail(path + ("time",), "impulse times must be strictly increasing")
        times.append(float(grid.nodes[k]))
        pos.append(_state_map(rd, item.get("jump_pos"), path + ("jump_pos",), modes))
        vel.append(_state_map(rd, item.get("jump_vel"), path + ("jump_vel",), modes))
    return ImpulseSpec(tuple(times), tuple(pos), tuple(vel))


def scenario_from_dict(data: Any, lines: dict | None = None, source: str = "<dict>") -> Scenario:
    """Validate a parsed scenario document and apply defaults."""
    rd = _Reader(data, lines or {}, source)
    if data is None:
        raise ScenarioError("empty scenario file", 1, source)
    data = rd.mapping(data, (), TOP_LEVEL)
    for key in ("modes", "steps", "horizon"):
        if key not in data:
            raise rd.fail((), f"missing required key {key!r}")
    N = rd.integer(data["modes"], ("modes",), 1)
    M = rd.integer(data["steps"], ("steps",), 2)
    T = rd.real(data["horizon"], ("horizon",))
    if T <= 0:
        raise rd.fail(("horizon",), "horizon must be positive")
    modes, grid = ModeSet.first(N), TimeGrid(T, M)

    a = rd.real(data.get("regularization", 1e-3), ("regularization",))
    if a <= 0:
        raise rd.fail(("regularization",), "regularization must be positive")
    a_raw = data.get("a_list", list(DEFAULT_A_LIST))
    if not isinstance(a_raw, list) or not a_raw:
        raise rd.fail(("a_list",), "a_list must be a non-empty list")
    a_list = tuple(rd.real(v, ("a_list", i)) for i, v in enumerate(a_raw))
    if any(v <= 0 for v in a_list) or any(y >= x for x, y in zip(a_list, a_list[1:])):
        raise rd.fail(("a_list",), "a_list must be positive and strictly decreasing")

    tol = dict(DEFAULT_TOLERANCES)
    given = rd.mapping(data.get("tolerances"), ("tolerances",), set(DEFAULT_TOLERANCES))
    for k, v in given.items():
        tol[k] = rd.integer(v, ("tolerances", k), 1) if k == "max_iter" else rd.real(v, ("tolerances", k))
    if not 0 < tol["relaxation"] <= 1:
        raise rd.fail(("tolerances", "relaxation"), "relaxation must lie in (0, 1]")

    seed = rd.integer(data.get("seed", 0), ("seed",), 0)
    sel = rd.mapping(data.get("selection"), ("selection",), {"kind"})
    strategy = SelectionStrategy(rd.kind(sel, ("selection",), SelectionStrategy.KINDS, "center"), seed)

    nl = None
    if data.get("nonlocal") is not None:
        spec = rd.mapping(data["nonlocal"], ("nonlocal",), {"g", "h"})
        nl = NonlocalSpec(
            _trajectory_map(rd, spec.get("g"), ("nonlocal", "g"), modes, grid),
            _trajectory_map(rd, spec.get("h"), ("nonlocal", "h"), modes, grid),
        )
        try:
            nl.check_lipschitz(M + 1, N, seed)
        except DiagnosticError as exc:
            raise rd.fail(("nonlocal",), str(exc)) from None

    probes_raw = data.get("probes") or []
    if not isinstance(probes_raw, list):
        raise rd.fail(("probes",), "probes must be a list of coefficient vectors")

    canonical = json.dumps(data, sort_keys=True, default=str)
    return Scenario(
        name=str(data.get("name", Path(source).stem)),
        modes=modes,
        grid=grid,
        damping=_damping(rd, data.get("damping"), T),
        B=_input_operator(rd, data.get("input_operator"), modes),
        inclusion=_inclusion(rd, data.get("inclusion"), modes),
        x0=rd.vector(data.get("initial_position"), ("initial_position",), modes),
        y0=rd.vector(data.get("initial_velocity"), ("initial_velocity",), modes),
        target=rd.vector(data.get("target"), ("target",), modes),
        a=a,
        a_list=a_list,
        nonlocal_spec=nl,
        impulses=_impulses(rd, data.get("impulses"), modes, grid),
        selection=strategy,
        tolerances=tol,
        probes=tuple(rd.vector(p, ("probes", i), modes) for i, p in enumerate(probes_raw)),
        seed=seed,
        digest=hashlib.sha256(canonical.encode()).hexdigest(),
        source=source,
        raw=data,
    )


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    path = resources.files("approxctl") / "scenarios" / f"{name}.yaml"
    return Path(str(path))


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"parse error: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None, source) from None
    if root is None:
        raise ScenarioError("parse error: empty scenario file", 1, source)
    return scenario_from_dict(data, _line_map(root), source)


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by bare name (e.g. ``wave_example``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and bundled(str(path)).exists():
        p = bundled(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(path)) from None
    return parse_scenario(text, str(p))

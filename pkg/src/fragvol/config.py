"""JSON run configuration.

Example::

    {
      "mode": "run",
      "model": {"N": 5, "R": 15, "kernel": {"type": "powerlaw", "alpha": 0.5, "nu": 0}},
      "initial": {"c0": "step_one", "d0": 1},
      "mesh": {"cells": 160},
      "time": {"T": 3.2},
      "outputs": {"dir": "out"}
    }

Every problem found while parsing is collected and reported at once through
:class:`~fragvol.errors.ConfigError`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, FragvolError
from .expr import Expression
from .kernels import KernelModel, PowerLawModel, expression_model
from .mesh import Mesh, build_graded_mesh, build_uniform_mesh
from .solver import RunOptions, step_one

MODES = ("run", "converge", "validate", "sweep-r")


@dataclass
class KernelSpec:
    type: str = "powerlaw"
    alpha: float | None = None
    nu: float | None = None
    a: str | None = None
    b: str | None = None
    b_i: str | None = None
    a_disc: list | None = None
    b_disc: Any = None


@dataclass
class ModelSection:
    N: int
    R: float
    kernel: KernelSpec


@dataclass
class InitialSection:
    c0: Any = "step_one"
    d0: Any = 1.0


@dataclass
class MeshSection:
    cells: int | None = None
    h: float | None = None
    grading: Any = 1.0
    k: float = 2.0


@dataclass
class TimeSection:
    T: float
    dt_max: float | None = None
    steps: int | None = None
    theta_max: float = 0.9
    safety: float = 0.9


@dataclass
class OutputSection:
    dir: str = "out"
    decimation: int | None = None


@dataclass
class ConvergeSection:
    levels: int = 4
    base_cells: int = 10
    refine_factor: int = 8


@dataclass
class SweepSection:
    R_values: list = field(default_factory=list)


@dataclass
class ValidateSection:
    samples: int = 100
    tol: float = 1e-10
    seed: int = 0


@dataclass
class RunConfig:
    model: ModelSection
    initial: InitialSection
    mesh: MeshSection
    time: TimeSection
    mode: str = "run"
    outputs: OutputSection = field(default_factory=OutputSection)
    converge: ConvergeSection = field(default_factory=ConvergeSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    validate: ValidateSection = field(default_factory=ValidateSection)
    name: str | None = None

    # -- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        data = asdict(self)
        kern = data["model"]["kernel"]
        data["model"]["kernel"] = {k: v for k, v in kern.items() if v is not None}
        if data["name"] is None:
            del data["name"]
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _Parser(data).parse()

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON: {exc}"]) from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
        return cls.from_json(text)

    # -- builders ---------------------------------------------------------

    def build_model(self, R: float | None = None) -> KernelModel:
        R = self.model.R if R is None else R
        k = self.model.kernel
        if k.type == "powerlaw":
            return PowerLawModel(k.alpha, k.nu, self.model.N, R)
        return expression_model(self.model.N, R, k.a, k.b, k.b_i, k.a_disc, k.b_disc)

    def build_mesh(self, R: float | None = None) -> Mesh:
        R = self.model.R if R is None else R
        m = self.mesh
        N = self.model.N
        if m.h is None and m.grading == 1.0:
            return build_uniform_mesh(N, R, m.cells)
        if m.h is None:
            # graded mesh with a fixed count: widest cell sets h
            probe = build_graded_mesh(N, R, R - N + 1.0, m.grading, k=1e300, cells=m.cells)
            h = float(probe.widths.max()) * (1 + 1e-9)
            return build_graded_mesh(N, R, h, m.grading, m.k, m.cells)
        return build_graded_mesh(N, R, m.h, m.grading, m.k, m.cells)

    def initial_data(self):
        c0 = self.initial.c0
        if c0 == "step_one":
            c0 = step_one()
        elif isinstance(c0, str):
            expr = Expression(c0, ("x",))
            c0 = lambda x: float(expr(x=x))  # noqa: E731
        d0 = self.initial.d0
        if isinstance(d0, (int, float)):
            d0 = np.full(self.model.N, float(d0))
        return c0, np.asarray(d0, dtype=float)

    def run_options(self, unsafe_dt: float | None = None) -> RunOptions:
        t = self.time
        return RunOptions(dt_max=t.dt_max, steps=t.steps, theta_max=t.theta_max, safety=t.safety,
                          unsafe_dt=unsafe_dt, decimation=self.outputs.decimation)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return _is_number(v) and float(v).is_integer()


class _Parser:
    def __init__(self, data):
        self.data = data
        self.problems: list[str] = []

    def fail(self, msg):
        self.problems.append(msg)

    def section(self, name, required=False) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                self.fail(f"missing section '{name}'")
            return {}
        if not isinstance(sec, dict):
            self.fail(f"section '{name}' must be an object")
            return {}
        return sec

    def number(self, sec, path, key, required=False, default=None, positive=False, integer=False,
               minimum=None, allow_none=False):
        if key not in sec or (sec[key] is None and allow_none):
            if required:
                self.fail(f"missing {path}.{key}")
            return default
        v = sec[key]
        check = _is_int if integer else _is_number
        if not check(v):
            self.fail(f"{path}.{key} must be {'an integer' if integer else 'a finite number'}, got {v!r}")
            return default
        if positive and not v > 0:
            self.fail(f"{path}.{key} must be positive, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(f"{path}.{key} must be >= {minimum}, got {v!r}")
        return int(v) if integer else float(v)

    def unknown(self, sec, path, allowed):
        for key in sec:
            if key not in allowed:
                self.fail(f"unknown key {path}.{key}")

    def parse(self) -> RunConfig:
        if not isinstance(self.data, dict):
            raise ConfigError(["config must be a JSON object"])
        self.unknown(self.data, "config", {"mode", "name", "model", "initial", "mesh", "time", "outputs",
                                           "converge", "sweep", "validate"})
        mode = self.data.get("mode", "run")
        if mode not in MODES:
            self.fail(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
        name = self.data.get("name")
        if name is not None and not isinstance(name, str):
            self.fail("name must be a string")

        model = self.parse_model()
        initial = self.parse_initial(model)
        mesh = self.parse_mesh()
        time = self.parse_time()

        out = self.section("outputs")
        self.unknown(out, "outputs", {"dir", "decimation"})
        outputs = OutputSection(str(out.get("dir", "out")),
                                self.number(out, "outputs", "decimation", integer=True, minimum=1, allow_none=True))

        conv = self.section("converge")
        self.unknown(conv, "converge", {"levels", "base_cells", "refine_factor"})
        converge = ConvergeSection(
            self.number(conv, "converge", "levels", default=4, integer=True, minimum=3),
            self.number(conv, "converge", "base_cells", default=10, integer=True, minimum=1),
            self.number(conv, "converge", "refine_factor", default=8, integer=True, minimum=4),
        )

        sw = self.section("sweep")
        self.unknown(sw, "sweep", {"R_values"})
        R_values = sw.get("R_values", [])
        if not isinstance(R_values, list) or not all(_is_number(r) for r in R_values):
            self.fail("sweep.R_values must be a list of numbers")
            R_values = []
        elif model is not None:
            for r in R_values:
                if not r > model.N:
                    self.fail(f"sweep.R_values entry {r!r} must exceed N={model.N}")
        if mode == "sweep-r" and not R_values:
            self.fail("sweep-r mode needs a non-empty sweep.R_values")
        sweep = SweepSection([float(r) for r in R_values])

        val = self.section("validate")
        self.unknown(val, "validate", {"samples", "tol", "seed"})
        validate = ValidateSection(
            self.number(val, "validate", "samples", default=100, integer=True, minimum=1),
            self.number(val, "validate", "tol", default=1e-10, positive=True),
            self.number(val, "validate", "seed", default=0, integer=True, minimum=0),
        )

        if self.problems:
            raise ConfigError(self.problems)
        cfg = RunConfig(model, initial, mesh, time, mode, outputs, converge, sweep, validate, name)
        self.dry_build(cfg)
        return cfg

    def parse_model(self) -> ModelSection | None:
        sec = self.section("model", required=True)
        self.unknown(sec, "model", {"N", "R", "kernel"})
        N = self.number(sec, "model", "N", required=True, integer=True, minimum=1)
        R = self.number(sec, "model", "R", required=True)
        if N is not None and R is not None and not R > N:
            self.fail(f"model.R={R!r} must exceed model.N={N}")
        kern = sec.get("kernel")
        spec = None
        if not isinstance(kern, dict):
            self.fail("missing model.kernel object")
        else:
            ktype = kern.get("type")
            if ktype == "powerlaw":
                self.unknown(kern, "model.kernel", {"type", "alpha", "nu"})
                alpha = self.number(kern, "model.kernel", "alpha", required=True)
                nu = self.number(kern, "model.kernel", "nu", required=True)
                if nu is not None and not (-2 < nu <= 0):
                    self.fail(f"model.kernel.nu must lie in (-2, 0], got {nu!r}")
                spec = KernelSpec("powerlaw", alpha=alpha, nu=nu)
            elif ktype == "expr":
                self.unknown(kern, "model.kernel", {"type", "a", "b", "b_i", "a_disc", "b_disc"})
                exprs = {}
                for key, names in (("a", ("x",)), ("b", ("x", "y")), ("b_i", ("i", "y"))):
                    src = kern.get(key)
                    if not isinstance(src, str):
                        self.fail(f"model.kernel.{key} must be an expression string")
                        continue
                    try:
                        Expression(src, names)
                        exprs[key] = src
                    except FragvolError as exc:
                        self.fail(f"model.kernel.{key}: {exc}")
                a_disc = kern.get("a_disc")
                if not isinstance(a_disc, list) or not all(_is_number(v) for v in a_disc):
                    self.fail("model.kernel.a_disc must be a list of numbers")
                elif N is not None and len(a_disc) != N:
                    self.fail(f"model.kernel.a_disc must have N={N} entries, got {len(a_disc)}")
                b_disc = kern.get("b_disc")
                if isinstance(b_disc, str):
                    try:
                        Expression(b_disc, ("i", "j"))
                    except FragvolError as exc:
                        self.fail(f"model.kernel.b_disc: {exc}")
                elif not (isinstance(b_disc, list) and all(isinstance(r, list) for r in b_disc)):
                    self.fail("model.kernel.b_disc must be an expression in i, j or an N x N list")
                spec = KernelSpec("expr", a=exprs.get("a"), b=exprs.get("b"), b_i=exprs.get("b_i"),
                                  a_disc=a_disc, b_disc=b_disc)
            else:
                self.fail(f"model.kernel.type must be 'powerlaw' or 'expr', got {ktype!r}")
        if N is None or R is None or spec is None:
            return None
        return ModelSection(N, R, spec)

    def parse_initial(self, model) -> InitialSection:
        sec = self.section("initial")
        self.unknown(sec, "initial", {"c0", "d0"})
        c0 = sec.get("c0", "step_one")
        if isinstance(c0, str) and c0 != "step_one":
            try:
                Expression(c0, ("x",))
            except FragvolError as exc:
                self.fail(f"initial.c0: {exc}")
        elif not (c0 == "step_one" or _is_number(c0)):
            self.fail("initial.c0 must be 'step_one', a number or an expression in x")
        elif _is_number(c0) and c0 < 0:
            self.fail("initial.c0 must be nonnegative")
        d0 = sec.get("d0", 1.0)
        if _is_number(d0):
            if d0 < 0:
                self.fail("initial.d0 must be nonnegative")
        elif isinstance(d0, list) and all(_is_number(v) for v in d0):
            if any(v < 0 for v in d0):
                self.fail("initial.d0 entries must be nonnegative")
            if model is not None and len(d0) != model.N:
                self.fail(f"initial.d0 must have N={model.N} entries, got {len(d0)}")
        else:
            self.fail("initial.d0 must be a number or a list of numbers")
        return InitialSection(c0, d0)

    def parse_mesh(self) -> MeshSection:
        sec = self.section("mesh", required=True)
        self.unknown(sec, "mesh", {"cells", "h", "grading", "k"})
        cells = self.number(sec, "mesh", "cells", integer=True, minimum=1, allow_none=True)
        h = self.number(sec, "mesh", "h", positive=True, allow_none=True)
        if cells is None and h is None and "mesh" in self.data:
            self.fail("mesh needs 'cells' or 'h'")
        grading = sec.get("grading", 1.0)
        if _is_number(grading):
            if not grading > 0:
                self.fail("mesh.grading ratio must be positive")
            grading = float(grading)
        elif not (isinstance(grading, list) and grading and all(_is_number(v) and v > 0 for v in grading)):
            self.fail("mesh.grading must be a positive ratio or a list of positive relative widths")
        k = self.number(sec, "mesh", "k", default=2.0)
        if k is not None and not k > 1:
            self.fail(f"mesh.k must exceed 1, got {k!r}")
        return MeshSection(cells, h, grading, k)

    def parse_time(self) -> TimeSection:
        sec = self.section("time", required=True)
        self.unknown(sec, "time", {"T", "dt_max", "steps", "theta_max", "safety"})
        T = self.number(sec, "time", "T", required=True, minimum=0.0)
        dt_max = self.number(sec, "time", "dt_max", positive=True, allow_none=True)
        steps = self.number(sec, "time", "steps", integer=True, minimum=1, allow_none=True)
        theta = self.number(sec, "time", "theta_max", default=0.9, positive=True)
        if theta is not None and not theta < 1:
            self.fail(f"time.theta_max must be < 1, got {theta!r}")
        safety = self.number(sec, "time", "safety", default=0.9, positive=True)
        if safety is not None and safety > 1:
            self.fail(f"time.safety must be <= 1, got {safety!r}")
        return TimeSection(T if T is not None else 0.0, dt_max, steps, theta, safety)

    def dry_build(self, cfg: RunConfig) -> None:
        """Construct model, mesh and initial data so range errors surface before any run."""
        problems = []
        for what, fn in (("model.kernel", cfg.build_model), ("mesh", cfg.build_mesh),
                         ("initial", cfg.initial_data)):
            try:
                fn()
            except FragvolError as exc:
                problems.append(f"{what}: {exc}")
        for R in cfg.sweep.R_values:
            try:
                cfg.build_mesh(R)
            except FragvolError as exc:
                problems.append(f"sweep R={R:g}: {exc}")
        if problems:
            raise ConfigError(problems)


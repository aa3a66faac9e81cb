"""Scenario configs: JSON in, result rows and CSV tables out.

One structured JSON file describes the scene (voxel lists or auto-voxelized
boxes), the susceptibility models, the summation mode and its tolerances,
an optional separation sweep, and an optional force step. The CSV column
contract is fixed: d, F_int, F_eff_total, force, n_modes_used,
tail_estimate, converged, floats at 17 significant digits, \\n line ends,
so identical configs produce byte-identical tables regardless of worker
count or transport.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import engine
from .coupling import SpectralQuadrature, read_imchi_csv
from .errors import ConfigurationError, NumericsError
from .model import (
    Body,
    ConstantSusceptibility,
    FieldKernelSpec,
    LorentzOscillator,
    Scene,
    TabulatedSusceptibility,
    make_matsubara_grid,
    validate_scene,
)

CSV_COLUMNS = ["d", "F_int", "F_eff_total", "force", "n_modes_used",
               "tail_estimate", "converged"]


@dataclass(frozen=True)
class ScenarioSpec:
    """Parsed, validated scenario ready to evaluate."""

    scene: Scene
    mode: str                 # "finite-T" | "zero-T"
    n_max: int
    tail_tol: float
    quad: SpectralQuadrature
    axis: np.ndarray
    separations: tuple        # empty tuple means single evaluation
    force_step: float
    output: str


@dataclass(frozen=True)
class Row:
    d: float
    f_int: float
    f_eff_total: float
    force: float
    n_modes_used: int
    tail_estimate: float
    converged: bool


def load_config(path):
    """Read a JSON config file; parse errors carry line and column."""
    with open(path) as handle:
        text = handle.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")
    return data


def _require(data, key, where, kind=None):
    if key not in data:
        raise ConfigurationError(f"{where}.{key}: required field missing")
    value = data[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigurationError(f"{where}.{key}: wrong type {type(value).__name__}")
    return value


def _parse_susceptibility(data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: must be an object")
    variant = _require(data, "variant", where, str)
    try:
        if variant == "constant":
            return ConstantSusceptibility(alpha=_require(data, "alpha", where))
        if variant == "lorentz":
            return LorentzOscillator(
                plasma_sq=float(_require(data, "plasma_sq", where)),
                resonance=float(_require(data, "resonance", where)),
                damping=float(_require(data, "damping", where)),
                orientation=data.get("orientation", 1.0),
            )
        if variant == "tabulated":
            if "csv" in data:
                return read_imchi_csv(data["csv"])
            nu = np.asarray(_require(data, "nu", where, list), dtype=float)
            raw = np.asarray(_require(data, "imchi", where, list), dtype=float)
            if raw.ndim == 2 and raw.shape[1] == 6:
                tensors = np.empty((raw.shape[0], 3, 3))
                tensors[:, 0, 0] = raw[:, 0]
                tensors[:, 0, 1] = tensors[:, 1, 0] = raw[:, 1]
                tensors[:, 0, 2] = tensors[:, 2, 0] = raw[:, 2]
                tensors[:, 1, 1] = raw[:, 3]
                tensors[:, 1, 2] = tensors[:, 2, 1] = raw[:, 4]
                tensors[:, 2, 2] = raw[:, 5]
            elif raw.ndim == 3 and raw.shape[1:] == (3, 3):
                tensors = raw
            else:
                raise ConfigurationError(
                    f"{where}.imchi: need rows of 6 entries or full 3x3 tensors")
            return TabulatedSusceptibility(nu=nu, imchi=tensors)
    except ConfigurationError as exc:
        if str(exc).startswith(where):
            raise
        raise ConfigurationError(f"{where}: {exc}") from exc
    raise ConfigurationError(f"{where}.variant: unknown variant {variant!r}")


def _voxelize_box(box, where):
    lo = np.asarray(_require(box, "lo", where, list), dtype=float)
    hi = np.asarray(_require(box, "hi", where, list), dtype=float)
    res = _require(box, "resolution", where, list)
    if lo.shape != (3,) or hi.shape != (3,):
        raise ConfigurationError(f"{where}: lo and hi must be 3-vectors")
    if len(res) != 3 or any(int(r) < 1 for r in res):
        raise ConfigurationError(f"{where}.resolution: need three integers >= 1")
    if np.any(hi <= lo):
        raise ConfigurationError(f"{where}: hi must exceed lo componentwise")
    res = [int(r) for r in res]
    cell = (hi - lo) / np.asarray(res, dtype=float)
    axes = [lo[k] + cell[k] * (np.arange(res[k]) + 0.5) for k in range(3)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    centers = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])
    volumes = np.full(centers.shape[0], float(np.prod(cell)))
    return centers, volumes


def _parse_body(data, label, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: must be an object")
    sus = _parse_susceptibility(_require(data, "susceptibility", where),
                                f"{where}.susceptibility")
    if ("voxels" in data) == ("box" in data):
        raise ConfigurationError(f"{where}: give exactly one of voxels or box")
    if "voxels" in data:
        raw = np.asarray(data["voxels"], dtype=float)
        if raw.ndim != 2 or raw.shape[1] != 4:
            raise ConfigurationError(f"{where}.voxels: need rows [x, y, z, volume]")
        centers, volumes = raw[:, :3], raw[:, 3]
    else:
        centers, volumes = _voxelize_box(data["box"], f"{where}.box")
    try:
        return Body(label, centers, volumes, sus)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def parse_config(data):
    """Turn a config dict into a validated ScenarioSpec.

    Raises ConfigurationError with a field-anchored message on the first
    violation; scene-level diagnostics are joined into one message.
    """
    if not isinstance(data, dict):
        raise ConfigurationError("config: top level must be an object")
    kernel_data = _require(data, "kernel", "config", dict)
    kernel = FieldKernelSpec(
        dimension=int(_require(kernel_data, "dimension", "config.kernel")),
        mass=float(kernel_data.get("mass", 0.0)),
        n_internal=int(kernel_data.get("n_internal", 1)),
    )
    mode = data.get("mode", "finite-T")
    if mode not in ("finite-T", "zero-T"):
        raise ConfigurationError("config.mode: must be 'finite-T' or 'zero-T'")
    if mode == "finite-T":
        temperature = float(_require(data, "temperature", "config"))
        if temperature <= 0:
            raise ConfigurationError("config.temperature: must be > 0 in finite-T mode")
    else:
        temperature = 0.0

    grid_data = data.get("grid", {})
    n_max = int(grid_data.get("n_max", 512))
    tail_tol = float(grid_data.get("tail_tol", 1e-10))
    if n_max < 1:
        raise ConfigurationError("config.grid.n_max: must be >= 1")
    if tail_tol <= 0:
        raise ConfigurationError("config.grid.tail_tol: must be > 0")
    quad_data = data.get("quadrature", {})
    try:
        quad = SpectralQuadrature(
            rule=quad_data.get("rule", "adaptive"),
            rel_tol=float(quad_data.get("rel_tol", 1e-8)),
            nu_max=quad_data.get("nu_max"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"config.quadrature: {exc}") from exc

    body1 = _parse_body(_require(data, "body1", "config", dict), "A1", "config.body1")
    body2 = _parse_body(_require(data, "body2", "config", dict), "A2", "config.body2")
    scene = Scene(kernel=kernel, body1=body1, body2=body2, temperature=temperature)

    axis = np.asarray(data.get("axis", [1.0, 0.0, 0.0]), dtype=float)
    if axis.shape != (3,) or not np.linalg.norm(axis) > 0:
        raise ConfigurationError("config.axis: must be a nonzero 3-vector")
    axis = axis / np.linalg.norm(axis)

    separations = ()
    if "sweep" in data:
        sweep = data["sweep"]
        if not isinstance(sweep, dict):
            raise ConfigurationError("config.sweep: must be an object")
        separations = tuple(float(x) for x in _require(sweep, "separations", "config.sweep", list))
        if not separations:
            raise ConfigurationError("config.sweep.separations: must be non-empty")
        if "axis" in sweep:
            axis = np.asarray(sweep["axis"], dtype=float)
            if axis.shape != (3,) or not np.linalg.norm(axis) > 0:
                raise ConfigurationError("config.sweep.axis: must be a nonzero 3-vector")
            axis = axis / np.linalg.norm(axis)

    force_step = data.get("force_step")
    if force_step is not None:
        force_step = float(force_step)
        if force_step <= 0:
            raise ConfigurationError("config.force_step: must be > 0")

    diags = validate_scene(scene)
    if diags:
        raise ConfigurationError("config: invalid scene: " + "; ".join(diags))
    for d in separations:
        placed = scene.at_separation(d, axis)
        placed_diags = validate_scene(placed)
        if placed_diags:
            raise ConfigurationError(
                f"config.sweep: separation d={d:g} gives an invalid scene: "
                + "; ".join(placed_diags))

    axis.setflags(write=False)
    return ScenarioSpec(scene=scene, mode=mode, n_max=n_max, tail_tol=tail_tol,
                        quad=quad, axis=axis, separations=separations,
                        force_step=force_step, output=data.get("output"))


def _evaluate_at(spec, scene, d, threads):
    if spec.mode == "finite-T":
        grid = make_matsubara_grid(scene.temperature, spec.n_max)
        f_int = engine.interaction_free_energy(scene, grid, spec.tail_tol, threads)
        # the total F_eff is a cutoff-dependent self energy: evaluate it at
        # the truncation the cutoff-independent interaction part settled on
        f_eff = engine.free_energy_eff(scene, grid, spec.tail_tol, threads,
                                       _fixed_n=f_int.n_used)
        force = None
        if spec.force_step is not None:
            force = engine.induced_force(scene, spec.axis, spec.force_step,
                                         grid=grid, tail_tol=spec.tail_tol,
                                         threads=threads).force
        return Row(d=d, f_int=f_int.total, f_eff_total=f_eff.total, force=force,
                   n_modes_used=f_int.n_used, tail_estimate=f_int.tail_estimate,
                   converged=f_int.converged)
    try:
        f_int, info = engine.free_energy_zero_temperature(
            scene, spec.quad, "interaction", return_info=True)
        converged = True
        tail = info["achieved_tol"] * abs(f_int)
        n_evals = info["n_evaluations"]
    except NumericsError as exc:
        f_int, converged = float("nan"), False
        tail = float("nan") if exc.achieved_tol is None else exc.achieved_tol
        n_evals = 0
    force = None
    if spec.force_step is not None and converged:
        try:
            force = engine.induced_force(scene, spec.axis, spec.force_step,
                                         quad=spec.quad).force
        except NumericsError:
            converged = False
    return Row(d=d, f_int=f_int, f_eff_total=None, force=force,
               n_modes_used=n_evals, tail_estimate=tail, converged=converged)


def evaluate_scenario(spec, threads=None):
    """Evaluate a scenario: one row per sweep separation, or a single row."""
    threads = engine.resolve_threads(threads)
    rows = []
    if spec.separations:
        for d in spec.separations:
            placed = spec.scene.at_separation(d, spec.axis)
            rows.append(_evaluate_at(spec, placed, float(d), threads))
    else:
        d = spec.scene.separation_along(spec.axis)
        rows.append(_evaluate_at(spec, spec.scene, d, threads))
    return rows


def _fmt(value):
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def rows_to_csv(rows, path):
    """Write result rows with the fixed column contract."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([
                _fmt(row.d), _fmt(row.f_int), _fmt(row.f_eff_total), _fmt(row.force),
                _fmt(row.n_modes_used), _fmt(row.tail_estimate), _fmt(row.converged),
            ])

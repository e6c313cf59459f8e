"""Strict JSON job configuration shared by all command-line subcommands.

A job config is a single JSON document describing one synthetic
reconstruction job end to end: phantom, probe, scan grid, noise, solver,
outer-loop, editor, and metric settings, plus the output directory.  The
schema is strict: unknown keys anywhere in the document are rejected, and
every referenced file must exist at validation time.  ``JobConfig.as_dict``
emits the fully resolved document (all defaults made explicit, paths made
absolute), which is what every run echoes to ``manifest.json``; a manifest
is itself a valid config, so reruns need no extra state.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field

from .core import (
    EditRequest,
    PnpConfig,
    SolverConfig,
    energy_to_wavelength,
)
from .editors import EditorSpec
from .simulate import PhantomSpec

__all__ = [
    "JobConfigError",
    "ProbeSettings",
    "GridSettings",
    "DataSettings",
    "MetricsSettings",
    "JobConfig",
    "parse_job_config",
    "load_job_config",
]


class JobConfigError(ValueError):
    """A job config that violates the schema or references missing files."""


@dataclass(frozen=True)
class ProbeSettings:
    """Probe synthesis settings plus the initial-guess perturbation.

    ``magnify`` does not change the simulated probe; reconstruction starts
    from the true probe rescaled by this factor.
    """

    diameter: float
    support: int
    n_modes: int = 1
    mode_power_decay: float = 0.5
    defocus: float = 0.0
    wavelength: float = energy_to_wavelength(10.0)
    seed: int = 0
    magnify: float = 1.0

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError(f"diameter must be positive, got {self.diameter}")
        if self.support < 2:
            raise ValueError(f"support must be >= 2, got {self.support}")
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {self.n_modes}")
        if not 0 < self.mode_power_decay <= 1:
            raise ValueError(
                f"mode_power_decay must lie in (0, 1], got {self.mode_power_decay}"
            )
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if self.magnify <= 0:
            raise ValueError(f"magnify must be positive, got {self.magnify}")


@dataclass(frozen=True)
class GridSettings:
    """Scan-grid settings; lengths are in object pixels."""

    kind: str
    spacing: float
    extent: float
    margin: float
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("rectangular", "fermat"):
            raise ValueError(
                f"kind must be 'rectangular' or 'fermat', got {self.kind!r}"
            )
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.extent <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")


@dataclass(frozen=True)
class DataSettings:
    """Measurement noise settings."""

    photons_per_pattern: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.photons_per_pattern is not None and self.photons_per_pattern <= 0:
            raise ValueError(
                f"photons_per_pattern must be positive, got "
                f"{self.photons_per_pattern}"
            )


@dataclass(frozen=True)
class MetricsSettings:
    """Options for the evaluation report."""

    grid_period: float | None = None
    remove_ramp: bool = False

    def __post_init__(self):
        if self.grid_period is not None and self.grid_period < 2:
            raise ValueError(
                f"grid_period must be >= 2 px, got {self.grid_period}"
            )


_REQUIRED = object()


class _Section:
    """One JSON object being consumed key by key; leftovers are errors."""

    def __init__(self, mapping, path: str):
        if not isinstance(mapping, dict):
            raise JobConfigError(
                f"{path} must be a JSON object, got {type(mapping).__name__}"
            )
        self._pending = dict(mapping)
        self.path = path

    def take(self, key: str, default=_REQUIRED):
        if key in self._pending:
            return self._pending.pop(key)
        if default is _REQUIRED:
            raise JobConfigError(f"missing required key {self.path}.{key}")
        return default

    def has(self, key: str) -> bool:
        return key in self._pending

    def finish(self) -> None:
        if self._pending:
            names = ", ".join(repr(k) for k in sorted(self._pending))
            raise JobConfigError(f"unknown key(s) in {self.path}: {names}")


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise JobConfigError(f"{path} must be a boolean, got {value!r}")
    return value


def _as_int(value, path: str) -> int:
    # bool is an int subclass in Python; JSON true/false are not integers here
    if isinstance(value, bool) or not isinstance(value, int):
        raise JobConfigError(f"{path} must be an integer, got {value!r}")
    return value


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise JobConfigError(f"{path} must be a number, got {value!r}")
    return float(value)


def _as_str(value, path: str) -> str:
    if not isinstance(value, str):
        raise JobConfigError(f"{path} must be a string, got {value!r}")
    return value


def _as_pair(value, path: str) -> tuple[float, float]:
    if (not isinstance(value, (list, tuple)) or len(value) != 2):
        raise JobConfigError(f"{path} must be a two-element array, got {value!r}")
    return tuple(_as_float(v, f"{path}[{i}]") for i, v in enumerate(value))


def _existing_file(path_value: str, base_dir: str, path: str) -> str:
    resolved = os.path.normpath(
        os.path.join(base_dir, os.path.expanduser(path_value))
    )
    if not os.path.isfile(resolved):
        raise JobConfigError(f"{path} references missing file {resolved!r}")
    return resolved


def _wrap(path: str, builder, /, *args, **kwargs):
    """Build a validating dataclass, converting its ValueError to ours."""
    try:
        return builder(*args, **kwargs)
    except JobConfigError:
        raise
    except ValueError as exc:
        raise JobConfigError(f"{path}: {exc}") from exc


def _parse_phantom(raw, base_dir: str) -> PhantomSpec:
    sec = _Section(raw, "phantom")
    kind = _as_str(sec.take("kind"), "phantom.kind")
    size = _as_int(sec.take("size"), "phantom.size")
    phase_range = _as_pair(sec.take("phase_range", [-0.5, 0.5]), "phantom.phase_range")
    magnitude_range = _as_pair(
        sec.take("magnitude_range", [0.8, 1.0]), "phantom.magnitude_range"
    )
    seed = _as_int(sec.take("seed", 0), "phantom.seed")
    pixel_size = _as_float(sec.take("pixel_size", 10.0), "phantom.pixel_size")
    slice_spacing = _as_float(sec.take("slice_spacing", 0.0), "phantom.slice_spacing")
    files_raw = sec.take("files", None)
    sec.finish()
    files = None
    if files_raw is not None:
        if not isinstance(files_raw, list) or not files_raw:
            raise JobConfigError(
                f"phantom.files must be a non-empty array of paths, got {files_raw!r}"
            )
        files = tuple(
            _existing_file(_as_str(p, f"phantom.files[{i}]"), base_dir,
                           f"phantom.files[{i}]")
            for i, p in enumerate(files_raw)
        )
    return _wrap(
        "phantom", PhantomSpec,
        kind=kind, size=size, phase_range=phase_range,
        magnitude_range=magnitude_range, seed=seed, pixel_size=pixel_size,
        slice_spacing=slice_spacing, files=files,
    )


def _parse_probe(raw) -> ProbeSettings:
    sec = _Section(raw, "probe")
    diameter = _as_float(sec.take("diameter"), "probe.diameter")
    support = _as_int(sec.take("support"), "probe.support")
    n_modes = _as_int(sec.take("n_modes", 1), "probe.n_modes")
    decay = _as_float(sec.take("mode_power_decay", 0.5), "probe.mode_power_decay")
    defocus = _as_float(sec.take("defocus", 0.0), "probe.defocus")
    has_wavelength = sec.has("wavelength")
    has_energy = sec.has("energy_kev")
    if has_wavelength and has_energy:
        raise JobConfigError(
            "probe: give either wavelength or energy_kev, not both"
        )
    if has_wavelength:
        wavelength = _as_float(sec.take("wavelength"), "probe.wavelength")
    elif has_energy:
        energy = _as_float(sec.take("energy_kev"), "probe.energy_kev")
        if energy <= 0:
            raise JobConfigError(
                f"probe.energy_kev must be positive, got {energy}"
            )
        wavelength = energy_to_wavelength(energy)
    else:
        wavelength = energy_to_wavelength(10.0)
    seed = _as_int(sec.take("seed", 0), "probe.seed")
    magnify = _as_float(sec.take("magnify", 1.0), "probe.magnify")
    sec.finish()
    return _wrap(
        "probe", ProbeSettings,
        diameter=diameter, support=support, n_modes=n_modes,
        mode_power_decay=decay, defocus=defocus, wavelength=wavelength,
        seed=seed, magnify=magnify,
    )


def _parse_grid(raw, phantom: PhantomSpec, probe: ProbeSettings) -> GridSettings:
    sec = _Section(raw, "grid")
    kind = _as_str(sec.take("kind", "rectangular"), "grid.kind")
    spacing = _as_float(sec.take("spacing"), "grid.spacing")
    # positions are probe-patch corners, so the patch must stay inside the
    # object: default extent is the object size and margin the probe support
    extent_raw = sec.take("extent", None)
    extent = (float(phantom.size) if extent_raw is None
              else _as_float(extent_raw, "grid.extent"))
    margin_raw = sec.take("margin", None)
    margin = (float(probe.support) if margin_raw is None
              else _as_float(margin_raw, "grid.margin"))
    jitter = _as_float(sec.take("jitter", 0.0), "grid.jitter")
    seed = _as_int(sec.take("seed", 0), "grid.seed")
    sec.finish()
    if margin > extent:
        raise JobConfigError(
            f"grid.margin {margin} exceeds grid.extent {extent}; "
            "no room for scan positions"
        )
    return _wrap(
        "grid", GridSettings,
        kind=kind, spacing=spacing, extent=extent, margin=margin,
        jitter=jitter, seed=seed,
    )


def _parse_data(raw) -> DataSettings:
    sec = _Section(raw, "data")
    photons_raw = sec.take("photons_per_pattern", None)
    photons = (None if photons_raw is None
               else _as_float(photons_raw, "data.photons_per_pattern"))
    seed = _as_int(sec.take("seed", 0), "data.seed")
    sec.finish()
    return _wrap("data", DataSettings, photons_per_pattern=photons, seed=seed)


def _parse_metrics(raw) -> MetricsSettings:
    sec = _Section(raw, "metrics")
    period_raw = sec.take("grid_period", None)
    period = (None if period_raw is None
              else _as_float(period_raw, "metrics.grid_period"))
    remove_ramp = _as_bool(sec.take("remove_ramp", False), "metrics.remove_ramp")
    sec.finish()
    return _wrap(
        "metrics", MetricsSettings, grid_period=period, remove_ramp=remove_ramp
    )


def _parse_solver(raw) -> SolverConfig:
    sec = _Section(raw, "solver")
    kwargs = dict(
        algorithm=_as_str(sec.take("algorithm", "rpie"), "solver.algorithm"),
        n_iterations=_as_int(sec.take("n_iterations", 100), "solver.n_iterations"),
        batch_size=_as_int(sec.take("batch_size", 1), "solver.batch_size"),
        alpha_object=_as_float(sec.take("alpha_object", 0.5), "solver.alpha_object"),
        alpha_probe=_as_float(sec.take("alpha_probe", 0.5), "solver.alpha_probe"),
        update_probe=_as_bool(sec.take("update_probe", True), "solver.update_probe"),
        rng_seed=_as_int(sec.take("rng_seed", 0), "solver.rng_seed"),
    )
    sec.finish()
    return _wrap("solver", SolverConfig, **kwargs)


def _parse_pnp(raw) -> PnpConfig:
    sec = _Section(raw, "pnp")
    edit_last_raw = sec.take("edit_last_epoch", None)
    slices_raw = sec.take("stats_slices", None)
    stats_slices = None
    if slices_raw is not None:
        if not isinstance(slices_raw, list):
            raise JobConfigError(
                f"pnp.stats_slices must be an array of slice indices, "
                f"got {slices_raw!r}"
            )
        stats_slices = tuple(
            _as_int(v, f"pnp.stats_slices[{i}]") for i, v in enumerate(slices_raw)
        )
    kwargs = dict(
        tau=_as_float(sec.take("tau", 1e-5), "pnp.tau"),
        gamma=_as_float(sec.take("gamma", 0.8), "pnp.gamma"),
        n_inner=_as_int(sec.take("n_inner", 100), "pnp.n_inner"),
        n_outer=_as_int(sec.take("n_outer", 4), "pnp.n_outer"),
        edit_last_epoch=(None if edit_last_raw is None
                         else _as_int(edit_last_raw, "pnp.edit_last_epoch")),
        stats_match=_as_bool(sec.take("stats_match", False), "pnp.stats_match"),
        stats_mask_threshold=_as_float(
            sec.take("stats_mask_threshold", 0.5), "pnp.stats_mask_threshold"
        ),
        stats_slices=stats_slices,
        editor_optional=_as_bool(
            sec.take("editor_optional", False), "pnp.editor_optional"
        ),
        save_snapshots=_as_bool(
            sec.take("save_snapshots", False), "pnp.save_snapshots"
        ),
    )
    sec.finish()
    return _wrap("pnp", PnpConfig, **kwargs)


def _parse_request(raw) -> EditRequest:
    sec = _Section(raw, "editor.request")
    kwargs = dict(
        prompt=_as_str(sec.take("prompt", ""), "editor.request.prompt"),
        guidance_scale=_as_float(
            sec.take("guidance_scale", 5.0), "editor.request.guidance_scale"
        ),
        inference_steps=_as_int(
            sec.take("inference_steps", 100), "editor.request.inference_steps"
        ),
        seed=_as_int(sec.take("seed", 0), "editor.request.seed"),
        value_min=_as_float(sec.take("value_min", -3.141592653589793),
                            "editor.request.value_min"),
        value_max=_as_float(sec.take("value_max", 3.141592653589793),
                            "editor.request.value_max"),
    )
    sec.finish()
    return _wrap("editor.request", EditRequest, **kwargs)


def _parse_editor(raw, grid: GridSettings, base_dir: str) -> EditorSpec:
    sec = _Section(raw, "editor")
    kind = _as_str(sec.take("kind", "identity"), "editor.kind")
    params_raw = sec.take("parameters", {})
    request = _parse_request(sec.take("request", {}))
    sec.finish()
    params = _Section(params_raw, "editor.parameters")
    parameters: dict = {}
    if kind == "spectral_notch":
        # the reconstruction artifact sits at the scan period, so the grid
        # spacing is the natural default notch period
        parameters["grid_period_y"] = _as_float(
            params.take("grid_period_y", grid.spacing),
            "editor.parameters.grid_period_y",
        )
        parameters["grid_period_x"] = _as_float(
            params.take("grid_period_x", grid.spacing),
            "editor.parameters.grid_period_x",
        )
        parameters["neighborhood"] = _as_int(
            params.take("neighborhood", 5), "editor.parameters.neighborhood"
        )
    elif kind == "smooth_denoise":
        parameters["strength"] = _as_float(
            params.take("strength", 0.5), "editor.parameters.strength"
        )
    elif kind == "mask_oracle":
        parameters["mask_path"] = _existing_file(
            _as_str(params.take("mask_path"), "editor.parameters.mask_path"),
            base_dir, "editor.parameters.mask_path",
        )
        parameters["fill"] = _as_str(
            params.take("fill", "local_median"), "editor.parameters.fill"
        )
        parameters["fill_value"] = _as_float(
            params.take("fill_value", 0.0), "editor.parameters.fill_value"
        )
        parameters["window"] = _as_int(
            params.take("window", 9), "editor.parameters.window"
        )
    elif kind == "external":
        command_raw = params.take("command")
        if (not isinstance(command_raw, list) or not command_raw
                or not all(isinstance(c, str) for c in command_raw)):
            raise JobConfigError(
                "editor.parameters.command must be a non-empty array of "
                f"strings, got {command_raw!r}"
            )
        program = command_raw[0]
        if os.path.sep in program or os.path.isfile(program):
            program = _existing_file(program, base_dir,
                                     "editor.parameters.command[0]")
        elif shutil.which(program) is None:
            raise JobConfigError(
                f"editor.parameters.command[0] names {program!r}, which is "
                "neither an existing file nor on PATH"
            )
        parameters["command"] = [program, *command_raw[1:]]
        parameters["timeout"] = _as_float(
            params.take("timeout", 300.0), "editor.parameters.timeout"
        )
    params.finish()
    return _wrap(
        "editor", EditorSpec, kind=kind, parameters=parameters, request=request,
    )


@dataclass(frozen=True)
class JobConfig:
    """A fully validated job: every section resolved to typed settings."""

    output_dir: str
    phantom: PhantomSpec
    probe: ProbeSettings
    grid: GridSettings
    data: DataSettings = field(default_factory=DataSettings)
    solver: SolverConfig = field(default_factory=SolverConfig)
    pnp: PnpConfig = field(default_factory=PnpConfig)
    editor: EditorSpec = field(
        default_factory=lambda: EditorSpec(kind="identity")
    )
    metrics: MetricsSettings = field(default_factory=MetricsSettings)
    use_pnp: bool = False

    def as_dict(self) -> dict:
        """The resolved document: loading it back yields an equal config."""
        req = self.editor.request
        return {
            "output_dir": self.output_dir,
            "use_pnp": self.use_pnp,
            "phantom": {
                "kind": self.phantom.kind,
                "size": self.phantom.size,
                "phase_range": list(self.phantom.phase_range),
                "magnitude_range": list(self.phantom.magnitude_range),
                "seed": self.phantom.seed,
                "pixel_size": self.phantom.pixel_size,
                "slice_spacing": self.phantom.slice_spacing,
                "files": (None if self.phantom.files is None
                          else list(self.phantom.files)),
            },
            "probe": {
                "diameter": self.probe.diameter,
                "support": self.probe.support,
                "n_modes": self.probe.n_modes,
                "mode_power_decay": self.probe.mode_power_decay,
                "defocus": self.probe.defocus,
                "wavelength": self.probe.wavelength,
                "seed": self.probe.seed,
                "magnify": self.probe.magnify,
            },
            "grid": {
                "kind": self.grid.kind,
                "spacing": self.grid.spacing,
                "extent": self.grid.extent,
                "margin": self.grid.margin,
                "jitter": self.grid.jitter,
                "seed": self.grid.seed,
            },
            "data": {
                "photons_per_pattern": self.data.photons_per_pattern,
                "seed": self.data.seed,
            },
            "solver": {
                "algorithm": self.solver.algorithm,
                "n_iterations": self.solver.n_iterations,
                "batch_size": self.solver.batch_size,
                "alpha_object": self.solver.alpha_object,
                "alpha_probe": self.solver.alpha_probe,
                "update_probe": self.solver.update_probe,
                "rng_seed": self.solver.rng_seed,
            },
            "pnp": {
                "tau": self.pnp.tau,
                "gamma": self.pnp.gamma,
                "n_inner": self.pnp.n_inner,
                "n_outer": self.pnp.n_outer,
                "edit_last_epoch": self.pnp.edit_last_epoch,
                "stats_match": self.pnp.stats_match,
                "stats_mask_threshold": self.pnp.stats_mask_threshold,
                "stats_slices": (None if self.pnp.stats_slices is None
                                 else list(self.pnp.stats_slices)),
                "editor_optional": self.pnp.editor_optional,
                "save_snapshots": self.pnp.save_snapshots,
            },
            "editor": {
                "kind": self.editor.kind,
                "parameters": dict(self.editor.parameters),
                "request": {
                    "prompt": req.prompt,
                    "guidance_scale": req.guidance_scale,
                    "inference_steps": req.inference_steps,
                    "seed": req.seed,
                    "value_min": req.value_min,
                    "value_max": req.value_max,
                },
            },
            "metrics": {
                "grid_period": self.metrics.grid_period,
                "remove_ramp": self.metrics.remove_ramp,
            },
        }


def parse_job_config(document, base_dir: str = ".") -> JobConfig:
    """Validate a decoded JSON document against the strict job schema.

    Relative paths inside the document (output_dir, phantom files, editor
    mask or command) are resolved against ``base_dir``, normally the
    directory holding the config file.
    """
    top = _Section(document, "config")
    base_dir = os.path.abspath(base_dir)
    output_dir = _as_str(top.take("output_dir"), "output_dir")
    output_dir = os.path.normpath(
        os.path.join(base_dir, os.path.expanduser(output_dir))
    )
    phantom = _parse_phantom(top.take("phantom"), base_dir)
    probe = _parse_probe(top.take("probe"))
    grid = _parse_grid(top.take("grid"), phantom, probe)
    data = _parse_data(top.take("data", {}))
    solver = _parse_solver(top.take("solver", {}))
    pnp = _parse_pnp(top.take("pnp", {}))
    editor = _parse_editor(top.take("editor", {}), grid, base_dir)
    metrics = _parse_metrics(top.take("metrics", {}))
    use_pnp = _as_bool(top.take("use_pnp", False), "use_pnp")
    top.finish()
    return JobConfig(
        output_dir=output_dir, phantom=phantom, probe=probe, grid=grid,
        data=data, solver=solver, pnp=pnp, editor=editor, metrics=metrics,
        use_pnp=use_pnp,
    )


def load_job_config(path) -> JobConfig:
    """Read and validate a job config file; errors become JobConfigError."""
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except FileNotFoundError as exc:
        raise JobConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise JobConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_job_config(document, base_dir=os.path.dirname(path) or ".")

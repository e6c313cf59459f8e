"""Command-line surface tying the simulation and reconstruction pipeline together.

Subcommands: ``simulate`` (job config to dataset plus ground truth),
``reconstruct`` (dataset to object/probe, optionally through the outer
editing loop), ``edit`` (one image through the configured editor),
``metrics`` (reconstruction vs truth report), ``spectrum`` (log-magnitude
spectrum for grid diagnosis), and ``validate-config``.

Exit codes: 0 on success, 1 on configuration or validation errors
(including unknown flags), 2 on runtime or editor failures.  Every
config-driven run echoes its fully resolved configuration to
``manifest.json`` in the output directory; that manifest is itself a
valid config, so ``--config manifest.json`` reruns the job.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace

import numpy as np

from .core import (
    DiffractionDataset,
    ObjectModel,
    ProbeModel,
    ScanGrid,
    validate_problem,
)
from .editors import EditorSpec, ExternalEditError, build_editor
from .jobconfig import JobConfig, JobConfigError, load_job_config
from .metrics import evaluate_reconstruction
from .npyio import NpyError, npy_read, npy_write
from .pnp import PnpEditError, run_pnp
from .simulate import make_phantom, make_probe, make_scan_grid, perturb_probe, simulate_dataset
from .solvers import run_solver

__all__ = ["main"]


class _UsageError(Exception):
    """Bad command line; argparse message already printed."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _write_json(path, payload) -> None:
    """Atomic JSON write: temp file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_input(path, what: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise JobConfigError(f"{what} not found: {path}")
    try:
        return npy_read(path)
    except NpyError as exc:
        raise JobConfigError(f"cannot read {what} {path}: {exc}") from exc


def _load_config(args) -> JobConfig:
    cfg = load_job_config(args.config)
    if getattr(args, "output_dir", None):
        cfg = replace(cfg, output_dir=os.path.abspath(args.output_dir))
    if getattr(args, "pnp", False):
        cfg = replace(cfg, use_pnp=True)
    editor_kind = getattr(args, "editor", None)
    if editor_kind and editor_kind != cfg.editor.kind:
        # changing the kind drops kind-specific parameters; re-derive the
        # notch default from the scan grid like the config parser does
        parameters = {}
        if editor_kind == "spectral_notch":
            parameters = {
                "grid_period_y": cfg.grid.spacing,
                "grid_period_x": cfg.grid.spacing,
                "neighborhood": 5,
            }
        try:
            spec = EditorSpec(
                kind=editor_kind, parameters=parameters,
                request=cfg.editor.request,
            )
        except ValueError as exc:
            raise JobConfigError(f"--editor {editor_kind}: {exc}") from exc
        cfg = replace(cfg, editor=spec)
    return cfg


def _manifest(cfg: JobConfig) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_json(os.path.join(cfg.output_dir, "manifest.json"), cfg.as_dict())


def _phantom_layout(cfg: JobConfig) -> tuple[int, tuple[float, ...]]:
    """Slice count and inter-slice spacings implied by the phantom section."""
    if cfg.phantom.kind == "textured_single_slice":
        n = 1
    elif cfg.phantom.kind == "cells_and_rods_two_slice":
        n = 2
    else:
        n = len(cfg.phantom.files)
    spacings = (cfg.phantom.slice_spacing,) * (n - 1)
    return n, spacings


def _as_object(arr: np.ndarray, cfg: JobConfig) -> ObjectModel:
    stack = np.asarray(arr, dtype=np.complex128)
    if stack.ndim == 2:
        stack = stack[np.newaxis]
    spacings = (cfg.phantom.slice_spacing,) * (stack.shape[0] - 1)
    return ObjectModel(stack, pixel_size=cfg.phantom.pixel_size,
                       slice_spacings=spacings)


# --- subcommands ------------------------------------------------------------


def _cmd_validate_config(args) -> int:
    cfg = _load_config(args)
    print(f"config OK: output_dir={cfg.output_dir}")
    return 0


def _build_problem(cfg: JobConfig):
    """Phantom, true probe, and scan grid from a validated config."""
    try:
        obj = make_phantom(cfg.phantom)
        probe = make_probe(
            cfg.probe.diameter, cfg.probe.support,
            wavelength=cfg.probe.wavelength, pixel_size=cfg.phantom.pixel_size,
            n_modes=cfg.probe.n_modes,
            mode_power_decay=cfg.probe.mode_power_decay,
            defocus=cfg.probe.defocus, seed=cfg.probe.seed,
        )
        grid = make_scan_grid(
            cfg.grid.kind, cfg.grid.spacing, cfg.grid.extent,
            margin=cfg.grid.margin, jitter=cfg.grid.jitter, seed=cfg.grid.seed,
        )
    except ValueError as exc:
        raise JobConfigError(str(exc)) from exc
    return obj, probe, grid


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    obj, probe, grid = _build_problem(cfg)
    try:
        data = simulate_dataset(
            obj, probe, grid,
            photons_per_pattern=cfg.data.photons_per_pattern,
            seed=cfg.data.seed,
        )
    except ValueError as exc:
        raise JobConfigError(str(exc)) from exc
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    npy_write(os.path.join(out, "dataset.npy"), data.patterns)
    npy_write(os.path.join(out, "positions.npy"), grid.positions)
    npy_write(os.path.join(out, "truth.npy"),
              obj.slices.astype(np.complex64))
    npy_write(os.path.join(out, "truth_phase.npy"),
              obj.phase().astype(np.float32))
    npy_write(os.path.join(out, "truth_magnitude.npy"),
              obj.magnitude().astype(np.float32))
    npy_write(os.path.join(out, "probe.npy"),
              probe.modes.astype(np.complex64))
    _manifest(cfg)
    print(f"simulated {len(data)} patterns "
          f"({data.pattern_shape[0]}x{data.pattern_shape[1]}) -> {out}")
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    out = cfg.output_dir
    patterns = _read_input(os.path.join(out, "dataset.npy"), "dataset")
    positions = _read_input(os.path.join(out, "positions.npy"), "scan positions")
    probe_modes = _read_input(os.path.join(out, "probe.npy"), "probe")
    try:
        data = DiffractionDataset(patterns)
        grid = ScanGrid(positions)
        true_probe = ProbeModel(probe_modes, wavelength=cfg.probe.wavelength)
        init_probe = (perturb_probe(true_probe, cfg.probe.magnify)
                      if cfg.probe.magnify != 1.0 else true_probe)
        n_slices, spacings = _phantom_layout(cfg)
        init_obj = ObjectModel(
            np.ones((n_slices, cfg.phantom.size, cfg.phantom.size),
                    dtype=np.complex128),
            pixel_size=cfg.phantom.pixel_size, slice_spacings=spacings,
        )
    except ValueError as exc:
        raise JobConfigError(str(exc)) from exc

    report = validate_problem(init_obj, init_probe, grid, data)
    if not report:
        for violation in report.violations:
            print(f"validation: {violation}", file=sys.stderr)
        return 1

    history: dict
    if cfg.use_pnp:
        try:
            editor = build_editor(cfg.editor)
        except (ValueError, NpyError) as exc:
            raise JobConfigError(f"cannot build editor: {exc}") from exc
        pnp_cfg = replace(cfg.pnp, editor=cfg.editor)
        result = run_pnp(pnp_cfg, cfg.solver, grid, data, init_obj,
                         init_probe, editor)
        final_obj, final_probe = result.final_object, result.final_probe
        history = {
            "mode": "pnp",
            "editor_kind": cfg.editor.kind,
            "per_epoch_loss": list(result.per_epoch_loss),
            "consensus_history": list(result.consensus_history),
            "inner_loss_history": list(result.inner_loss_history),
            "warnings": list(result.warnings),
        }
    else:
        state = run_solver(init_obj, init_probe, grid, data, cfg.solver)
        final_obj, final_probe = state.object, state.probe
        history = {
            "mode": "vanilla",
            "loss_history": list(state.loss_history),
        }

    npy_write(os.path.join(out, "recon_object.npy"),
              final_obj.slices.astype(np.complex64))
    npy_write(os.path.join(out, "recon_phase.npy"),
              final_obj.phase().astype(np.float32))
    npy_write(os.path.join(out, "recon_magnitude.npy"),
              final_obj.magnitude().astype(np.float32))
    npy_write(os.path.join(out, "recon_probe.npy"),
              final_probe.modes.astype(np.complex64))
    _write_json(os.path.join(out, "history.json"), history)
    _manifest(cfg)

    truth_path = os.path.join(out, "truth.npy")
    if os.path.isfile(truth_path):
        metrics_report = _evaluate(cfg, final_obj.slices,
                                   npy_read(truth_path),
                                   data=data, probe=final_probe, grid=grid)
        _write_json(os.path.join(out, "metrics.json"),
                    metrics_report.as_dict())
        psnr = ", ".join(f"{p:.2f}" for p in metrics_report.psnr_db)
        print(f"reconstruction -> {out} (psnr_db: {psnr})")
    else:
        print(f"reconstruction -> {out} (no truth.npy; metrics skipped)")
    return 0


def _evaluate(cfg: JobConfig, recon_arr, truth_arr, *,
              data=None, probe=None, grid=None):
    recon = _as_object(recon_arr, cfg)
    truth = _as_object(truth_arr, cfg)
    period = cfg.metrics.grid_period
    if period is None and cfg.grid.kind == "rectangular":
        period = cfg.grid.spacing
    pair = None if period is None else (period, period)
    try:
        return evaluate_reconstruction(
            recon, truth, grid_period=pair,
            remove_ramp=cfg.metrics.remove_ramp,
            data=data, probe=probe, grid=grid,
        )
    except ValueError as exc:
        raise JobConfigError(f"cannot evaluate reconstruction: {exc}") from exc


def _consistency_inputs(cfg: JobConfig):
    """Dataset, probe, and grid for data-consistency metrics, if on disk.

    The refined probe from a prior reconstruction is preferred over the
    simulation probe; missing files simply disable the consistency error
    rather than failing the metrics run.
    """
    out = cfg.output_dir
    paths = [os.path.join(out, "dataset.npy"),
             os.path.join(out, "positions.npy")]
    probe_path = os.path.join(out, "recon_probe.npy")
    if not os.path.isfile(probe_path):
        probe_path = os.path.join(out, "probe.npy")
    paths.append(probe_path)
    if not all(os.path.isfile(p) for p in paths):
        return None, None, None
    try:
        data = DiffractionDataset(npy_read(paths[0]))
        grid = ScanGrid(npy_read(paths[1]))
        probe = ProbeModel(npy_read(paths[2]), wavelength=cfg.probe.wavelength)
    except (ValueError, NpyError) as exc:
        raise JobConfigError(f"cannot load data-consistency inputs: {exc}") from exc
    return data, probe, grid


def _cmd_metrics(args) -> int:
    cfg = _load_config(args)
    out = cfg.output_dir
    recon_path = args.recon or os.path.join(out, "recon_object.npy")
    truth_path = args.truth or os.path.join(out, "truth.npy")
    recon = _read_input(recon_path, "reconstruction")
    truth = _read_input(truth_path, "ground truth")
    data, probe, grid = _consistency_inputs(cfg)
    report = _evaluate(cfg, recon, truth, data=data, probe=probe, grid=grid)
    payload = report.as_dict()
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "metrics.json"), payload)
    _manifest(cfg)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_edit(args) -> int:
    cfg = _load_config(args)
    image = _read_input(args.input, "input image")
    if image.ndim != 2:
        raise JobConfigError(
            f"edit needs a 2D image, got shape {image.shape}"
        )
    try:
        editor = build_editor(cfg.editor)
    except (ValueError, NpyError) as exc:
        raise JobConfigError(f"cannot build editor: {exc}") from exc
    edited = editor.edit(image.astype(np.float64), cfg.editor.request)
    npy_write(args.output, np.asarray(edited, dtype=np.float32))
    _manifest(cfg)
    print(f"edited image ({cfg.editor.kind}) -> {args.output}")
    return 0


def _cmd_spectrum(args) -> int:
    image = _read_input(args.input, "input image")
    if image.ndim == 3:
        image = image[0]
    if np.iscomplexobj(image):
        arr = np.angle(image).astype(np.float64)
    else:
        arr = np.asarray(image, dtype=np.float64)
    centered = arr - arr.mean()
    magnitude = np.abs(np.fft.fftshift(np.fft.fft2(centered)))
    spectrum = np.log10(magnitude + 1e-12).astype(np.float32)
    npy_write(args.output, spectrum)
    if args.config:
        _manifest(_load_config(args))
    print(f"log-magnitude spectrum -> {args.output}")
    return 0


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ptyclean",
        description="Simulate, reconstruct, and de-artifact ptychographic phase images.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_text, *, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required,
                       help="job config JSON file")
        p.set_defaults(func=func)
        return p

    p = add("validate-config", _cmd_validate_config,
            "check a job config against the schema")

    p = add("simulate", _cmd_simulate,
            "generate phantom, probe, scan grid, and diffraction data")
    p.add_argument("--output-dir", help="override the config's output_dir")

    p = add("reconstruct", _cmd_reconstruct,
            "run phase retrieval on a simulated dataset")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--pnp", action="store_true",
                   help="interleave solver epochs with the configured editor")
    p.add_argument("--editor", choices=(
        "identity", "spectral_notch", "smooth_denoise", "mask_oracle",
        "external"), help="override the configured editor kind")

    p = add("edit", _cmd_edit, "run one image through the configured editor")
    p.add_argument("--input", required=True, help="input image (.npy)")
    p.add_argument("--output", required=True, help="output image (.npy)")
    p.add_argument("--editor", choices=(
        "identity", "spectral_notch", "smooth_denoise", "mask_oracle",
        "external"), help="override the configured editor kind")

    p = add("metrics", _cmd_metrics,
            "compare a reconstruction against ground truth")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--recon", help="reconstruction .npy "
                   "(default: OUTPUT_DIR/recon_object.npy)")
    p.add_argument("--truth", help="ground-truth .npy "
                   "(default: OUTPUT_DIR/truth.npy)")

    p = add("spectrum", _cmd_spectrum,
            "write the log-magnitude spectrum of an image",
            config_required=False)
    p.add_argument("--input", required=True, help="input image (.npy)")
    p.add_argument("--output", required=True, help="output spectrum (.npy)")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help and friends
        return exc.code if isinstance(exc.code, int) else 0
    try:
        return args.func(args)
    except JobConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PnpEditError, ExternalEditError) as exc:
        print(f"editor failure: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # runtime failures keep the exit-code contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

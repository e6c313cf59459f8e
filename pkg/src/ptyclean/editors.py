"""Single-shot artifact-removal editors and the external-process protocol.

An editor maps an H×W real image to an H×W real finite image in one call.
Built-in editors are classical (spectral notching, median masking, light
smoothing); arbitrary external editors run as child processes exchanging
``input.npy`` / ``request.json`` / ``output.npy`` files, so they can be
written in any language.
"""

from __future__ import annotations

import json
import os
import shlex
import shutil
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import EditRequest
from .npyio import NpyError, npy_read, npy_write

__all__ = [
    "Editor",
    "IdentityEditor",
    "SpectralNotchEditor",
    "SmoothDenoiseEditor",
    "MaskOracleEditor",
    "ExternalEditor",
    "EditorSpec",
    "build_editor",
    "spectral_notch",
    "in_loop_spectral_filter",
    "mask_oracle_edit",
    "smooth_denoise",
    "external_edit",
    "ExternalEditError",
    "EditorProcessError",
    "EditorTimeoutError",
    "EditorOutputError",
    "EditorShapeError",
]

_KINDS = ("identity", "spectral_notch", "smooth_denoise", "mask_oracle", "external")


@dataclass(frozen=True, eq=False)
class EditorSpec:
    """Declarative editor selection: kind plus kind-specific parameters."""

    kind: str
    parameters: dict = field(default_factory=dict)
    request: EditRequest = field(default_factory=EditRequest)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown editor kind {self.kind!r}; known: {_KINDS}")
        object.__setattr__(self, "parameters", dict(self.parameters))
        if self.kind == "external" and not self.parameters.get("command"):
            raise ValueError("external editor requires a non-empty command")


class Editor:
    """Base class: a one-shot map from a real image to a real image."""

    def edit(self, image: np.ndarray, request: EditRequest) -> np.ndarray:
        raise NotImplementedError


def _check_real_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


# --- spectral notch ---------------------------------------------------------


def _harmonic_centers(extent: int, period: float) -> list[int]:
    """Centered-spectrum row/col offsets of all harmonics k/period, k != 0."""
    step = extent / period
    centers = []
    k = 1
    while True:
        off = int(round(k * step))
        lo, hi = -(extent // 2), (extent - 1) // 2
        if off > max(abs(lo), hi):
            break
        for signed in (off, -off):
            if lo <= signed <= hi:
                centers.append(signed)
        k += 1
    return sorted(set(centers))


def _notch_mask(
    shape: tuple[int, int],
    period_y: float,
    period_x: float,
    neighborhood: int,
) -> np.ndarray:
    """Boolean mask of zeroed bins in the centered spectrum.

    Covers the (neighborhood x neighborhood) block around every grid
    harmonic (k/period_y, l/period_x) with (k, l) != (0, 0), then
    symmetrizes under frequency negation so filtering a real image yields
    an exactly real result with the notched bins exactly zero.
    """
    if period_y < 2 or period_x < 2:
        raise ValueError(
            f"grid periods must be >= 2 px, got ({period_y}, {period_x})"
        )
    if neighborhood < 1 or neighborhood % 2 == 0:
        raise ValueError(f"neighborhood must be odd and >= 1, got {neighborhood}")
    h, w = shape
    cy, cx = h // 2, w // 2
    half = neighborhood // 2
    offs_y = [0] + _harmonic_centers(h, period_y)
    offs_x = [0] + _harmonic_centers(w, period_x)
    mask = np.zeros(shape, dtype=bool)
    for oy in offs_y:
        for ox in offs_x:
            if oy == 0 and ox == 0:
                continue
            r, c = cy + oy, cx + ox
            if abs(oy) <= half and abs(ox) <= half:
                raise ValueError(
                    "notch neighborhood would cover the DC component; "
                    "shrink the neighborhood or check the periods"
                )
            mask[max(0, r - half):r + half + 1,
                 max(0, c - half):c + half + 1] = True
    # mirror under f -> -f (centered index r -> (2*cy - r) mod n) so the
    # zeroed set respects Hermitian symmetry
    neg_y = (2 * cy - np.arange(h)) % h
    neg_x = (2 * cx - np.arange(w)) % w
    mask |= mask[np.ix_(neg_y, neg_x)]
    if mask[cy, cx]:
        raise ValueError(
            "notch neighborhood would cover the DC component; "
            "shrink the neighborhood or check the periods"
        )
    return mask


def spectral_notch(
    phase: np.ndarray,
    grid_period_y: float,
    grid_period_x: float,
    neighborhood: int = 5,
) -> np.ndarray:
    """Zero the spectrum around every grid harmonic and transform back.

    Harmonics are the frequencies (k/grid_period_y, l/grid_period_x) for
    all integer (k, l) except (0, 0); around each, a neighborhood-sized
    square of the centered spectrum is set to zero. The DC component is
    never touched, so the image mean is preserved.
    """
    arr = _check_real_image(phase, "phase")
    mask = _notch_mask(arr.shape, grid_period_y, grid_period_x, neighborhood)
    spectrum = np.fft.fftshift(np.fft.fft2(arr))
    spectrum[mask] = 0.0
    return np.real(np.fft.ifft2(np.fft.ifftshift(spectrum)))


def in_loop_spectral_filter(
    every_k: int,
    grid_period_y: float,
    grid_period_x: float,
    neighborhood: int = 5,
):
    """Periodic in-solver phase filter, for the classical baseline mode.

    Returns a callback ``(slices, iteration, n_total) -> slices | None``
    suitable for the solver's per-iteration hook. It notches the phase of
    every object slice (magnitudes untouched) after iterations that are
    multiples of ``every_k``, skipping the final iteration.
    """
    if every_k < 1:
        raise ValueError(f"every_k must be >= 1, got {every_k}")

    def callback(slices: np.ndarray, iteration: int, n_total: int):
        if iteration % every_k != 0 or iteration == n_total:
            return None
        out = np.empty_like(slices)
        for j in range(slices.shape[0]):
            filtered = spectral_notch(
                np.angle(slices[j]), grid_period_y, grid_period_x, neighborhood
            )
            out[j] = np.abs(slices[j]) * np.exp(1j * filtered)
        return out

    return callback


# --- mask oracle ------------------------------------------------------------


def mask_oracle_edit(
    phase: np.ndarray,
    mask: np.ndarray,
    fill: str = "local_median",
    fill_value: float = 0.0,
    window: int = 9,
) -> np.ndarray:
    """Replace masked pixels by a fill value; unmasked pixels untouched.

    ``local_median`` fills each masked pixel with the median of unmasked
    pixels in a window around it (falling back to the global unmasked
    median when the window holds none); ``constant`` uses ``fill_value``.
    """
    arr = _check_real_image(phase, "phase")
    msk = np.asarray(mask).astype(bool)
    if msk.shape != arr.shape:
        raise ValueError(
            f"mask shape {msk.shape} does not match image shape {arr.shape}"
        )
    if fill not in ("local_median", "constant"):
        raise ValueError(f"fill must be 'local_median' or 'constant', got {fill!r}")
    out = arr.copy()
    if not np.any(msk):
        return out
    if fill == "constant":
        out[msk] = fill_value
        return out
    if np.all(msk):
        raise ValueError("local_median fill needs at least one unmasked pixel")
    half = window // 2
    holed = np.where(msk, np.nan, arr)
    padded = np.pad(holed, half, mode="constant", constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (window, window)
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        local = np.nanmedian(windows[msk], axis=(-2, -1))
    local = np.where(np.isnan(local), np.nanmedian(holed), local)
    out[msk] = local
    return out


# --- smoothing --------------------------------------------------------------


def smooth_denoise(image: np.ndarray, strength: float = 0.5, n_steps: int = 10) -> np.ndarray:
    """Edge-respecting smoothing by a few explicit total-variation flow steps.

    ``strength`` in [0, 1] scales the total diffusion; 0 is the identity.
    A weak classical baseline, not a serious denoiser.
    """
    arr = _check_real_image(image)
    if not 0 <= strength <= 1:
        raise ValueError(f"strength must lie in [0, 1], got {strength}")
    if strength == 0:
        return arr.copy()
    eps = 1e-6
    scale = np.std(arr) + eps
    u = arr / scale
    dt = 0.2 * strength / n_steps * 5.0
    for _ in range(n_steps):
        gy = np.diff(u, axis=0, append=u[-1:, :])
        gx = np.diff(u, axis=1, append=u[:, -1:])
        norm = np.sqrt(gy**2 + gx**2 + eps)
        py, px = gy / norm, gx / norm
        div = (py - np.vstack([py[:1, :] * 0, py[:-1, :]])
               + px - np.hstack([px[:, :1] * 0, px[:, :-1]]))
        u = u + dt * div
    return u * scale


# --- external process protocol ----------------------------------------------


class ExternalEditError(RuntimeError):
    """Base class for failures of an external editor invocation."""


class EditorProcessError(ExternalEditError):
    """The editor process exited with a nonzero status."""


class EditorTimeoutError(ExternalEditError):
    """The editor process exceeded its time budget."""


class EditorOutputError(ExternalEditError):
    """The editor produced no output file, or an unreadable/invalid one."""


class EditorShapeError(ExternalEditError):
    """The editor's output shape does not match the input."""


def _request_payload(request: EditRequest, shape: tuple[int, int]) -> dict:
    return {
        "prompt": request.prompt,
        "guidance_scale": float(request.guidance_scale),
        "inference_steps": int(request.inference_steps),
        "seed": int(request.seed),
        "height": int(shape[0]),
        "width": int(shape[1]),
        "mode": "remove",
    }


def external_edit(
    image: np.ndarray,
    command,
    request: EditRequest,
    timeout: float = 300.0,
) -> np.ndarray:
    """Run one edit through an external process.

    Writes ``input.npy`` (float32) and ``request.json`` into a fresh
    working directory, invokes ``command`` with that directory as its
    single argument, and reads back ``output.npy``. Values outside [0, 1]
    are clamped with a warning. Process failure, timeout, bad output, and
    shape mismatch raise distinct errors carrying captured diagnostics.
    """
    arr = _check_real_image(image)
    if isinstance(command, str):
        argv = shlex.split(command)
    else:
        argv = [str(c) for c in command]
    if not argv:
        raise ValueError("external editor command is empty")
    workdir = tempfile.mkdtemp(prefix="editor-")
    try:
        npy_write(os.path.join(workdir, "input.npy"), arr.astype(np.float32))
        with open(os.path.join(workdir, "request.json"), "w", encoding="utf-8") as fh:
            json.dump(_request_payload(request, arr.shape), fh, indent=2)
        try:
            proc = subprocess.run(
                argv + [workdir],
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise EditorTimeoutError(
                f"editor timed out after {timeout:g} s: {' '.join(argv)}"
            ) from exc
        except OSError as exc:
            raise EditorProcessError(
                f"editor process failed to start: {exc}"
            ) from exc
        if proc.returncode != 0:
            raise EditorProcessError(
                f"editor process failed with exit code {proc.returncode}\n"
                f"stdout: {proc.stdout.strip()}\nstderr: {proc.stderr.strip()}"
            )
        out_path = os.path.join(workdir, "output.npy")
        if not os.path.exists(out_path):
            raise EditorOutputError(
                f"editor wrote no output.npy\nstdout: {proc.stdout.strip()}\n"
                f"stderr: {proc.stderr.strip()}"
            )
        try:
            out = npy_read(out_path)
        except NpyError as exc:
            raise EditorOutputError(f"invalid output.npy: {exc}") from exc
        if out.ndim != 2 or out.shape != arr.shape:
            raise EditorShapeError(
                f"editor output shape {out.shape} does not match input "
                f"{arr.shape}"
            )
        out = out.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise EditorOutputError("editor output contains non-finite values")
        if np.any(out < 0) or np.any(out > 1):
            warnings.warn(
                "editor output outside [0, 1]; clamping", stacklevel=2
            )
            out = np.clip(out, 0.0, 1.0)
        return out
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


# --- editor classes ---------------------------------------------------------


class IdentityEditor(Editor):
    def edit(self, image, request):
        return _check_real_image(image).copy()


class SpectralNotchEditor(Editor):
    def __init__(self, grid_period_y, grid_period_x, neighborhood=5):
        self.grid_period_y = float(grid_period_y)
        self.grid_period_x = float(grid_period_x)
        self.neighborhood = int(neighborhood)

    def edit(self, image, request):
        return spectral_notch(
            image, self.grid_period_y, self.grid_period_x, self.neighborhood
        )


class SmoothDenoiseEditor(Editor):
    def __init__(self, strength=0.5):
        self.strength = float(strength)

    def edit(self, image, request):
        return smooth_denoise(image, self.strength)


class MaskOracleEditor(Editor):
    def __init__(self, mask, fill="local_median", fill_value=0.0, window=9):
        self.mask = np.asarray(mask).astype(bool)
        self.fill = fill
        self.fill_value = float(fill_value)
        self.window = int(window)

    def edit(self, image, request):
        return mask_oracle_edit(
            image, self.mask, self.fill, self.fill_value, self.window
        )


class ExternalEditor(Editor):
    def __init__(self, command, timeout=300.0):
        self.command = command
        self.timeout = float(timeout)

    def edit(self, image, request):
        return external_edit(image, self.command, request, self.timeout)


def build_editor(spec: EditorSpec) -> Editor:
    """Instantiate the editor described by a spec."""
    p = spec.parameters
    if spec.kind == "identity":
        return IdentityEditor()
    if spec.kind == "spectral_notch":
        return SpectralNotchEditor(
            p["grid_period_y"], p["grid_period_x"], p.get("neighborhood", 5)
        )
    if spec.kind == "smooth_denoise":
        return SmoothDenoiseEditor(p.get("strength", 0.5))
    if spec.kind == "mask_oracle":
        mask = p.get("mask")
        if mask is None:
            mask = npy_read(p["mask_path"])
        return MaskOracleEditor(
            mask, p.get("fill", "local_median"),
            p.get("fill_value", 0.0), p.get("window", 9),
        )
    if spec.kind == "external":
        return ExternalEditor(p["command"], p.get("timeout", 300.0))
    raise ValueError(f"unknown editor kind {spec.kind!r}")

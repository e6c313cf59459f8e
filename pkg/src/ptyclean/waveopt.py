"""Physical forward model: far-field transforms, Fresnel propagation,
patch extraction, exit waves, and detector intensities.

All transforms use orthonormal (unitary) FFT normalization so energies are
preserved exactly. The far-field transform is centered: zero frequency sits
at the array center in both domains. Every function here is pure; the only
shared state is an internal memo of Fresnel kernels, which is populated once
per (shape, distance, wavelength, pixel size) combination and immutable after
construction.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .core import ObjectModel, ProbeModel

__all__ = [
    "far_field",
    "ifar_field",
    "fresnel_propagate",
    "PropagatorCache",
    "get_propagator",
    "extract_patch",
    "place_patch_adjoint",
    "ExitWaveTrace",
    "exit_wave",
    "predict_intensity",
    "overlap_ratio",
    "depth_of_field",
]

_AXES = (-2, -1)


def _check_finite(wave: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(wave)
    if arr.ndim < 2:
        raise ValueError(f"{name} must be at least 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def far_field(wave: np.ndarray) -> np.ndarray:
    """Centered unitary 2D Fourier transform over the last two axes.

    Zero frequency maps from the array center to the array center, and
    total energy is preserved (Parseval). Stacks of images are transformed
    image-by-image.
    """
    arr = _check_finite(wave, "wave")
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(arr, axes=_AXES), axes=_AXES, norm="ortho"),
        axes=_AXES,
    )


def ifar_field(wave: np.ndarray) -> np.ndarray:
    """Inverse of :func:`far_field`."""
    arr = _check_finite(wave, "wave")
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(arr, axes=_AXES), axes=_AXES, norm="ortho"),
        axes=_AXES,
    )


@dataclass(frozen=True, eq=False)
class PropagatorCache:
    """Precomputed Fresnel kernel for one (shape, distance, λ, pixel) tuple.

    ``transfer_function`` is the pure-phase paraxial kernel
    exp(−iπλd(fx²+fy²)) sampled in natural FFT order, so its modulus is 1
    everywhere. ``band_mask`` zeroes frequencies that would alias when the
    propagation distance exceeds the critical distance N·dx²/λ for an axis;
    it is all-ones below that distance.
    """

    transfer_function: np.ndarray
    band_mask: np.ndarray
    distance: float
    wavelength: float
    pixel_size: float

    def apply(self, wave: np.ndarray) -> np.ndarray:
        spectrum = np.fft.fft2(wave, axes=_AXES, norm="ortho")
        spectrum *= self.transfer_function * self.band_mask
        return np.fft.ifft2(spectrum, axes=_AXES, norm="ortho")


@functools.lru_cache(maxsize=128)
def get_propagator(
    shape: tuple[int, int],
    distance: float,
    wavelength: float,
    pixel_size: float,
) -> PropagatorCache:
    """Build (or fetch a memoized) Fresnel kernel."""
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if pixel_size <= 0:
        raise ValueError(f"pixel_size must be positive, got {pixel_size}")
    h, w = shape
    fy = np.fft.fftfreq(h, d=pixel_size)[:, np.newaxis]
    fx = np.fft.fftfreq(w, d=pixel_size)[np.newaxis, :]
    kernel = np.exp(-1j * np.pi * wavelength * distance * (fy**2 + fx**2))
    mask = np.ones(shape, dtype=np.float64)
    # beyond the critical distance the kernel phase changes by more than pi
    # between frequency samples; clip each axis to its alias-free band
    d_abs = abs(distance)
    for extent, freq in ((h, fy), (w, fx)):
        d_crit = extent * pixel_size**2 / wavelength
        if d_abs > d_crit:
            limit = extent * pixel_size / (2.0 * wavelength * d_abs)
            mask = mask * (np.abs(freq) <= limit)
    kernel.flags.writeable = False
    mask.flags.writeable = False
    return PropagatorCache(
        transfer_function=kernel,
        band_mask=mask,
        distance=float(distance),
        wavelength=float(wavelength),
        pixel_size=float(pixel_size),
    )


def fresnel_propagate(
    wave: np.ndarray,
    distance: float,
    wavelength: float,
    pixel_size: float,
) -> np.ndarray:
    """Angular-spectrum Fresnel propagation over a signed distance in nm.

    Negative distances back-propagate. Distance zero returns the input
    unchanged (identity kernel).
    """
    arr = _check_finite(wave, "wave")
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if pixel_size <= 0:
        raise ValueError(f"pixel_size must be positive, got {pixel_size}")
    if distance == 0:
        return arr.astype(np.complex128, copy=True)
    prop = get_propagator(arr.shape[-2:], float(distance), float(wavelength),
                          float(pixel_size))
    return prop.apply(arr.astype(np.complex128, copy=False))


def _split_position(position) -> tuple[int, int, float, float]:
    y, x = float(position[0]), float(position[1])
    iy, ix = int(np.floor(y)), int(np.floor(x))
    return iy, ix, y - iy, x - ix


def extract_patch(slice_: np.ndarray, position, shape: tuple[int, int]) -> np.ndarray:
    """Window of ``shape`` from a 2D field at a (y, x) top-left offset.

    Integer offsets return the exact submatrix. Fractional offsets use
    bilinear interpolation of real and imaginary parts, which reads one
    extra row/column past the window.
    """
    arr = np.asarray(slice_)
    ph, pw = shape
    iy, ix, fy, fx = _split_position(position)
    margin_y = 0 if fy == 0 else 1
    margin_x = 0 if fx == 0 else 1
    if (iy < 0 or ix < 0 or iy + ph + margin_y > arr.shape[0]
            or ix + pw + margin_x > arr.shape[1]):
        raise ValueError(
            f"window {shape} at position {tuple(position)} is out of bounds "
            f"for field of shape {arr.shape}"
        )
    if fy == 0 and fx == 0:
        return arr[iy:iy + ph, ix:ix + pw].copy()
    block = arr[iy:iy + ph + margin_y, ix:ix + pw + margin_x]
    out = (1 - fy) * (1 - fx) * block[:ph, :pw]
    if margin_x:
        out = out + (1 - fy) * fx * block[:ph, 1:pw + 1]
    if margin_y:
        out = out + fy * (1 - fx) * block[1:ph + 1, :pw]
    if margin_y and margin_x:
        out = out + fy * fx * block[1:ph + 1, 1:pw + 1]
    return out


def place_patch_adjoint(
    patch: np.ndarray,
    position,
    shape: tuple[int, int],
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Adjoint of :func:`extract_patch`: scatter a window back onto a field.

    Accumulates ``patch`` into a zero field of ``shape`` (or into ``out``)
    with the same bilinear weights extraction uses, so that
    ⟨extract(o), w⟩ = ⟨o, place(w)⟩ for every position.
    """
    patch = np.asarray(patch)
    ph, pw = patch.shape
    iy, ix, fy, fx = _split_position(position)
    margin_y = 0 if fy == 0 else 1
    margin_x = 0 if fx == 0 else 1
    if (iy < 0 or ix < 0 or iy + ph + margin_y > shape[0]
            or ix + pw + margin_x > shape[1]):
        raise ValueError(
            f"window {patch.shape} at position {tuple(position)} is out of "
            f"bounds for field of shape {shape}"
        )
    if out is None:
        out = np.zeros(shape, dtype=np.result_type(patch.dtype, np.complex128)
                       if np.iscomplexobj(patch) else np.float64)
    out[iy:iy + ph, ix:ix + pw] += (1 - fy) * (1 - fx) * patch
    if margin_x:
        out[iy:iy + ph, ix + 1:ix + pw + 1] += (1 - fy) * fx * patch
    if margin_y:
        out[iy + 1:iy + ph + 1, ix:ix + pw] += fy * (1 - fx) * patch
    if margin_y and margin_x:
        out[iy + 1:iy + ph + 1, ix + 1:ix + pw + 1] += fy * fx * patch
    return out


@dataclass(frozen=True, eq=False)
class ExitWaveTrace:
    """Exit wave plus the per-slice intermediates the multislice solver needs.

    For slice j: ``incident[j]`` is the wave arriving at the slice,
    ``patches[j]`` the extracted object window, and
    ``modulated[j] = patches[j] * incident[j]``. The exit wave is the
    modulated wave of the last slice (no propagation after it).
    """

    exit: np.ndarray
    incident: tuple[np.ndarray, ...]
    patches: tuple[np.ndarray, ...]
    modulated: tuple[np.ndarray, ...]


def exit_wave(
    obj: ObjectModel,
    probe_mode: np.ndarray,
    position,
    wavelength: float | None = None,
) -> ExitWaveTrace:
    """Propagate one probe mode through the object at a scan position.

    Single-slice objects reduce to the elementwise product o·p. Multislice
    objects alternate slice modulation with Fresnel propagation over each
    inter-slice spacing, which requires ``wavelength``.
    """
    probe_mode = np.asarray(probe_mode)
    if probe_mode.ndim != 2:
        raise ValueError(f"probe mode must be 2D, got shape {probe_mode.shape}")
    if obj.n_slices > 1 and wavelength is None:
        raise ValueError("multislice propagation requires a wavelength")
    incident = []
    patches = []
    modulated = []
    wave = probe_mode.astype(np.complex128, copy=False)
    for j in range(obj.n_slices):
        patch = extract_patch(obj.slices[j], position, probe_mode.shape)
        incident.append(wave)
        patches.append(patch)
        wave = patch * wave
        modulated.append(wave)
        if j < obj.n_slices - 1:
            wave = fresnel_propagate(
                wave, obj.slice_spacings[j], wavelength, obj.pixel_size
            )
    return ExitWaveTrace(
        exit=modulated[-1],
        incident=tuple(incident),
        patches=tuple(patches),
        modulated=tuple(modulated),
    )


def predict_intensity(obj: ObjectModel, probe: ProbeModel, position) -> np.ndarray:
    """Detector intensity: incoherent sum of per-mode far-field moduli squared."""
    total = np.zeros(probe.shape, dtype=np.float64)
    for mode in probe.modes:
        trace = exit_wave(obj, mode, position, wavelength=probe.wavelength)
        total += np.abs(far_field(trace.exit)) ** 2
    return total


def overlap_ratio(spacing: float, probe_diameter: float) -> float:
    """Fraction of probe footprint shared by adjacent scan points.

    1 − spacing/diameter, clamped below at zero for spacings beyond the
    probe diameter.
    """
    if probe_diameter <= 0:
        raise ValueError(f"probe_diameter must be positive, got {probe_diameter}")
    return max(0.0, 1.0 - spacing / probe_diameter)


def depth_of_field(wavelength: float, pixel_size: float) -> float:
    """Depth of field in nm: 5.4 · pixel_size² / wavelength."""
    if wavelength <= 0 or pixel_size <= 0:
        raise ValueError("wavelength and pixel_size must be positive")
    return 5.4 * pixel_size**2 / wavelength

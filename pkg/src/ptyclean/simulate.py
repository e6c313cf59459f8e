"""Synthetic ptychography experiments: phantoms, probes, scan grids, data.

Every generator is a pure function of its arguments, deterministic under a
fixed seed. Lengths are nm, offsets are (y, x) pixels, matching `core`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import erf

from .core import (
    DiffractionDataset,
    ObjectModel,
    ProbeModel,
    ScanGrid,
    validate_problem,
)
from .npyio import npy_read
from .waveopt import fresnel_propagate, predict_intensity

__all__ = [
    "PhantomSpec",
    "make_phantom",
    "phantom_masks",
    "make_probe",
    "perturb_probe",
    "make_scan_grid",
    "simulate_dataset",
]

_PHANTOM_KINDS = ("textured_single_slice", "cells_and_rods_two_slice", "from_files")

# fermat spiral turn angle; irrational fraction of a circle avoids any
# periodicity in the scan positions
_GOLDEN_ANGLE_DEG = 137.50776405


@dataclass(frozen=True, eq=False)
class PhantomSpec:
    """Recipe for a ground-truth object.

    Parameters
    ----------
    kind : str
        One of ``textured_single_slice``, ``cells_and_rods_two_slice``,
        ``from_files``.
    size : int
        Lateral extent in pixels; phantoms are square.
    phase_range : (float, float)
        Inclusive phase bounds in radians, within [-pi, pi].
    magnitude_range : (float, float)
        Inclusive magnitude bounds, within (0, 1].
    seed : int
        Generator seed; same seed gives bit-identical phantoms.
    pixel_size : float
        Lateral pixel size in nm for the resulting object.
    slice_spacing : float
        Inter-slice propagation distance in nm; used by multi-slice kinds.
    files : tuple of str, optional
        Per-slice ``.npy`` paths for ``from_files``: complex arrays are
        taken as-is, real arrays as phase maps with unit magnitude.
    """

    kind: str
    size: int
    phase_range: tuple[float, float] = (-0.5, 0.5)
    magnitude_range: tuple[float, float] = (0.8, 1.0)
    seed: int = 0
    pixel_size: float = 10.0
    slice_spacing: float = 0.0
    files: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in _PHANTOM_KINDS:
            raise ValueError(
                f"kind must be one of {_PHANTOM_KINDS}, got {self.kind!r}"
            )
        object.__setattr__(self, "size", int(self.size))
        if self.size < 8:
            raise ValueError(f"size must be >= 8 pixels, got {self.size}")
        lo, hi = (float(v) for v in self.phase_range)
        object.__setattr__(self, "phase_range", (lo, hi))
        if not (-np.pi <= lo < hi <= np.pi):
            raise ValueError(
                f"phase_range must satisfy -pi <= lo < hi <= pi, got ({lo}, {hi})"
            )
        mlo, mhi = (float(v) for v in self.magnitude_range)
        object.__setattr__(self, "magnitude_range", (mlo, mhi))
        if not (0 < mlo <= mhi <= 1):
            raise ValueError(
                f"magnitude_range must satisfy 0 < lo <= hi <= 1, got ({mlo}, {mhi})"
            )
        object.__setattr__(self, "pixel_size", float(self.pixel_size))
        if self.pixel_size <= 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "slice_spacing", float(self.slice_spacing))
        if self.slice_spacing < 0:
            raise ValueError(
                f"slice_spacing must be >= 0, got {self.slice_spacing}"
            )
        if self.files is not None:
            object.__setattr__(self, "files", tuple(str(p) for p in self.files))
        if self.kind == "from_files" and not self.files:
            raise ValueError("from_files phantoms need at least one file path")


def _to_range(field: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affinely map a field onto [lo, hi]; constant fields land mid-range."""
    span = np.ptp(field)
    if span == 0:
        return np.full_like(field, 0.5 * (lo + hi))
    return lo + (field - field.min()) * ((hi - lo) / span)


def _isotropic_smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    """Exact Gaussian low-pass via the FFT.

    Unlike a truncated separable kernel this leaves no axis-aligned
    sidelobe ridges in the spectrum, so smooth phantoms stay spectrally
    isotropic and do not mimic grid artifacts.
    """
    h, w = field.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    kernel = np.exp(-2.0 * np.pi**2 * sigma**2 * (fy**2 + fx**2))
    return np.fft.ifft2(np.fft.fft2(field) * kernel).real


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Band-mixed smooth noise, roughly unit scale, zero-ish mean."""
    field = np.zeros((size, size))
    for sigma, weight in ((size / 6, 1.0), (size / 16, 0.7), (size / 48, 0.35)):
        layer = _isotropic_smooth(rng.standard_normal((size, size)), max(sigma, 0.5))
        peak = np.max(np.abs(layer))
        if peak > 0:
            field += weight * layer / peak
    return field


def _cell_field(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Overlapping soft blobs mimicking a fluorescence cell image.

    Returns the normalized [0, 1] field and a boolean occupancy mask.
    """
    n_cells = max(8, (size // 12) ** 2 // 2)
    field = np.zeros((size, size))
    yy, xx = np.indices((size, size), dtype=np.float64)
    r_lo, r_hi = size / 36 + 1.0, size / 12 + 2.0
    for _ in range(n_cells):
        cy, cx = rng.uniform(0, size, size=2)
        radius = rng.uniform(r_lo, r_hi)
        height = rng.uniform(0.4, 1.0)
        # toroidal distance: blobs wrap instead of being cut by the border,
        # so the field carries no seam that could pass for spectral structure
        dy = (yy - cy + size / 2) % size - size / 2
        dx = (xx - cx + size / 2) % size - size / 2
        d2 = (dy**2 + dx**2) / radius**2
        field += height * np.exp(-(d2**2))
    field = _to_range(field, 0.0, 1.0)
    return field, field > 0.15


def _rod_field(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Periodic array of horizontal bars on a rectangular lattice.

    Returns the [0, 1] field (edges softened by half a pixel) and the exact
    boolean rod mask.
    """
    period = max(8, size // 8)
    length = max(4, int(period * 0.7))
    width = max(2, period // 4)
    mask = np.zeros((size, size), dtype=bool)
    for cy in range(period // 2, size, period):
        for cx in range(period // 2, size, period):
            y0, y1 = cy - width // 2, cy - width // 2 + width
            x0, x1 = cx - length // 2, cx - length // 2 + length
            mask[max(y0, 0):min(y1, size), max(x0, 0):min(x1, size)] = True
    field = ndimage.gaussian_filter(mask.astype(np.float64), 0.5)
    return _to_range(field, 0.0, 1.0), mask


def _compose_slice(
    phase_field: np.ndarray,
    magnitude_field: np.ndarray,
    spec: PhantomSpec,
) -> np.ndarray:
    lo, hi = spec.phase_range
    mlo, mhi = spec.magnitude_range
    phase = _to_range(phase_field, lo, hi)
    magnitude = _to_range(magnitude_field, mlo, mhi)
    return magnitude * np.exp(1j * phase)


def _load_slice(path: str, size: int) -> np.ndarray:
    arr = npy_read(path)
    if arr.ndim != 2 or arr.shape != (size, size):
        raise ValueError(
            f"{path}: expected a 2D array of shape ({size}, {size}), "
            f"got {arr.shape}"
        )
    if np.iscomplexobj(arr):
        slice_ = arr.astype(np.complex128)
    else:
        phase = arr.astype(np.float64)
        if phase.min() < -np.pi or phase.max() > np.pi:
            raise ValueError(f"{path}: phase values outside [-pi, pi]")
        slice_ = np.exp(1j * phase)
    magnitude = np.abs(slice_)
    if magnitude.min() <= 0 or magnitude.max() > 1 + 1e-12:
        raise ValueError(f"{path}: magnitudes must lie within (0, 1]")
    return slice_


def make_phantom(spec: PhantomSpec) -> ObjectModel:
    """Generate the ground-truth object described by a :class:`PhantomSpec`.

    ``textured_single_slice`` is one slice of band-mixed smooth noise.
    ``cells_and_rods_two_slice`` stacks a blob field (slice 0) over a
    periodic rod array (slice 1); the two are statistically independent so
    any rod structure appearing in a slice-0 reconstruction is crosstalk.
    ``from_files`` loads externally supplied ground truth.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "textured_single_slice":
        slices = _compose_slice(_texture(rng, spec.size), _texture(rng, spec.size), spec)[
            np.newaxis
        ]
        spacings: tuple[float, ...] = ()
    elif spec.kind == "cells_and_rods_two_slice":
        cells, _ = _cell_field(rng, spec.size)
        rods, _ = _rod_field(spec.size)
        slice0 = _compose_slice(cells, _texture(rng, spec.size), spec)
        slice1 = _compose_slice(rods, _texture(rng, spec.size), spec)
        slices = np.stack([slice0, slice1])
        spacings = (spec.slice_spacing,)
    else:
        loaded = [_load_slice(path, spec.size) for path in spec.files]
        slices = np.stack(loaded)
        spacings = (spec.slice_spacing,) * (len(loaded) - 1)
    return ObjectModel(slices, pixel_size=spec.pixel_size, slice_spacings=spacings)


def phantom_masks(spec: PhantomSpec) -> dict[str, np.ndarray]:
    """Boolean feature masks for the generated phantom.

    Only defined for ``cells_and_rods_two_slice``: key ``"cells"`` marks
    blob occupancy on slice 0 and ``"rods"`` the exact rod rectangles on
    slice 1. Deterministic and consistent with :func:`make_phantom` for the
    same spec.
    """
    if spec.kind != "cells_and_rods_two_slice":
        raise ValueError(f"no masks defined for phantom kind {spec.kind!r}")
    rng = np.random.default_rng(spec.seed)
    _, cell_mask = _cell_field(rng, spec.size)
    _, rod_mask = _rod_field(spec.size)
    return {"cells": cell_mask, "rods": rod_mask}


def _disk(support: int, diameter: float) -> np.ndarray:
    """Smooth-edged disk magnitude: erf rolloff two pixels wide."""
    c = (support - 1) / 2
    yy, xx = np.indices((support, support), dtype=np.float64)
    r = np.hypot(yy - c, xx - c)
    return 0.5 * (1.0 - erf((r - diameter / 2) / 2.0))


def make_probe(
    diameter: float,
    support: int,
    *,
    wavelength: float,
    pixel_size: float,
    n_modes: int = 1,
    mode_power_decay: float = 0.5,
    defocus: float = 0.0,
    seed: int = 0,
) -> ProbeModel:
    """Synthesize a disk-shaped probe with optional incoherent modes.

    The primary mode is a smooth-edged disk of the requested diameter,
    Fresnel-propagated by ``defocus`` nm when nonzero. Additional modes are
    seeded smooth random fields confined near the disk, orthogonalized
    against all earlier modes, and scaled so each mode carries
    ``mode_power_decay`` times the power of the one before it.

    Real probe modes come from an experimental decomposition; this synthetic
    construction only mimics their structure (orthogonal, decaying power).
    """
    support = int(support)
    if support < 8:
        raise ValueError(f"support must be >= 8 pixels, got {support}")
    if not 0 < diameter < support:
        raise ValueError(
            f"diameter must lie in (0, support), got {diameter} for support {support}"
        )
    n_modes = int(n_modes)
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if mode_power_decay <= 0:
        raise ValueError(f"mode_power_decay must be positive, got {mode_power_decay}")

    base = _disk(support, diameter).astype(np.complex128)
    if defocus != 0:
        base = fresnel_propagate(base, defocus, wavelength, pixel_size)
    modes = [base]
    base_power = float(np.sum(np.abs(base) ** 2))

    rng = np.random.default_rng(seed)
    envelope = _disk(support, min(1.2 * diameter, support - 2.0))
    for k in range(1, n_modes):
        raw = envelope * (
            ndimage.gaussian_filter(rng.standard_normal((support, support)), 1.5)
            + 1j * ndimage.gaussian_filter(rng.standard_normal((support, support)), 1.5)
        )
        for prev in modes:
            raw = raw - prev * (np.vdot(prev, raw) / np.vdot(prev, prev))
        raw_power = float(np.sum(np.abs(raw) ** 2))
        if raw_power <= 1e-12 * base_power:
            raise ValueError(f"mode {k} collapsed during orthogonalization")
        target = base_power * mode_power_decay**k
        modes.append(raw * np.sqrt(target / raw_power))
    return ProbeModel(np.stack(modes), wavelength=wavelength)


def perturb_probe(probe: ProbeModel, magnify: float) -> ProbeModel:
    """Spatially rescale every probe mode about its center.

    Bilinear resampling on the original support: magnification above one
    crops the enlarged field, below one pads with zeros. Each mode is
    rescaled back to its original power, so mode power ratios survive.
    """
    if magnify <= 0:
        raise ValueError(f"magnify must be positive, got {magnify}")
    h, w = probe.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    yy, xx = np.indices((h, w), dtype=np.float64)
    coords = np.stack([cy + (yy - cy) / magnify, cx + (xx - cx) / magnify])
    out = np.empty_like(probe.modes)
    for k, mode in enumerate(probe.modes):
        resampled = ndimage.map_coordinates(
            mode.real, coords, order=1, mode="constant", cval=0.0
        ) + 1j * ndimage.map_coordinates(
            mode.imag, coords, order=1, mode="constant", cval=0.0
        )
        power = float(np.sum(np.abs(resampled) ** 2))
        if power <= 0:
            raise ValueError(f"rescaling by {magnify} annihilated mode {k}")
        original = float(np.sum(np.abs(mode) ** 2))
        out[k] = resampled * np.sqrt(original / power)
    return probe.with_modes(out)


def _check_positions(positions: np.ndarray, span: float) -> None:
    # tiny slack absorbs float rounding at the boundary
    if positions.min() < -1e-9 or positions.max() > span + 1e-9:
        raise ValueError("scan positions fall outside the available extent")


def make_scan_grid(
    kind: str,
    spacing: float,
    extent: float,
    *,
    margin: float = 0.0,
    jitter: float = 0.0,
    seed: int = 0,
) -> ScanGrid:
    """Build a scan grid of (y, x) probe offsets inside ``[0, extent - margin]``.

    Parameters
    ----------
    kind : str
        ``rectangular`` for an equally spaced lattice, ``fermat`` for a
        golden-angle spiral r = c*sqrt(n) whose point density matches a
        square lattice of the same spacing (c = spacing/sqrt(pi)).
    spacing : float
        Nominal distance between neighboring positions in pixels.
    extent : float
        Object extent in pixels along each axis.
    margin : float
        Width kept free at the high end of each axis, normally the probe
        support, so every probe window stays inside the object.
    jitter : float
        Half-width of uniform per-coordinate displacement added to each
        position; positions leaving the available extent are an error.
    seed : int
        Seed for the jitter draw.
    """
    if kind not in ("rectangular", "fermat"):
        raise ValueError(f"kind must be 'rectangular' or 'fermat', got {kind!r}")
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if jitter < 0:
        raise ValueError(f"jitter must be >= 0, got {jitter}")
    span = float(extent) - float(margin)
    if span < 0:
        raise ValueError(
            f"margin {margin} exceeds extent {extent}; no room for positions"
        )
    if kind == "rectangular":
        n = int(np.floor(span / spacing + 1e-9)) + 1
        start = (span - (n - 1) * spacing) / 2
        axis = start + spacing * np.arange(n)
        ys, xs = np.meshgrid(axis, axis, indexing="ij")
        positions = np.column_stack([ys.ravel(), xs.ravel()])
    else:
        c = spacing / np.sqrt(np.pi)
        r_max = span / 2
        n_max = int(np.floor((r_max / c) ** 2 + 1e-9)) + 1
        idx = np.arange(n_max, dtype=np.float64)
        r = c * np.sqrt(idx)
        theta = idx * np.deg2rad(_GOLDEN_ANGLE_DEG)
        positions = np.column_stack(
            [r_max + r * np.sin(theta), r_max + r * np.cos(theta)]
        )
    if jitter > 0:
        rng = np.random.default_rng(seed)
        positions = positions + rng.uniform(-jitter, jitter, size=positions.shape)
    _check_positions(positions, span)
    return ScanGrid(positions)


def simulate_dataset(
    obj: ObjectModel,
    probe: ProbeModel,
    grid: ScanGrid,
    *,
    photons_per_pattern: float | None = None,
    seed: int = 0,
) -> DiffractionDataset:
    """Forward-model diffraction data for every scan position.

    Noiseless by default (exact predicted intensities). With
    ``photons_per_pattern`` set, each pattern is scaled to that expected
    total count and Poisson-sampled with the given seed; the stored values
    are then photon counts.
    """
    placeholder = DiffractionDataset(np.zeros((len(grid), *probe.shape)))
    report = validate_problem(obj, probe, grid, placeholder)
    if not report:
        raise ValueError("; ".join(report.violations))
    patterns = np.stack(
        [predict_intensity(obj, probe, pos) for pos in grid.positions]
    )
    if photons_per_pattern is not None:
        if photons_per_pattern <= 0:
            raise ValueError(
                f"photons_per_pattern must be positive, got {photons_per_pattern}"
            )
        totals = patterns.sum(axis=(1, 2))
        if np.any(totals <= 0):
            raise ValueError("a pattern with zero total intensity cannot be "
                             "scaled to a photon budget")
        scaled = patterns * (photons_per_pattern / totals)[:, None, None]
        rng = np.random.default_rng(seed)
        patterns = rng.poisson(scaled).astype(np.float64)
    return DiffractionDataset(patterns)

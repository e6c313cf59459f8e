"""Shared data model for ptychographic reconstruction and artifact removal.

All array-bearing types copy their input into C-contiguous, read-only numpy
arrays at construction time, so instances are safe to share across threads.
Complex fields are held as complex128 in memory; on-disk precision is decided
by the I/O layer.

Conventions used throughout the package:

- pixel coordinates are (row=y, col=x) with the origin at the top-left of the
  object array; scan positions are offsets of the probe window's top-left
  corner, fractional values allowed,
- lengths are in nanometers, beam energies in keV,
- objects and probes are always 3D stacks: ``(n_slices, h, w)`` and
  ``(n_modes, h, w)``; a single 2D array is promoted to a one-element stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .editors import EditorSpec

__all__ = [
    "ComplexImage",
    "as_complex_image",
    "energy_to_wavelength",
    "ObjectModel",
    "ProbeModel",
    "ScanGrid",
    "DiffractionDataset",
    "SolverConfig",
    "PnpConfig",
    "EditRequest",
    "AuxUnknowns",
    "AdmmState",
    "ValidationReport",
    "validate_problem",
]

#: A 2D complex wavefield or transmission function. Plain numpy array; use
#: :func:`as_complex_image` to validate one at an API boundary.
ComplexImage = np.ndarray

# hc in keV * nm
_HC_KEV_NM = 1.23984193


def energy_to_wavelength(energy_kev: float) -> float:
    """Photon wavelength in nm for a beam energy in keV."""
    if energy_kev <= 0:
        raise ValueError(f"energy must be positive, got {energy_kev}")
    return _HC_KEV_NM / energy_kev


def as_complex_image(data, *, name: str = "image") -> np.ndarray:
    """Validate and return a 2D complex field as a complex128 array.

    Rejects arrays that are not 2D, are empty, or contain NaN/Inf.
    """
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have height and width >= 1, got {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _frozen_array(data, dtype, *, name: str, ndim: int) -> np.ndarray:
    """Copy input into a read-only C-order array of the requested dtype."""
    arr = np.array(data, dtype=dtype, order="C", copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """Multi-slice complex object with inter-slice spacings.

    Parameters
    ----------
    slices : array
        Complex transmission functions, shape ``(n_slices, h, w)``;
        a 2D array is accepted as a single slice.
    pixel_size : float
        Lateral pixel size in nm.
    slice_spacings : sequence of float
        Propagation distances between consecutive slices in nm,
        length ``n_slices - 1``.
    """

    slices: np.ndarray
    pixel_size: float
    slice_spacings: tuple[float, ...] = ()

    def __post_init__(self):
        slices = np.asarray(self.slices)
        if slices.ndim == 2:
            slices = slices[np.newaxis]
        slices = _frozen_array(slices, np.complex128, name="slices", ndim=3)
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "pixel_size", float(self.pixel_size))
        spacings = tuple(float(d) for d in self.slice_spacings)
        object.__setattr__(self, "slice_spacings", spacings)
        if self.pixel_size <= 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        if len(spacings) != self.n_slices - 1:
            raise ValueError(
                f"need {self.n_slices - 1} slice spacings for "
                f"{self.n_slices} slices, got {len(spacings)}"
            )
        if any(d < 0 for d in spacings):
            raise ValueError(f"slice spacings must be >= 0, got {spacings}")

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """Lateral (h, w) shape shared by all slices."""
        return self.slices.shape[1:]

    def with_slices(self, slices: np.ndarray) -> "ObjectModel":
        """Return a copy of this model carrying new slice data."""
        return replace(self, slices=slices)

    def phase(self) -> np.ndarray:
        """Per-slice phase in radians, shape (n_slices, h, w)."""
        return np.angle(self.slices)

    def magnitude(self) -> np.ndarray:
        """Per-slice magnitude, shape (n_slices, h, w)."""
        return np.abs(self.slices)


@dataclass(frozen=True, eq=False)
class ProbeModel:
    """Illumination wavefield as a stack of mutually incoherent modes."""

    modes: np.ndarray
    wavelength: float

    def __post_init__(self):
        modes = np.asarray(self.modes)
        if modes.ndim == 2:
            modes = modes[np.newaxis]
        modes = _frozen_array(modes, np.complex128, name="modes", ndim=3)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "wavelength", float(self.wavelength))
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if self.total_power() <= 0:
            raise ValueError("probe must carry nonzero total power")

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.modes.shape[1:]

    def with_modes(self, modes: np.ndarray) -> "ProbeModel":
        return replace(self, modes=modes)

    def total_power(self) -> float:
        """Summed |p|^2 over all modes and pixels."""
        return float(np.sum(np.abs(self.modes) ** 2))


@dataclass(frozen=True, eq=False)
class ScanGrid:
    """Per-shot probe positions, shape (n, 2) as (y, x) pixel offsets."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError(f"positions must have shape (n, 2), got {pos.shape}")
        pos = _frozen_array(pos, np.float64, name="positions", ndim=2)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class DiffractionDataset:
    """Measured far-field intensities, shape (n_patterns, h, w).

    Negative or non-finite pixels are accepted at construction so that
    suspect data can still be loaded; :func:`validate_problem` reports them.
    """

    patterns: np.ndarray

    def __post_init__(self):
        patterns = np.array(self.patterns, dtype=np.float64, order="C", copy=True)
        if patterns.ndim != 3:
            raise ValueError(f"patterns must be 3D, got shape {patterns.shape}")
        if patterns.size == 0:
            raise ValueError("patterns must be non-empty")
        patterns.flags.writeable = False
        object.__setattr__(self, "patterns", patterns)

    def __len__(self) -> int:
        return self.patterns.shape[0]

    @property
    def pattern_shape(self) -> tuple[int, int]:
        return self.patterns.shape[1:]


_ALGORITHMS = ("epie", "rpie")


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the iterative ptychographic engine."""

    algorithm: str = "rpie"
    n_iterations: int = 100
    batch_size: int = 1
    alpha_object: float = 0.5
    alpha_probe: float = 0.5
    update_probe: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", str(self.algorithm).lower())
        if self.algorithm not in _ALGORITHMS:
            raise ValueError(
                f"algorithm must be one of {_ALGORITHMS}, got {self.algorithm!r}"
            )
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("alpha_object", "alpha_probe"):
            a = getattr(self, name)
            if not 0 < a <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {a}")


@dataclass(frozen=True)
class EditRequest:
    """Parameters handed to an artifact-removal editor.

    ``value_min``/``value_max`` define the affine map from phase values to
    the editor's [0, 1] display range.
    """

    prompt: str = ""
    guidance_scale: float = 5.0
    inference_steps: int = 100
    seed: int = 0
    value_min: float = -np.pi
    value_max: float = np.pi

    def __post_init__(self):
        if self.guidance_scale <= 0:
            raise ValueError("guidance_scale must be > 0")
        if self.inference_steps < 1:
            raise ValueError("inference_steps must be >= 1")
        if not self.value_min < self.value_max:
            raise ValueError(
                f"value_min must be < value_max, got "
                f"({self.value_min}, {self.value_max})"
            )


@dataclass(frozen=True)
class PnpConfig:
    """Settings for the outer plug-and-play ADMM loop.

    ``edit_last_epoch`` disables editing for outer epochs >= its value, so
    the trailing epochs run pure phase retrieval. ``stats_slices`` selects
    which slices get post-edit statistics matching (None means all).
    """

    tau: float = 1e-5
    gamma: float = 0.8
    n_inner: int = 100
    n_outer: int = 4
    edit_last_epoch: int | None = None
    editor: "EditorSpec | None" = None
    stats_match: bool = False
    stats_mask_threshold: float = 0.5
    stats_slices: tuple[int, ...] | None = None
    editor_optional: bool = False
    save_snapshots: bool = False

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.n_inner < 1:
            raise ValueError("n_inner must be >= 1")
        if self.n_outer < 1:
            raise ValueError("n_outer must be >= 1")
        if self.edit_last_epoch is None:
            object.__setattr__(self, "edit_last_epoch", self.n_outer)
        if not 0 <= self.edit_last_epoch <= self.n_outer:
            raise ValueError(
                f"edit_last_epoch must lie in [0, n_outer], got "
                f"{self.edit_last_epoch} with n_outer={self.n_outer}"
            )
        if self.stats_mask_threshold <= 0:
            raise ValueError("stats_mask_threshold must be > 0")
        if self.stats_slices is not None:
            object.__setattr__(
                self, "stats_slices", tuple(int(i) for i in self.stats_slices)
            )


@dataclass(frozen=True)
class AuxUnknowns:
    """Unknowns beyond the object that the data-fidelity solver refines."""

    probe: ProbeModel


@dataclass(eq=False)
class AdmmState:
    """Mutable state of the ADMM splitting: primal o, auxiliary v, dual u.

    Owned and mutated by a single engine thread; the wrapped models are
    themselves immutable and replaced wholesale on update.
    """

    o: ObjectModel
    v: ObjectModel
    u: np.ndarray
    theta: AuxUnknowns
    epoch: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.complex128)
        if self.o.slices.shape != self.v.slices.shape:
            raise ValueError(
                f"o and v shapes differ: {self.o.slices.shape} vs "
                f"{self.v.slices.shape}"
            )
        if self.u.shape != self.o.slices.shape:
            raise ValueError(
                f"u shape {self.u.shape} does not match o {self.o.slices.shape}"
            )


@dataclass(frozen=True)
class ValidationReport:
    """List of consistency violations found in a reconstruction problem."""

    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _window_fits(offset: float, window: int, extent: int) -> bool:
    """Whether a probe window at a (possibly fractional) offset stays inside.

    Bilinear interpolation at a fractional offset reads one extra row/col
    beyond the integer window.
    """
    lo = int(np.floor(offset))
    margin = 0 if offset == lo else 1
    return lo >= 0 and lo + window + margin <= extent


def validate_problem(
    obj: ObjectModel,
    probe: ProbeModel,
    grid: ScanGrid,
    data: DiffractionDataset,
) -> ValidationReport:
    """Cross-check a full problem description and report all violations.

    Returns an empty report iff the object, probe, scan grid and dataset are
    mutually consistent: probe fits in the object, every probe window lies
    inside the object extent, pattern count/shape match the grid and probe,
    and all intensities are finite and nonnegative.
    """
    violations: list[str] = []
    oh, ow = obj.shape
    ph, pw = probe.shape
    if ph > oh or pw > ow:
        violations.append(
            f"probe shape {probe.shape} exceeds object slice shape {obj.shape}"
        )
    else:
        for i, (y, x) in enumerate(grid.positions):
            if not (_window_fits(y, ph, oh) and _window_fits(x, pw, ow)):
                violations.append(
                    f"position {i} ({y:g}, {x:g}) places probe window out of bounds"
                )
    if len(data) != len(grid):
        violations.append(
            f"dataset has {len(data)} patterns but grid has {len(grid)} positions"
        )
    if data.pattern_shape != probe.shape:
        violations.append(
            f"pattern shape {data.pattern_shape} does not match probe shape "
            f"{probe.shape}"
        )
    if np.any(data.patterns < 0):
        violations.append("dataset contains negative intensity values")
    if not np.all(np.isfinite(data.patterns)):
        violations.append("dataset contains non-finite intensity values")
    return ValidationReport(tuple(violations))

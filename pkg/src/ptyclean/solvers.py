"""Iterative ptychographic phase retrieval: ePIE/rPIE with minibatches,
mixed probe modes, and multislice residual back-propagation.

The update scheme is the classic projection family: per scan position,
exit waves are formed for every probe mode, their far-field moduli are
replaced by the measurement (shared rescaling across modes), and the
residual is pushed back through the slices from last to first. Object and
probe play symmetric roles in the updates, so one code path serves both.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DiffractionDataset, ObjectModel, ProbeModel, ScanGrid, SolverConfig
from .waveopt import (
    extract_patch,
    far_field,
    fresnel_propagate,
    ifar_field,
    place_patch_adjoint,
)

__all__ = [
    "SolverState",
    "modulus_projection",
    "pie_object_update",
    "pie_probe_update",
    "solver_iteration",
    "run_solver",
    "proximal_step",
    "magnitude_mse",
]


@dataclass(frozen=True, eq=False)
class SolverState:
    """Immutable snapshot of a reconstruction after some iterations."""

    object: ObjectModel
    probe: ProbeModel
    iteration: int = 0
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "loss_history", tuple(self.loss_history))
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")
        if len(self.loss_history) != self.iteration:
            raise ValueError(
                f"loss_history length {len(self.loss_history)} does not match "
                f"iteration count {self.iteration}"
            )


def _as_mode_stack(arr, name: str) -> np.ndarray:
    stack = np.asarray(arr, dtype=np.complex128)
    if stack.ndim == 2:
        stack = stack[np.newaxis]
    if stack.ndim != 3:
        raise ValueError(f"{name} must be 2D or a 3D mode stack, got {stack.shape}")
    return stack


def modulus_projection(exit_waves, measured: np.ndarray) -> np.ndarray:
    """Replace the summed far-field intensity of the modes by the measurement.

    All modes share one rescaling field sqrt(measured / I_pred), with the
    predicted intensity summed over modes and guarded below at
    1e-12 x max(I_pred) to keep dark pixels finite. Returns the projected
    exit waves as a (n_modes, h, w) stack.
    """
    waves = _as_mode_stack(exit_waves, "exit_waves")
    meas = np.asarray(measured, dtype=np.float64)
    if meas.shape != waves.shape[1:]:
        raise ValueError(
            f"measured shape {meas.shape} does not match wave shape "
            f"{waves.shape[1:]}"
        )
    if np.any(meas < 0):
        raise ValueError("measured intensities must be >= 0")
    spectra = far_field(waves)
    i_pred = np.sum(np.abs(spectra) ** 2, axis=0)
    peak = np.max(i_pred)
    eps = 1e-12 * peak if peak > 0 else 1.0
    ratio = np.sqrt(meas / np.maximum(i_pred, eps))
    return ifar_field(spectra * ratio)


def _denominator(power: np.ndarray, alpha: float, algorithm: str) -> np.ndarray:
    """ePIE uses the peak power; rPIE blends local and peak power."""
    peak = np.max(power)
    if peak <= 0:
        raise ValueError("update denominator is zero: field carries no power")
    if algorithm == "epie":
        return np.asarray(peak)
    return (1.0 - alpha) * power + alpha * peak


def pie_object_update(
    patch: np.ndarray,
    probe_mode,
    psi,
    psi_prime,
    alpha: float,
    algorithm: str = "rpie",
) -> np.ndarray:
    """One projection update of an object patch from the exit-wave residual.

    patch + sum_m conj(p_m) (psi'_m - psi_m) / D, with D = max |p|^2 for
    ePIE and (1-alpha)|p|^2 + alpha max |p|^2 for rPIE; |p|^2 is summed
    over modes first.
    """
    patch = np.asarray(patch, dtype=np.complex128)
    modes = _as_mode_stack(probe_mode, "probe_mode")
    psi = _as_mode_stack(psi, "psi")
    psi_p = _as_mode_stack(psi_prime, "psi_prime")
    if not (modes.shape == psi.shape == psi_p.shape
            and patch.shape == modes.shape[1:]):
        raise ValueError("patch, probe, psi and psi_prime shapes must agree")
    power = np.sum(np.abs(modes) ** 2, axis=0)
    denom = _denominator(power, alpha, algorithm)
    numer = np.sum(np.conj(modes) * (psi_p - psi), axis=0)
    return patch + numer / denom


def pie_probe_update(
    probe_mode,
    patch: np.ndarray,
    psi,
    psi_prime,
    alpha: float,
    algorithm: str = "rpie",
) -> np.ndarray:
    """Symmetric counterpart of :func:`pie_object_update` for the probe.

    Each mode moves by conj(o) (psi'_m - psi_m) / D with D built from
    |o|^2. Returns the updated mode stack.
    """
    modes = _as_mode_stack(probe_mode, "probe_mode")
    patch = np.asarray(patch, dtype=np.complex128)
    psi = _as_mode_stack(psi, "psi")
    psi_p = _as_mode_stack(psi_prime, "psi_prime")
    if not (modes.shape == psi.shape == psi_p.shape
            and patch.shape == modes.shape[1:]):
        raise ValueError("patch, probe, psi and psi_prime shapes must agree")
    power = np.abs(patch) ** 2
    denom = _denominator(power, alpha, algorithm)
    return modes + np.conj(patch) * (psi_p - psi) / denom


def solver_iteration(
    state: SolverState,
    grid: ScanGrid,
    data: DiffractionDataset,
    config: SolverConfig,
) -> SolverState:
    """One epoch: a seeded-shuffle pass over all positions in minibatches.

    Within a batch, updates are computed against the batch-start object
    and probe; overlapping object updates are averaged with the extraction
    weights and probe updates averaged over the batch. The epoch's mean
    magnitude error (sqrt of intensities) is appended to the loss history.
    """
    obj = state.object
    probe = state.probe
    slices = np.array(obj.slices)
    modes = np.array(probe.modes)
    n_s = obj.n_slices
    ph, pw = probe.shape
    n_pos = len(grid)
    if len(data) != n_pos:
        raise ValueError(
            f"dataset has {len(data)} patterns but grid has {n_pos} positions"
        )
    rng = np.random.default_rng([config.rng_seed, state.iteration])
    order = rng.permutation(n_pos)
    loss_sum = 0.0
    for start in range(0, n_pos, config.batch_size):
        batch = order[start:start + config.batch_size]
        positions = grid.positions[batch]
        # forward pass per member, retaining per-slice intermediates
        traces = []
        for b, pos in enumerate(positions):
            patches = [
                extract_patch(slices[j], pos, (ph, pw)) for j in range(n_s)
            ]
            incident = []
            modulated = []
            wave = modes
            for j in range(n_s):
                incident.append(wave)
                wave = patches[j][np.newaxis] * wave
                modulated.append(wave)
                if j < n_s - 1:
                    wave = fresnel_propagate(
                        wave, obj.slice_spacings[j], probe.wavelength,
                        obj.pixel_size,
                    )
            spectra = far_field(modulated[-1])
            i_pred = np.sum(np.abs(spectra) ** 2, axis=0)
            meas = data.patterns[batch[b]]
            loss_sum += np.sum((np.sqrt(meas) - np.sqrt(i_pred)) ** 2)
            peak = np.max(i_pred)
            eps = 1e-12 * peak if peak > 0 else 1.0
            ratio = np.sqrt(meas / np.maximum(i_pred, eps))
            psi_prime = ifar_field(spectra * ratio)
            traces.append((patches, incident, modulated, psi_prime))
        # backward pass: last slice toward the entrance plane
        weight = np.zeros(obj.shape, dtype=np.float64)
        for pos in positions:
            place_patch_adjoint(np.ones((ph, pw)), pos, obj.shape, out=weight)
        deltas = np.zeros((n_s,) + obj.shape, dtype=np.complex128)
        probe_delta = np.zeros_like(modes)
        for b, pos in enumerate(positions):
            patches, incident, modulated, psi_prime = traces[b]
            for j in reversed(range(n_s)):
                new_patch = pie_object_update(
                    patches[j], incident[j], modulated[j], psi_prime,
                    config.alpha_object, config.algorithm,
                )
                place_patch_adjoint(
                    new_patch - patches[j], pos, obj.shape, out=deltas[j]
                )
                if j > 0 or config.update_probe:
                    new_incident = pie_probe_update(
                        incident[j], patches[j], modulated[j], psi_prime,
                        config.alpha_probe, config.algorithm,
                    )
                    if j > 0:
                        psi_prime = fresnel_propagate(
                            new_incident, -obj.slice_spacings[j - 1],
                            probe.wavelength, obj.pixel_size,
                        )
                    else:
                        probe_delta += new_incident - incident[0]
        safe_weight = np.where(weight > 0, weight, 1.0)
        for j in range(n_s):
            slices[j] += np.where(weight > 0, deltas[j] / safe_weight, 0.0)
        if config.update_probe:
            modes = modes + probe_delta / len(batch)
    loss = loss_sum / (n_pos * ph * pw)
    return SolverState(
        object=obj.with_slices(slices),
        probe=probe.with_modes(modes),
        iteration=state.iteration + 1,
        loss_history=state.loss_history + (float(loss),),
    )


def run_solver(
    init_object: ObjectModel,
    init_probe: ProbeModel,
    grid: ScanGrid,
    data: DiffractionDataset,
    config: SolverConfig,
    callback=None,
) -> SolverState:
    """Run ``config.n_iterations`` epochs from the given initial models.

    ``callback(slices, iteration, n_total)`` is invoked after each epoch
    (iteration counts from 1); returning an array replaces the object
    slices, returning None leaves them untouched.
    """
    state = SolverState(object=init_object, probe=init_probe)
    for i in range(config.n_iterations):
        state = solver_iteration(state, grid, data, config)
        if callback is not None:
            edited = callback(state.object.slices, i + 1, config.n_iterations)
            if edited is not None:
                state = replace(state, object=state.object.with_slices(edited))
    return state


def proximal_step(obj: ObjectModel, v, u, tau: float) -> ObjectModel:
    """Pull the object toward the consensus point: o - tau (o - v + u)."""
    v_slices = v.slices if isinstance(v, ObjectModel) else np.asarray(v)
    u_arr = np.asarray(u)
    if v_slices.shape != obj.slices.shape or u_arr.shape != obj.slices.shape:
        raise ValueError(
            f"shape mismatch: o {obj.slices.shape}, v {v_slices.shape}, "
            f"u {u_arr.shape}"
        )
    return obj.with_slices(obj.slices - tau * (obj.slices - v_slices + u_arr))


def magnitude_mse(data, predicted) -> float:
    """Mean squared difference between the square roots of two intensity stacks."""
    a = data.patterns if isinstance(data, DiffractionDataset) else np.asarray(data)
    b = (predicted.patterns if isinstance(predicted, DiffractionDataset)
         else np.asarray(predicted))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("intensities must be >= 0")
    return float(np.mean((np.sqrt(a) - np.sqrt(b)) ** 2))

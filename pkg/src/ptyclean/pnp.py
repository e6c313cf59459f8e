"""Outer plug-and-play loop: ADMM splitting around the iterative solver,
with artifact-removal editing applied to the phase at epoch boundaries.

One outer epoch runs a block of inner solver iterations (each followed by a
proximal pull toward the consensus variable), hands phase images of o + u to
the editor, relaxes the edited result against o, and updates the scaled
dual. Late epochs can skip editing so reconstruction finishes on data
fidelity alone.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    DiffractionDataset,
    EditRequest,
    ObjectModel,
    PnpConfig,
    ProbeModel,
    ScanGrid,
    SolverConfig,
)
from .editors import Editor, IdentityEditor
from .solvers import SolverState, proximal_step, solver_iteration

__all__ = [
    "PnpResult",
    "PnpEditError",
    "run_pnp",
    "phase_only_edit",
    "statistics_match",
    "dual_update",
]


class PnpEditError(RuntimeError):
    """Editor failure during a non-optional edit step."""


@dataclass(frozen=True, eq=False)
class PnpResult:
    """Outcome of a plug-and-play run.

    ``per_epoch_loss`` holds the final inner-iteration loss of each outer
    epoch; ``consensus_history`` the Frobenius norm of o - v at each epoch
    boundary. ``warnings`` collects messages from optional-editor failures.
    """

    final_object: ObjectModel
    final_probe: ProbeModel
    per_epoch_loss: tuple[float, ...]
    config_echo: PnpConfig
    per_epoch_snapshots: tuple[ObjectModel, ...] = ()
    consensus_history: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()
    inner_loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "per_epoch_loss", tuple(self.per_epoch_loss))
        if len(self.per_epoch_loss) != self.config_echo.n_outer:
            raise ValueError(
                f"per_epoch_loss has {len(self.per_epoch_loss)} entries for "
                f"{self.config_echo.n_outer} outer epochs"
            )


def statistics_match(
    pre_phase: np.ndarray,
    post_phase: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Affinely rescale a post-edit image to the pre-edit statistics.

    Over the mask of weakly changed pixels (|post - pre| < threshold), the
    returned a*post + b has the same mean and standard deviation as the
    pre-edit image.
    """
    pre = np.asarray(pre_phase, dtype=np.float64)
    post = np.asarray(post_phase, dtype=np.float64)
    if pre.shape != post.shape:
        raise ValueError(f"shape mismatch: {pre.shape} vs {post.shape}")
    mask = np.abs(post - pre) < threshold
    if not np.any(mask):
        raise ValueError(
            "statistics matching mask is empty: every pixel changed by more "
            f"than {threshold}"
        )
    if np.ptp(post[mask]) == 0:
        raise ValueError("post-edit image is constant within the mask")
    post_std = float(np.std(post[mask]))
    a = float(np.std(pre[mask])) / post_std
    b = float(np.mean(pre[mask])) - a * float(np.mean(post[mask]))
    return a * post + b


def dual_update(u: np.ndarray, o: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scaled dual ascent: u + o - v."""
    u, o, v = (np.asarray(x) for x in (u, o, v))
    if not (u.shape == o.shape == v.shape):
        raise ValueError(
            f"shape mismatch: u {u.shape}, o {o.shape}, v {v.shape}"
        )
    # grouped so that o == v leaves u bit-identical
    return u + (o - v)


def _editor_list(editor, n_slices: int) -> list[Editor]:
    if isinstance(editor, Editor):
        return [editor] * n_slices
    editors = list(editor)
    if len(editors) != n_slices:
        raise ValueError(
            f"got {len(editors)} editors for {n_slices} slices"
        )
    return editors


def phase_only_edit(
    stack: np.ndarray,
    editor,
    request: EditRequest,
    stats_match: bool = False,
    stats_mask_threshold: float = 0.5,
    stats_slices: Sequence[int] | None = None,
) -> np.ndarray:
    """Edit the phase of each slice; magnitudes become their spatial means.

    The phase is affinely mapped from [request.value_min, request.value_max]
    to the editor display range [0, 1], edited, optionally statistics-matched
    against the pre-edit image (selected slices only), mapped back, and
    recombined with a constant magnitude equal to the mean pre-edit
    magnitude of the slice. ``editor`` may be one editor shared by all
    slices or a sequence with one editor per slice.
    """
    arr = np.asarray(stack, dtype=np.complex128)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise ValueError(f"stack must be 2D or 3D, got shape {arr.shape}")
    editors = _editor_list(editor, arr.shape[0])
    span = request.value_max - request.value_min
    out = np.empty_like(arr)
    for j in range(arr.shape[0]):
        mapped = (np.angle(arr[j]) - request.value_min) / span
        edited = np.asarray(editors[j].edit(mapped, request), dtype=np.float64)
        if edited.shape != mapped.shape:
            raise ValueError(
                f"editor output shape {edited.shape} does not match slice "
                f"shape {mapped.shape}"
            )
        if not np.all(np.isfinite(edited)):
            raise ValueError("editor output contains non-finite values")
        if stats_match and (stats_slices is None or j in stats_slices):
            edited = statistics_match(mapped, edited, stats_mask_threshold)
        phase = request.value_min + edited * span
        mean_mag = float(np.mean(np.abs(arr[j])))
        out[j] = mean_mag * np.exp(1j * phase)
    return out[0] if squeeze else out


def _is_identity(editors: list[Editor]) -> bool:
    return all(type(e) is IdentityEditor for e in editors)


def run_pnp(
    config: PnpConfig,
    solver_config: SolverConfig,
    grid: ScanGrid,
    data: DiffractionDataset,
    init_object: ObjectModel,
    init_probe: ProbeModel,
    editor,
) -> PnpResult:
    """Alternate solver epochs with phase editing under an ADMM splitting.

    Per outer epoch: (for epochs past the first) restart the solver object
    at v - u; run n_inner solver iterations, each followed by a proximal
    step toward v - u; form v' by editing the phase of o + u (or pass o + u
    through unchanged once the editing schedule has ended); relax
    v = gamma v' + (1 - gamma) o; update the dual u by o - v.

    The identity editor is applied as an exact complex passthrough
    (v' = o + u) rather than through the phase/magnitude decomposition, so
    it composes with tau = 0 into exactly the vanilla solver. Editor
    failures abort unless ``config.editor_optional`` is set, in which case
    the epoch falls back to the passthrough and records a warning.
    """
    editors = _editor_list(editor, init_object.n_slices)
    identity_passthrough = _is_identity(editors)
    state = SolverState(object=init_object, probe=init_probe)
    v = np.zeros_like(init_object.slices)
    u = np.zeros_like(init_object.slices)
    per_epoch_loss: list[float] = []
    consensus: list[float] = []
    snapshots: list[ObjectModel] = []
    notes: list[str] = []
    request = config.editor.request if config.editor is not None else EditRequest()
    for epoch in range(config.n_outer):
        if epoch > 0:
            state = replace(state, object=state.object.with_slices(v - u))
        for _ in range(config.n_inner):
            state = solver_iteration(state, grid, data, solver_config)
            if epoch > 0 and config.tau != 0:
                state = replace(
                    state, object=proximal_step(state.object, v, u, config.tau)
                )
        o = state.object.slices
        if epoch >= config.edit_last_epoch or identity_passthrough:
            v_prime = o + u
        else:
            try:
                v_prime = phase_only_edit(
                    o + u, editors, request,
                    stats_match=config.stats_match,
                    stats_mask_threshold=config.stats_mask_threshold,
                    stats_slices=config.stats_slices,
                )
            except Exception as exc:
                if not config.editor_optional:
                    raise PnpEditError(
                        f"editor failed at outer epoch {epoch}: {exc}"
                    ) from exc
                notes.append(f"epoch {epoch}: editor failed ({exc}); "
                             "passing o + u through unedited")
                _warnings.warn(notes[-1], stacklevel=2)
                v_prime = o + u
        # algebraically gamma*v' + (1-gamma)*o, written so the identity
        # passthrough (v' = o + u with u = 0) yields v == o bit-exactly
        v = o + config.gamma * (v_prime - o)
        u = dual_update(u, o, v)
        per_epoch_loss.append(state.loss_history[-1])
        consensus.append(float(np.linalg.norm(o - v)))
        if config.save_snapshots:
            snapshots.append(state.object)
    return PnpResult(
        final_object=state.object,
        final_probe=state.probe,
        per_epoch_loss=tuple(per_epoch_loss),
        config_echo=config,
        per_epoch_snapshots=tuple(snapshots),
        consensus_history=tuple(consensus),
        warnings=tuple(notes),
        inner_loss_history=state.loss_history,
    )

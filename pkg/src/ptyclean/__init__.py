"""Ptychographic phase retrieval with plug-and-play artifact removal."""

from .core import (
    AdmmState,
    AuxUnknowns,
    ComplexImage,
    DiffractionDataset,
    EditRequest,
    ObjectModel,
    PnpConfig,
    ProbeModel,
    ScanGrid,
    SolverConfig,
    ValidationReport,
    as_complex_image,
    energy_to_wavelength,
    validate_problem,
)
from .editors import (
    Editor,
    EditorOutputError,
    EditorProcessError,
    EditorShapeError,
    EditorSpec,
    EditorTimeoutError,
    ExternalEditError,
    ExternalEditor,
    IdentityEditor,
    MaskOracleEditor,
    SmoothDenoiseEditor,
    SpectralNotchEditor,
    build_editor,
    external_edit,
    in_loop_spectral_filter,
    mask_oracle_edit,
    smooth_denoise,
    spectral_notch,
)
from .jobconfig import (
    DataSettings,
    GridSettings,
    JobConfig,
    JobConfigError,
    MetricsSettings,
    ProbeSettings,
    load_job_config,
    parse_job_config,
)
from .metrics import (
    MetricReport,
    crosstalk_score,
    evaluate_reconstruction,
    grid_artifact_score,
    psnr_phase,
)
from .npyio import (
    FortranOrderError,
    NpyError,
    TruncatedFileError,
    UnsupportedDtypeError,
    npy_read,
    npy_write,
)
from .pnp import (
    PnpEditError,
    PnpResult,
    dual_update,
    phase_only_edit,
    run_pnp,
    statistics_match,
)
from .simulate import (
    PhantomSpec,
    make_phantom,
    make_probe,
    make_scan_grid,
    perturb_probe,
    phantom_masks,
    simulate_dataset,
)
from .solvers import (
    SolverState,
    magnitude_mse,
    modulus_projection,
    pie_object_update,
    pie_probe_update,
    proximal_step,
    run_solver,
    solver_iteration,
)
from .waveopt import (
    ExitWaveTrace,
    PropagatorCache,
    depth_of_field,
    exit_wave,
    extract_patch,
    far_field,
    fresnel_propagate,
    get_propagator,
    ifar_field,
    overlap_ratio,
    place_patch_adjoint,
    predict_intensity,
)

__version__ = "0.1.0"

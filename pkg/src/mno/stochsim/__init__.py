"""Ground-truth ensemble generators."""
from .dataset import (
    SCHEMA_VERSION,
    EnsembleDataset,
    NormStats,
    apply_normalization,
    denormalize_dataset,
    normalize_dataset,
)
from .fbm import (
    CirculantEmbeddingError,
    FbmSpec,
    davies_harte_fbm,
    fbm_covariance,
    simulate_fbm_marginals,
    simulate_logvol_ensemble,
)
from .spde import (
    BlowUpError,
    SpdeSpec,
    integrate,
    sample_initial_conditions,
    simulate_spde_ensemble,
    simulate_spde_snapshots,
)
from .synth import drift_field, synth_head_separation

__all__ = [
    "SCHEMA_VERSION",
    "BlowUpError",
    "CirculantEmbeddingError",
    "EnsembleDataset",
    "FbmSpec",
    "NormStats",
    "SpdeSpec",
    "apply_normalization",
    "davies_harte_fbm",
    "denormalize_dataset",
    "drift_field",
    "fbm_covariance",
    "integrate",
    "normalize_dataset",
    "sample_initial_conditions",
    "simulate_fbm_marginals",
    "simulate_logvol_ensemble",
    "simulate_spde_ensemble",
    "simulate_spde_snapshots",
    "synth_head_separation",
]

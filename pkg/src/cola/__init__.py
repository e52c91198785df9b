"""Calibration data curation toolkit.

Three curation stages (coverage-based dataset selection, compositional
processing, activation-space sample selection) plus a desk-scale layer-wise
compression harness and a spectral weight analyzer for measuring how the
choice of calibration samples moves layer reconstruction error.
"""

from .activation_selection import KMeansConfig, ProjectionSpec, kmeans, project, select_representatives
from .compression import (
    CalibrationBatch,
    LinearLayer,
    evaluate_calibration,
    magnitude_prune,
    read_layer_bank,
    reconstruct_prune,
    reconstruction_error,
    rtn_quantize,
    scaled_quantize,
    wanda_prune,
    write_layer_bank,
)
# The coverage *function* stays namespaced (cola.coverage.coverage) so the
# submodule name is not shadowed at the package root.
from .coverage import CoverageScore, HashingEmbedder, emb_sim, kl_divergence, select_datasets
from .data_model import (
    ActivationMatrix,
    CapabilitySpec,
    CompressionScheme,
    Dataset,
    Sample,
    SelectionResult,
    ensure_tokens,
    load_dataset,
    read_activations,
    save_dataset,
    token_distribution,
    write_activations,
)
from .pipeline import PipelineConfig, compare_selections, run_pipeline
from .processing import ProcessingConfig, chunk_to_length, filter_min_length, stratified_mix, wrap_format
from .spectral import SpectrumReport, band_energies, compression_ratio, weight_spectrum

__version__ = "0.1.0"

"""Training-free image alignment plus feature-level adaptation losses.

Image-level: Lab-space photometric alignment (chroma histogram matching,
mean-matching gamma on lightness) and KL-optimized bilateral texture
alignment. Feature-level: attention-based manifold projection onto PCA +
K-means atoms, a category-oriented triplet loss, and pseudo-label consistency
regularization, all with analytic gradients. A desk-scale pipeline trains a
linear-softmax pixel classifier through the full multi-stage recipe.
"""

from .artifacts import StageArtifact, load_artifact, save_artifact
from .categories import (
    CategoryCenters,
    TripletConfig,
    compute_category_centers,
    triplet_loss,
    triplet_loss_grad,
)
from .colorspace import Histogram, channel_histogram, lab_to_rgb, rgb_to_lab
from .consistency import (
    CategoryThresholds,
    ElasticWarp,
    PerturbConfig,
    PseudoLabelMap,
    ThresholdConfig,
    category_thresholds,
    consistency_loss,
    consistency_loss_grad,
    perturb,
    perturb_with_warp,
    pseudo_labels,
    save_pseudo_labels,
    valid_pseudo_mask,
    warp_pseudo_targets,
)
from .imgio import (
    IGNORE_LABEL,
    DatasetManifest,
    load_image,
    load_label_map,
    save_image,
    save_label_map,
    scan_dataset,
)
from .manifold import (
    AtomSet,
    ManifoldProjector,
    PcaModel,
    fit_pca,
    init_manifold_projector,
    kmeans_atoms,
    manifold_loss,
    manifold_loss_grad,
    manifold_project,
    pca_reconstruct,
    pca_reduce,
    sample_correct_features,
)
from .photometric import (
    GammaResult,
    GammaSolveConfig,
    align_photometric,
    align_photometric_with_info,
    apply_gamma,
    match_histogram,
    solve_gamma,
)
from .pipeline import (
    LossWeights,
    PipelineConfig,
    PipelineResult,
    StageInputs,
    ToySegmenter,
    build_stage_artifact,
    cross_entropy_loss,
    evaluate,
    pixel_descriptors,
    run_pipeline,
    train_stage,
)
from .synthetic import AdaptationData, SyntheticDomainSpec, generate_synthetic_domains
from .texture import (
    IDENTITY_PARAMS,
    BilateralParams,
    TextureAlignReport,
    bilateral_filter,
    default_param_grid,
    highfreq_histogram,
    kl_divergence,
    maybe_texture_align,
    optimize_filter_params,
)

__version__ = "0.1.0"

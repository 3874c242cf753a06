"""SAR despeckling laboratory.

Simulated multiplicative speckle, a small trainable convolutional
despeckling network with an MSE + ratio-divergence cost, and a
filter-quality metric suite (ENL, ratio images, co-occurrence homogeneity,
M-hat), exposed as a library and the ``specklelab`` CLI.
"""

from .backend import backend_name
from .checkpoint import (
    expected_checkpoint_size,
    load_checkpoint,
    save_checkpoint,
)
from .errors import (
    ConfigError,
    DegenerateBatchError,
    EmptyCorpusError,
    FormatError,
    NumericError,
    ShapeError,
    SpeckleLabError,
)
from .images import read_image, write_image
from .loss import (
    CostBreakdown,
    composite_cost,
    mse,
    normalize_to_prob,
    ratio_estimate,
    sid,
)
from .metrics import (
    MetricReport,
    enl,
    glcm_homogeneity,
    homogeneous_masks_from_clean,
    m_index,
    psnr,
    ratio_image,
    report_from_text,
    report_to_text,
)
from .network import (
    ArchitectureSpec,
    LayerSpec,
    NetworkParams,
    TrainConfig,
    TrainHistory,
    build_network,
    default_architecture,
    despeckle_image,
    forward,
    make_architecture,
    parameter_counts,
    train,
)
from .rng import Rng
from .speckle import (
    PatchDataset,
    build_patch_dataset,
    corrupt,
    load_dataset,
    make_homogeneous_scene,
    sample_speckle,
    save_dataset,
    synthetic_clean_image,
)
from .tensor_ops import (
    BatchNormState,
    ConvLayerParams,
    OptimizerState,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    finite_diff_check,
    relu,
    relu_backward,
    sgd_momentum_step,
)

__version__ = "0.1.0"

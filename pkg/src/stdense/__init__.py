"""stdense: a from-scratch differentiable-computing library implementing a
spatially transformed dense CNN — affine grid generation, bilinear sampling
with analytic gradients, DenseNet-style dense blocks, a random-affine
augmentation pipeline, and a three-condition experiment harness.
"""

from ._kernels import BACKEND
from .augment import (
    AugmentSpec,
    NormStats,
    apply_affine,
    denormalize,
    normalize,
    random_affine_params,
)
from .container import (
    BadMagicError,
    ContainerError,
    DuplicateNameError,
    TruncatedFileError,
    read_container,
    write_container,
)
from .data import (
    Dataset,
    batch_iter,
    load_dataset,
    prefetch,
    save_dataset,
    synthesize_dataset,
)
from .densenet import (
    DenseNetConfig,
    DenseNetParams,
    channel_plan,
    dense_block_forward,
    densenet_forward,
    init_densenet,
    transition_forward,
)
from .model import (
    Model,
    ModelConfig,
    default_loc_config,
    init_model,
    load_model,
    save_model,
)
from .optim import (
    AdamState,
    Optimizer,
    adam_step,
    sgd_step,
)
from .stn import (
    AffineParams,
    LocNetConfig,
    LocNetParams,
    SampleGrid,
    affine_grid,
    bilinear_sample,
    init_locnet,
    localization_forward,
    stn_forward,
    theta_batch,
)
from .tensor import (
    ConvWeights,
    GradTape,
    NumericError,
    ShapeError,
    Tensor,
    add,
    avgpool2x2,
    backward,
    concat_channels,
    conv2d,
    global_avg_pool,
    linear,
    maxpool2x2,
    mul,
    relu,
    reshape,
    slice_channels,
    softmax_cross_entropy,
    sum_all,
    zero_grads,
)
from .train import (
    CONDITIONS,
    ConditionResult,
    EpochStats,
    ExperimentReport,
    TrainConfig,
    evaluate,
    export_report,
    final_quarter_slope,
    run_experiment,
    train_epoch,
)

__version__ = "0.1.0"

"""Light field super-resolution with omni-frequency projection.

Public surface: light field containers and pixel ops (`lightfield`), dataset
tooling (`data`), the network (`model`), the training loop (`train`), the
metrics harness (`evaluate`), config plumbing (`config`), and the CLI
(`cli`). The names below cover the common workflow.
"""

from .data import (
    DegradationChain,
    LightFieldDataset,
    SceneRecord,
    SplitManifest,
    generate_synthetic_pair,
    index_dataset,
    parse_chain,
    sample_batch,
    split_scenes,
    synthesize_hr_scene,
    write_synthetic_dataset,
)
from .errors import (
    AbortWithDiagnostics,
    BoundsError,
    ColorspaceError,
    ConfigError,
    DataError,
    EmptyDataset,
    InconsistentViews,
    MissingView,
    OfpnetError,
    RangeError,
    ReportError,
    SizeError,
    SplitError,
    StateError,
)
from .evaluate import (
    MetricsReport,
    emit_table,
    estimate_epi_slope,
    evaluate_baseline,
    evaluate_model,
    export_epi_strip,
    psnr_y,
    ssim_y,
    write_report,
)
from .lightfield import (
    Colorspace,
    EpiImage,
    EpiOrientation,
    LightField,
    ScaleTag,
    bicubic_resize,
    extract_epi,
    extract_patch,
    extract_y,
    load_lightfield,
    rgb_to_ycbcr,
    save_lightfield,
    ycbcr_to_rgb,
)
from .model import (
    FrequencyTriple,
    ModelConfig,
    OFPNet,
    ProjectionState,
    build_model,
    count_params,
    make_ablation,
    super_resolve,
)
# The training entry point stays at ofpnet.train.train: re-exporting the bare
# function here would shadow the submodule attribute of the same name.
from .train import (
    TrainConfig,
    TrainState,
    finetune,
    l1_loss,
    load_checkpoint,
    lr_at,
    overfit_smoke,
    restore_model,
    save_checkpoint,
)

__version__ = "0.1.0"

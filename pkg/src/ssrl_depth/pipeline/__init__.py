from .checkpoint import CheckpointError, checksum, read_checkpoint, save_module
from .config import (
    AblationSpec,
    Config,
    NetConfig,
    OptimizerConfig,
    SSRLConfig,
    StageConfig,
    StagesConfig,
    load_config,
    parse_config,
)
from .nets import Networks, build_networks, load_task_network
from .runner import ablation_grid, run_ablation, run_variant
from .schedule import lr_schedule
from .stages import (
    FreezeViolationError,
    RunState,
    StageOrderError,
    TrainData,
    TrainingDivergedError,
    run_depth_stage,
    run_ssrl_stage,
    run_style_transfer_stage,
)

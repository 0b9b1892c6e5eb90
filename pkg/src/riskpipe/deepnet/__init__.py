from .lrfind import LRFinderResult, lr_finder
from .model import (
    LEARNABLE,
    NetConfig,
    NetParams,
    backward,
    conv_out_length,
    dropout_masks,
    elu,
    forward,
    init_params,
    predict_logits,
    sigmoid,
)
from .optim import AdamWState, adamw_step, focal_loss
from .train import (
    NetTrainer,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    sample_configs,
    save_checkpoint,
    train,
    tune_net,
)

FULL_NET = NetConfig()
DESK_NET = NetConfig(kernel_sizes=(15, 4, 3), strides=(2, 2, 1), window_length=120, n_windows=6)

from galileo.training.batching import BatchSlot, make_batch
from galileo.training.config import Config, load_config, parse_config_text
from galileo.training.losses import all_disc_loss, mse_loss, patch_disc_loss
from galileo.training.loop import Run, TrainState, init_state, pretrain, train_step
from galileo.training.optim import AdamW, ema_update, schedules

__all__ = ["AdamW", "BatchSlot", "Config", "Run", "TrainState", "all_disc_loss",
           "ema_update", "init_state", "load_config", "make_batch", "mse_loss",
           "parse_config_text", "patch_disc_loss", "pretrain", "schedules", "train_step"]

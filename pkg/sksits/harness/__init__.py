"""
The :mod:`sksits.harness` module trains, evaluates and inspects U-TAE
models from YAML run configurations.
"""
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .config import DataConfig, OptimConfig, RunConfig, config_hash, dump_config, load_config
from .estimator import UTAESegmenter
from .figures import attention_montage, colorize_panoptic, render_map, save_heatmap, save_saliency
from .runs import Splits, ablate, evaluate, generate, load_splits, predict, train

"""
Model checkpoints and training states

A checkpoint is a directory holding::

    weights.npz          one array per entry of the model state dict
    manifest.json        format, architecture, its hash, normalisation statistics
                         and any extra record (epoch, validation scores)
    training_state.pt    optional, optimiser, scheduler and random generator
                         states needed to resume training exactly
"""
import json
import logging
import os
from collections import OrderedDict

import numpy as np
import torch

from ..exceptions import IncompatibleCheckpoint
from .config import config_hash

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sksits-checkpoint-1"
WEIGHTS = "weights.npz"
MANIFEST = "manifest.json"
TRAINING_STATE = "training_state.pt"


def save_checkpoint(directory, state_dict, architecture, norm_stats=None, **extra):
    """
    Write model weights and their manifest

    Parameters
    ----------
    directory: str
        created if needed
    state_dict: dict of str to torch.Tensor
    architecture: dict
        JSON-serialisable description of the model, hashed into the manifest
    norm_stats: ChannelStats, default=None
    **extra
        JSON-serialisable entries added to the manifest

    Returns
    -------
    str
        path to the manifest
    """
    os.makedirs(directory, exist_ok=True)
    arrays = OrderedDict((k, v.detach().cpu().numpy()) for k, v in state_dict.items())
    np.savez(os.path.join(directory, WEIGHTS), **arrays)
    manifest = dict(
        format=CHECKPOINT_FORMAT,
        architecture=architecture,
        config_hash=config_hash(architecture),
        norm_stats=None if norm_stats is None else norm_stats.to_dict(),
        parameters={k: list(a.shape) for k, a in arrays.items()},
        **extra,
    )
    path = os.path.join(directory, MANIFEST)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    logger.debug("checkpoint written to %s", directory)
    return path


def read_manifest(directory, expected_hash=None):
    """
    Read and check the manifest of a checkpoint

    Raises
    ------
    IncompatibleCheckpoint
        if the directory holds no checkpoint of a known format,
        or if ``expected_hash`` is given and differs from the stored one
    """
    path = os.path.join(directory, MANIFEST)
    try:
        with open(path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise IncompatibleCheckpoint(f"no readable checkpoint manifest at {path}: {e}") from e
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise IncompatibleCheckpoint(f"unknown checkpoint format {manifest.get('format')!r} in {path}")
    if expected_hash is not None and manifest.get("config_hash") != expected_hash:
        raise IncompatibleCheckpoint(
            f"checkpoint {directory} was trained with another configuration "
            f"(hash {manifest.get('config_hash', '')[:12]}, expected {expected_hash[:12]})"
        )
    return manifest


def load_checkpoint(directory, expected_hash=None):
    """
    Read the weights and manifest of a checkpoint

    Parameters
    ----------
    directory: str
    expected_hash: str, default=None
        hash of the architecture the weights are loaded into

    Returns
    -------
    state_dict: OrderedDict of str to torch.Tensor
    manifest: dict

    Raises
    ------
    IncompatibleCheckpoint
    """
    manifest = read_manifest(directory, expected_hash)
    try:
        with np.load(os.path.join(directory, WEIGHTS)) as arrays:
            state_dict = OrderedDict((k, torch.from_numpy(arrays[k].copy())) for k in arrays.files)
    except OSError as e:
        raise IncompatibleCheckpoint(f"cannot read weights of {directory}: {e}") from e
    expected = {k: tuple(v) for k, v in manifest["parameters"].items()}
    if {k: tuple(v.shape) for k, v in state_dict.items()} != expected:
        raise IncompatibleCheckpoint(f"weights of {directory} do not match its manifest")
    return state_dict, manifest


def save_training_state(directory, optimizer, scheduler, epoch, history, extra=None):
    """
    Write everything needed to resume training after ``epoch``

    Random generator states of numpy and torch are saved along.
    """
    os.makedirs(directory, exist_ok=True)
    state = dict(
        epoch=int(epoch),
        optimizer=optimizer.state_dict(),
        scheduler=scheduler.state_dict(),
        history=list(history),
        torch_rng=torch.get_rng_state(),
        numpy_rng=np.random.get_state(),
        extra=extra or {},
    )
    path = os.path.join(directory, TRAINING_STATE)
    torch.save(state, path)
    return path


def load_training_state(directory):
    """
    Read a training state written by ``save_training_state``, None if there is none

    Random generator states are not restored here, see ``restore_rng``.
    """
    path = os.path.join(directory, TRAINING_STATE)
    if not os.path.isfile(path):
        return None
    return torch.load(path, map_location="cpu", weights_only=False)


def restore_rng(state):
    torch.set_rng_state(state["torch_rng"])
    np.random.set_state(state["numpy_rng"])

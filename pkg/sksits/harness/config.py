"""
Run configuration

A run is described by a YAML document::

    task: panoptic            # or semantic
    seed: 0
    device: cpu
    out: runs/fold1
    quality_threshold: tune   # panoptic only, or a value in [0, 1]
    data:
      source: synthetic       # or pastis
      root: null              # falls back on PASTIS_ROOT
      fold: 1
      n_samples: 40
      generator: {H: 64, W: 64, n_classes: 5}
    model: {encoder_widths: [64, 64, 64, 128], ablation: full}
    paps: {shape_size: 16}    # panoptic only
    optim: {lr: 0.01, epochs: 100, milestones: [50]}

Every key has a default reproducing the reference configuration.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from ..datasets import GenConfig
from ..encoders import UTAEConfig
from ..exceptions import ConfigError
from ..panoptic import PaPsConfig
from ..utils import _check_fold

TASKS = ("semantic", "panoptic")
SOURCES = ("synthetic", "pastis")

# learning rate, number of epochs and decay milestones of each task
TASK_SCHEDULES = {
    "semantic": dict(lr=1e-3, epochs=100, milestones=()),
    "panoptic": dict(lr=1e-2, epochs=100, milestones=(50,)),
}


def _build(cls, values, where):
    """instantiate a config dataclass, unknown keys and invalid values raise ``ConfigError``"""
    if values is None:
        values = dict()
    if not isinstance(values, dict):
        raise ConfigError(f"section {where!r} should be a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section {where!r}: {unknown}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section {where!r}: {e}") from e


@dataclass(frozen=True)
class DataConfig:
    """
    Dataset of a run

    Parameters
    ----------
    source: str, default="synthetic"
        "synthetic" or "pastis"
    root: str, default=None
        PASTIS-layout directory, ``PASTIS_ROOT`` if None
    fold: int, default=1
        cross validation fold, in 1..5
    n_samples: int, default=40
        number of synthetic sequences
    generator: GenConfig
        synthetic generator settings
    augment: bool, default=False
        random horizontal and vertical flips of training sequences
    n_jobs: int, default=None
        joblib workers for generation, loading and evaluation
    """

    source: str = "synthetic"
    root: str = None
    fold: int = 1
    n_samples: int = 40
    generator: GenConfig = field(default_factory=GenConfig)
    augment: bool = False
    n_jobs: int = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"unknown data source {self.source!r}, expected one of {SOURCES}")
        if isinstance(self.generator, dict):
            object.__setattr__(self, "generator", _build(GenConfig, self.generator, "data.generator"))
        object.__setattr__(self, "fold", _check_fold(self.fold))
        if self.n_samples < 1:
            raise ConfigError("n_samples should be at least 1")


@dataclass(frozen=True)
class OptimConfig:
    """
    Adam optimisation schedule, task defaults are used for unset values

    Parameters
    ----------
    lr: float, default=None
        1e-3 for semantic segmentation, 1e-2 for panoptic segmentation
    epochs: int, default=None
        100 for both tasks
    milestones: tuple of int, default=None
        epochs at which the learning rate is multiplied by ``gamma``,
        none for semantic segmentation, epoch 50 for panoptic segmentation
    gamma: float, default=0.1
    batch_size: int, default=4
    weight_decay: float, default=0
    """

    lr: float = None
    epochs: int = None
    milestones: tuple = None
    gamma: float = 0.1
    batch_size: int = 4
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.milestones is not None:
            object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.batch_size < 1:
            raise ConfigError("batch_size should be at least 1")

    def resolve(self, task):
        """copy with the unset values taken from the schedule of ``task``"""
        defaults = TASK_SCHEDULES[task]
        return replace(
            self,
            lr=defaults["lr"] if self.lr is None else float(self.lr),
            epochs=defaults["epochs"] if self.epochs is None else int(self.epochs),
            milestones=defaults["milestones"] if self.milestones is None else self.milestones,
        )


@dataclass(frozen=True)
class RunConfig:
    """
    Complete description of a run

    Parameters
    ----------
    task: str, default="semantic"
    seed: int, default=0
    device: str, default="cpu"
    out: str, default="runs/default"
        output directory
    data: DataConfig
    model: UTAEConfig
    paps: PaPsConfig, default=None
        panoptic head, the default one for panoptic runs if None.
        Forbidden for semantic runs
    optim: OptimConfig
        resolved against the task defaults
    quality_threshold: float or str, default=None
        "tune" or a value in [0, 1], "tune" for panoptic runs if None.
        Forbidden for semantic runs
    max_proposals: int, default=None
        cap on the number of proposals per image
    """

    task: str = "semantic"
    seed: int = 0
    device: str = "cpu"
    out: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    model: UTAEConfig = field(default_factory=UTAEConfig)
    paps: PaPsConfig = None
    optim: OptimConfig = field(default_factory=OptimConfig)
    quality_threshold: object = None
    max_proposals: int = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.task == "semantic":
            if self.paps is not None or self.quality_threshold is not None or self.max_proposals is not None:
                raise ConfigError("panoptic settings are not allowed for a semantic segmentation run")
        else:
            if self.paps is None:
                object.__setattr__(self, "paps", PaPsConfig())
            if self.quality_threshold is None:
                object.__setattr__(self, "quality_threshold", "tune")
            q = self.quality_threshold
            if q != "tune":
                try:
                    q = float(q)
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"quality_threshold should be 'tune' or a number, got {q!r}") from e
                if not 0 <= q <= 1:
                    raise ConfigError(f"quality_threshold should be in [0, 1], got {q}")
                object.__setattr__(self, "quality_threshold", q)
        object.__setattr__(self, "optim", self.optim.resolve(self.task))

    @classmethod
    def from_dict(cls, values):
        """build a configuration from nested mappings, as read from YAML"""
        values = dict(values or {})
        sections = dict(
            data=(DataConfig, values.pop("data", None)),
            model=(UTAEConfig, values.pop("model", None)),
            optim=(OptimConfig, values.pop("optim", None)),
        )
        paps = values.pop("paps", None)
        kwargs = {name: _build(c, v, name) for name, (c, v) in sections.items()}
        if paps is not None:
            kwargs["paps"] = _build(PaPsConfig, paps, "paps")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown keys in run configuration: {unknown}")
        try:
            return cls(**values, **kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid run configuration: {e}") from e

    def to_dict(self):
        return asdict(self)

    def override(self, fold=None, seed=None, out=None, device=None):
        """copy with command line overrides, None values are ignored"""
        config = self
        if fold is not None:
            try:
                config = replace(config, data=replace(config.data, fold=fold))
            except ValueError as e:
                raise ConfigError(str(e)) from e
        changes = {k: v for k, v in dict(seed=seed, out=out, device=device).items() if v is not None}
        return replace(config, **changes) if changes else config


def load_config(path=None):
    """
    Read a run configuration from a YAML file

    Parameters
    ----------
    path: str, default=None
        the default configuration is returned if None

    Raises
    ------
    ConfigError
        if the file cannot be parsed, or holds unknown keys or invalid values
    """
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            values = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read configuration file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse configuration file {path}: {e}") from e
    if values is not None and not isinstance(values, dict):
        raise ConfigError(f"{path} should hold a mapping")
    return RunConfig.from_dict(values)


def dump_config(config, path):
    """write ``config`` as YAML, readable by ``load_config``"""

    def plain(value):
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        return value

    with open(path, "w") as f:
        yaml.safe_dump(plain(config.to_dict()), f, sort_keys=False)
    return path


def config_hash(architecture):
    """
    Fingerprint of the settings a checkpoint depends on

    Parameters
    ----------
    architecture: dict
        JSON-serialisable description of a model

    Returns
    -------
    str
        hexadecimal sha256 digest of the canonical JSON encoding

    Examples
    --------
    >>> config_hash(dict(a=1, b=[2, 3])) == config_hash(dict(b=(2, 3), a=1))
    True
    """
    canonical = json.dumps(architecture, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

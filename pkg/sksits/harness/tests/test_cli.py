import os

import pytest
import yaml

from ...exceptions import DivergenceError
from .. import runs
from ..cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, build_parser, main
from . import TINY_UTAE


def write_config(tmp_path, **values):
    values.setdefault("data", dict(n_samples=10, generator=dict(H=16, W=16, T_range=[4, 5], channels=3, n_classes=2)))
    values.setdefault("model", TINY_UTAE)
    values.setdefault("optim", dict(epochs=1))
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(values))
    return str(path)


def test_parser():
    args = build_parser().parse_args(["evaluate", "--fold", "3", "--max-dates", "8", "--split", "val"])
    assert (args.command, args.fold, args.max_dates, args.split) == ("evaluate", 3, 8, "val")
    with pytest.raises(SystemExit):
        build_parser().parse_args(["evaluate", "--split", "holdout"])
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_gen_data_then_train(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", config, "--out", str(tmp_path), "--n-samples", "10"]) == EXIT_OK
    root = tmp_path / "data"
    assert (root / "metadata.json").exists()

    config = write_config(tmp_path, data=dict(source="pastis", root=str(root)))
    out = str(tmp_path / "run")
    assert main(["train", "--config", config, "--out", out, "--seed", "1"]) == EXIT_OK
    assert os.path.isfile(os.path.join(out, "model", "manifest.json"))
    assert main(["evaluate", "--config", config, "--out", out, "--seed", "1"]) == EXIT_OK
    assert os.path.isfile(os.path.join(out, "eval_test", "metrics.json"))


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--fold", "6"],
        ["ablate", "--variants", "full", "no_decoder"],
    ],
)
def test_config_errors(tmp_path, argv):
    assert main(argv + ["--config", write_config(tmp_path), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_key(tmp_path):
    assert main(["train", "--config", write_config(tmp_path, epochs=3)]) == EXIT_CONFIG


def test_incompatible_checkpoint(tmp_path):
    config = write_config(tmp_path)
    assert main(["train", "--config", config, "--out", str(tmp_path)]) == EXIT_OK
    other = write_config(tmp_path, model=dict(TINY_UTAE, ablation="skip_mean"))
    assert main(["evaluate", "--config", other, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_data_errors(tmp_path, monkeypatch):
    monkeypatch.delenv("PASTIS_ROOT", raising=False)
    config = write_config(tmp_path, data=dict(source="pastis"))
    assert main(["train", "--config", config]) == EXIT_DATA
    config = write_config(tmp_path, data=dict(source="pastis", root=str(tmp_path / "missing")))
    assert main(["evaluate", "--config", config]) == EXIT_DATA


def test_divergence(tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise DivergenceError("non-finite loss", snapshot=dict(epoch=0))

    monkeypatch.setattr(runs, "train", diverge)
    assert main(["train", "--config", write_config(tmp_path)]) == EXIT_DIVERGENCE

from ..config import RunConfig

TINY_UTAE = dict(
    encoder_widths=[8, 8, 16],
    decoder_widths=[4, 8, 16],
    out_conv=[8, 4],
    n_head=4,
    d_model=8,
    mlp=[8, 16],
)
TINY_PAPS = dict(shape_size=4, hidden=8, class_hidden=[8, 8])


def tiny_run(out, task="semantic", epochs=1, n_samples=10, **values):
    """run configuration small enough to train in a few seconds on a CPU"""
    values["data"] = dict(
        dict(n_samples=n_samples, generator=dict(H=16, W=16, T_range=[4, 5], channels=3, n_classes=2)),
        **values.get("data", {}),
    )
    values.setdefault("model", TINY_UTAE)
    values.setdefault("optim", dict(epochs=epochs, batch_size=4))
    if task == "panoptic":
        values.setdefault("paps", TINY_PAPS)
    return RunConfig.from_dict(dict(task=task, out=str(out), **values))

"""
Figures of predictions: semantic and panoptic maps, centerness heatmaps,
saliency maps and attention masks
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

HEATMAP_CMAP = "magma"
SALIENCY_CMAP = "viridis"
SEMANTIC_CMAP = "tab20"


def render_map(values, cmap=HEATMAP_CMAP, vmin=0.0, vmax=1.0):
    """
    Colour a 2D array

    Returns
    -------
    np.ndarray of uint8 of shape (H, W, 4)
        RGBA image, values outside ``[vmin, vmax]`` are clipped

    Examples
    --------
    >>> render_map(np.zeros((2, 3))).shape
    (2, 3, 4)
    """
    values = np.asarray(values, dtype=np.float64)
    scaled = np.clip((values - vmin) / max(vmax - vmin, np.finfo(float).eps), 0, 1)
    return matplotlib.colormaps[cmap](scaled, bytes=True)


def save_map(path, values, cmap=HEATMAP_CMAP, vmin=0.0, vmax=1.0):
    """write ``render_map(values)`` as a PNG file, one pixel per array entry"""
    Image.fromarray(render_map(values, cmap, vmin, vmax)).save(path)
    return path


def save_heatmap(path, heatmap):
    """centerness heatmap, values in [0, 1]"""
    return save_map(path, heatmap, HEATMAP_CMAP)


def save_saliency(path, saliency):
    """saliency probabilities, values in [0, 1]"""
    return save_map(path, saliency, SALIENCY_CMAP)


def save_semantic(path, semantic, n_labels):
    return save_map(path, semantic, SEMANTIC_CMAP, 0, max(n_labels - 1, 1))


def select_dates(T, n_dates):
    """indices of ``n_dates`` acquisitions evenly spread over a sequence of length ``T``"""
    if n_dates is None or n_dates >= T:
        return np.arange(T)
    return np.unique(np.round(np.linspace(0, T - 1, n_dates)).astype(int))


def attention_montage(attention, dates, n_dates=6, path=None):
    """
    Grid of attention masks, one row per head and one column per selected date

    Parameters
    ----------
    attention: np.ndarray of shape (G, T, H, W)
    dates: np.ndarray of shape (T,)
    n_dates: int, default=6
        number of acquisitions shown, evenly spread over the sequence
    path: str, default=None
        if given, the figure is saved there and closed

    Returns
    -------
    matplotlib.figure.Figure
    """
    attention = np.asarray(attention)
    G, T = attention.shape[:2]
    selected = select_dates(T, n_dates)
    fig, axes = plt.subplots(G, len(selected), figsize=(1.2 * len(selected), 1.2 * G), squeeze=False)
    for g in range(G):
        for c, t in enumerate(selected):
            ax = axes[g, c]
            ax.imshow(attention[g, t], vmin=0, vmax=1, cmap=HEATMAP_CMAP)
            ax.set_xticks([])
            ax.set_yticks([])
            if g == 0:
                ax.set_title(f"day {int(dates[t])}", fontsize=7)
            if c == 0:
                ax.set_ylabel(f"head {g + 1}", fontsize=7)
    fig.subplots_adjust(wspace=0.05, hspace=0.05)
    if path is not None:
        fig.savefig(path, bbox_inches="tight", dpi=100)
        plt.close(fig)
    return fig


def instance_colors(ids, seed=0):
    """one RGB colour per instance id, drawn once for all from ``seed``"""
    rng = np.random.RandomState(seed)
    ids = sorted(int(i) for i in ids)
    palette = rng.randint(48, 256, size=(len(ids), 3)).astype(np.uint8)
    return {i: tuple(int(v) for v in color) for i, color in zip(ids, palette)}


def colorize_panoptic(pmap, seed=0):
    """
    RGB rendering of the instances of a panoptic map

    Returns
    -------
    rgb: np.ndarray of uint8 of shape (H, W, 3)
        background in black
    colors: dict of int to tuple
        colour of every instance of ``pmap.instances``
    """
    colors = instance_colors(pmap.instances.index, seed)
    lut = np.zeros((int(pmap.instance.max(initial=0)) + 1, 3), dtype=np.uint8)
    for i, color in colors.items():
        lut[i] = color
    return lut[pmap.instance], colors


def save_panoptic_figure(path, pmap, n_labels, seed=0):
    """semantic channel and coloured instances side by side"""
    rgb, _ = colorize_panoptic(pmap, seed)
    fig, (left, right) = plt.subplots(1, 2, figsize=(8, 4))
    left.imshow(pmap.semantic, cmap=SEMANTIC_CMAP, vmin=0, vmax=max(n_labels - 1, 1), interpolation="nearest")
    left.set_title("semantic")
    right.imshow(rgb, interpolation="nearest")
    right.set_title(f"{len(pmap.instances)} parcels")
    for ax in (left, right):
        ax.set_xticks([])
        ax.set_yticks([])
    fig.savefig(path, bbox_inches="tight", dpi=100)
    plt.close(fig)
    return path

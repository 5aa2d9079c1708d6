"""Diagnostic exports: feature-map grids, dense-layer strips, training curves.

Images are written as binary PGM; curves as CSV with LF line endings.
"""

import csv
import math
from pathlib import Path

import numpy as np

from .data import Sample, encode_netpbm
from .network import TrainRecord, ValidationRecord, activations

SEPARATOR = 255
FC_BLOCK = 16
CURVE_HEADER = ["iteration", "epoch", "loss", "train_accuracy"]
VAL_HEADER = ["epoch", "val_accuracy"]


def minmax_to_bytes(values):
    """Scale to 0-255 so min -> 0 and max -> 255; a constant input maps to 0."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if not hi > lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def render_grid(tiles, columns):
    """Lay equally sized single-channel uint8 tiles out row-major, 1-pixel separators."""
    tiles = [np.asarray(t) for t in tiles]
    if not tiles:
        raise ValueError("no tiles to render")
    th, tw = tiles[0].shape
    if any(t.shape != (th, tw) for t in tiles):
        raise ValueError("all tiles must share one size")
    rows = math.ceil(len(tiles) / columns)
    grid = np.full((rows * (th + 1) - 1, columns * (tw + 1) - 1), SEPARATOR, dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, columns)
        grid[r * (th + 1):r * (th + 1) + th, c * (tw + 1):c * (tw + 1) + tw] = tile
    return grid


def grid_columns(n):
    return 12 if n == 96 else math.ceil(math.sqrt(n))


def _image_of(sample):
    return sample.image if isinstance(sample, Sample) else np.asarray(sample, dtype=np.float64)


def _write_pgm(path, grid):
    Path(path).write_bytes(encode_netpbm(grid[None].astype(np.float64)))


def feature_map_grid(net, sample, layer="relu"):
    key = {"conv": "conv", "relu": "relu1"}.get(layer)
    if key is None:
        raise ValueError(f"unknown layer {layer!r}; expected 'conv' or 'relu'")
    maps = activations(net, _image_of(sample)[None])[key][0]
    return render_grid([minmax_to_bytes(m) for m in maps], grid_columns(len(maps)))


def export_feature_maps(net, sample, layer, path):
    """Write every conv (or post-ReLU) map of one sample as a PGM grid (12 x 8 for 96 maps)."""
    grid = feature_map_grid(net, sample, layer)
    _write_pgm(path, grid)
    return grid.shape


def fc_strip(net, sample):
    values = activations(net, _image_of(sample)[None])["relu2"][0]
    levels = minmax_to_bytes(values)
    blocks = [np.full((FC_BLOCK, FC_BLOCK), v, dtype=np.uint8) for v in levels]
    return render_grid(blocks, len(blocks))


def export_fc_activations(net, sample, path):
    """Write the first dense layer's post-ReLU activations as a one-row heat strip."""
    strip = fc_strip(net, sample)
    _write_pgm(path, strip)
    return strip.shape


def validation_path(path):
    path = Path(path)
    return path.with_name(path.stem + "_val" + path.suffix)


def export_training_curve(records, path, validation=()):
    """Write ``iteration,epoch,loss,train_accuracy`` rows, plus ``<stem>_val.csv``.

    Floats are written with ``repr`` so a parse reproduces them exactly.
    """
    if not records:
        raise ValueError("no training records to export")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for r in records:
            w.writerow([r.iteration, r.epoch, repr(float(r.batch_loss)), repr(float(r.running_train_accuracy))])
    vpath = validation_path(path)
    with open(vpath, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VAL_HEADER)
        for v in validation:
            w.writerow([v.epoch, repr(float(v.val_accuracy))])
    return Path(path), vpath


def read_training_curve(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != CURVE_HEADER:
            raise ValueError(f"{path}: not a training-curve CSV")
        return [TrainRecord(int(i), int(e), float(l), float(a)) for i, e, l, a in reader]


def read_validation_curve(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != VAL_HEADER:
            raise ValueError(f"{path}: not a validation-curve CSV")
        return [ValidationRecord(int(e), float(a)) for e, a in reader]

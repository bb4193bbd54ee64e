"""Dump attention, segment and tree diagnostics for one record as CSV and PGM files."""
import csv
import os
from pathlib import Path

import numpy as np

PGM_SCALE = 12  # pixels per matrix cell


def _value(x):
    return np.asarray(getattr(x, "value", x), dtype=np.float64)


def write_matrix_csv(path, matrix, columns, rows=None):
    matrix = np.atleast_2d(matrix)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(([""] if rows is not None else []) + list(columns))
        for i, row in enumerate(matrix):
            cells = [f"{v:.6f}" for v in row]
            writer.writerow(([rows[i]] if rows is not None else []) + cells)


def write_pgm(path, matrix, scale=PGM_SCALE):
    """Binary greyscale heatmap, min-max scaled; dark cells are large."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lo, hi = float(matrix.min()), float(matrix.max())
    norm = (matrix - lo) / (hi - lo) if hi > lo else np.zeros_like(matrix)
    pixels = (255 - np.round(norm * 255)).astype(np.uint8)
    pixels = np.kron(pixels, np.ones((scale, scale), dtype=np.uint8))
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def aspect_attention_peak(att, record):
    """Column with the most head-averaged attention from the aspect rows."""
    att = _value(att)
    rows = att.mean(axis=0)[record.aspect_from : record.aspect_to + 1]
    return int(np.argmax(rows.mean(axis=0)))


def inspect_record(model, record, record_id, out_dir):
    """Write every available diagnostic for ``record``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"cannot write to {out}")
    ex = model.featurize(record)
    diag = model.forward(ex).diagnostics
    tokens = record.tokens
    written = []

    def emit(name, matrix, columns=tokens, rows=tokens, image=True):
        base = out / f"rec{record_id}_{name}"
        write_matrix_csv(base.with_suffix(".csv"), matrix, columns, rows)
        written.append(base.with_suffix(".csv"))
        if image:
            write_pgm(base.with_suffix(".pgm"), matrix)
            written.append(base.with_suffix(".pgm"))

    if "att" in diag:
        for h, head in enumerate(_value(diag["att"])):
            emit(f"ases_head{h}", head)
        emit("ms", _value(diag["m_s"]))
    if "tree" in diag:
        emit("asyl", _value(diag["tree"].edge_marginals))
        emit("pr", _value(diag["tree"].root_probs)[None, :], rows=None)
    if "alpha" in diag:
        emit("alpha", _value(diag["alpha"])[None, :], columns=["sem", "syn", "com"], rows=None, image=False)
    for k, layer in enumerate(ex.y_seg, start=1):
        emit(f"yseg_layer{k}", layer)
    return written

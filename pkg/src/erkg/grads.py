"""Per-block gradient bookkeeping.

A gradient set maps block name -> (row_indices | None, array).  ``None``
indices mark a dense full-block gradient; otherwise ``array`` holds one
gradient row per index, indices may repeat, and contributions scatter-add.
The accumulator merges several such sets (e.g. loss and penalty terms)
into one canonical set per block, keeping row-sparsity whenever no dense
contribution was seen.
"""

from __future__ import annotations

import numpy as np

GradSet = dict[str, tuple[np.ndarray | None, np.ndarray]]


class GradAccumulator:
    def __init__(self):
        self._parts: dict[str, list[tuple[np.ndarray | None, np.ndarray]]] = {}

    def add(self, name: str, idx: np.ndarray | None, arr: np.ndarray) -> None:
        self._parts.setdefault(name, []).append((idx, arr))

    def add_set(self, grads: GradSet, scale: float = 1.0) -> None:
        for name, (idx, arr) in grads.items():
            self.add(name, idx, arr if scale == 1.0 else scale * arr)

    def finalize(self, shapes: dict[str, tuple[int, ...]]) -> GradSet:
        """Collapse contributions; densify a block only if one part is dense."""
        out: GradSet = {}
        for name, parts in self._parts.items():
            if any(idx is None for idx, _ in parts):
                dense = np.zeros(shapes[name])
                for idx, arr in parts:
                    if idx is None:
                        dense += arr
                    else:
                        np.add.at(dense, idx, arr)
                out[name] = (None, dense)
            else:
                all_idx = np.concatenate([idx for idx, _ in parts])
                uniq, inverse = np.unique(all_idx, return_inverse=True)
                rows = np.zeros((len(uniq),) + parts[0][1].shape[1:])
                pos = 0
                for idx, arr in parts:
                    np.add.at(rows, inverse[pos : pos + len(idx)], arr)
                    pos += len(idx)
                out[name] = (uniq, rows)
        return out


def densify(grads: GradSet, shapes: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
    """Expand a gradient set to full dense arrays (testing convenience)."""
    out = {}
    for name, shape in shapes.items():
        dense = np.zeros(shape)
        if name in grads:
            idx, arr = grads[name]
            if idx is None:
                dense += arr
            else:
                np.add.at(dense, idx, arr)
        out[name] = dense
    return out


def all_finite(grads: GradSet) -> bool:
    return all(np.all(np.isfinite(arr)) for _, arr in grads.values())

"""Tour-length evaluation of a trained model against classical baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tsp
from .inference import beam_search

__all__ = ["TspEvalRow", "evaluate_tsp", "CSV_HEADER"]

CSV_HEADER = ["n", "avg_model", "avg_exact_or_NA", "avg_christofides", "avg_nn", "valid_fraction"]


@dataclass
class TspEvalRow:
    n: int
    avg_model: float
    avg_exact: float | None
    avg_christofides: float | None
    avg_nn: float | None
    valid_fraction: float
    model_lengths: np.ndarray
    exact_lengths: np.ndarray | None = None
    nn_lengths: np.ndarray | None = None

    def csv_fields(self) -> list[str]:
        def fmt(v):
            return "NA" if v is None else f"{v:.9g}"

        return [str(self.n), fmt(self.avg_model), fmt(self.avg_exact), fmt(self.avg_christofides), fmt(self.avg_nn),
                fmt(self.valid_fraction)]


def evaluate_tsp(model, n: int, count: int, beam: int = 5, seed: int = 12345, baselines: bool = True,
                 exact_cap: int = tsp.HELD_KARP_CAP) -> TspEvalRow:
    """Decode ``count`` fresh instances of size ``n`` and average tour lengths.

    Instance k uses ``derive_seed(seed, n, k)``. The exact column is only
    filled when ``n <= exact_cap``.
    """
    model_len, exact_len, chris_len, nn_len = [], [], [], []
    valid = 0
    for k in range(count):
        inst = tsp.generate_instance(n, tsp.derive_seed(seed, n, k))
        order = beam_search(model, inst.points, beam=beam)
        if np.array_equal(np.sort(order), np.arange(n)):
            valid += 1
            model_len.append(tsp.tour_length(inst, order))
        else:
            model_len.append(np.nan)
        if baselines:
            if n <= exact_cap:
                exact_len.append(tsp.held_karp(inst).length)
            if n >= 3:
                chris_len.append(tsp.christofides(inst).length)
            nn_len.append(tsp.nearest_neighbor(inst).length)
    model_arr = np.array(model_len)
    return TspEvalRow(
        n=n,
        avg_model=float(np.nanmean(model_arr)) if valid else float("nan"),
        avg_exact=float(np.mean(exact_len)) if exact_len else None,
        avg_christofides=float(np.mean(chris_len)) if chris_len else None,
        avg_nn=float(np.mean(nn_len)) if nn_len else None,
        valid_fraction=valid / count,
        model_lengths=model_arr,
        exact_lengths=np.array(exact_len) if exact_len else None,
        nn_lengths=np.array(nn_len) if nn_len else None,
    )

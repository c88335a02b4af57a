"""Training objectives: quantile loss plus the two-level smoothness regularizer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


def loss_quantile(pred: Tensor, truth: np.ndarray, levels: Sequence[float],
                  as_printed: bool = False) -> Tensor:
    """Quantile loss summed over levels and averaged over the batch.

    ``pred`` is (N, M), ``truth`` is (N,). The default is the usual pinball
    orientation, whose minimiser at level q is the q-quantile:
    ``q*max(0, y - p) + (1 - q)*max(0, p - y)``. ``as_printed=True`` swaps
    the weights (``q`` on over-prediction), which makes level q converge to
    the (1 - q)-quantile instead. At q = 0.5 both equal half the absolute error.
    """
    pred = ad.as_tensor(pred)
    n = pred.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    q = np.asarray(levels, dtype=np.float64)[None, :]
    over = ad.relu(pred - truth[:, None])  # prediction above truth
    under = ad.relu(truth[:, None] - pred)
    if as_printed:
        per = over * q + under * (1.0 - q)
    else:
        per = under * q + over * (1.0 - q)
    return ad.sum_(per) * (1.0 / n)


def loss_smooth_prediction(median: Tensor, throughput_sum: np.ndarray, theta: float, k: int) -> Tensor:
    """Batch mean of the ratio median / ((theta/k) * sum of window throughputs), counted only above 1."""
    median = ad.as_tensor(median)
    denom = theta / k * np.asarray(throughput_sum, dtype=np.float64)
    valid = denom > 0
    ratio = median / np.where(valid, denom, 1.0)
    active = (valid & (ratio.data > 1.0)).astype(np.float64)
    return ad.mean(ratio * active)


def loss_smooth_latent(E: Tensor, as_printed: bool = False) -> Tensor:
    """Mean squared second difference of latent rows, averaged over rows 3..k, dims and batch.

    ``as_printed=True`` uses ``e_n - 2 e_{n-1} - e_{n-2}`` instead of the
    second difference ``e_n - 2 e_{n-1} + e_{n-2}``.
    """
    k = E.shape[1]
    if k < 3:
        return ad.Tensor(0.0)
    last_sign = -1.0 if as_printed else 1.0
    d2 = E[:, 2:, :] - E[:, 1:-1, :] * 2.0 + E[:, :-2, :] * last_sign
    return ad.mean(ad.square(d2))


def loss_smooth(median: Tensor, throughput_sum: np.ndarray, E: Tensor, theta: float, k: int,
                as_printed: bool = False) -> Tensor:
    return (loss_smooth_prediction(median, throughput_sum, theta, k) * 0.1
            + loss_smooth_latent(E, as_printed))

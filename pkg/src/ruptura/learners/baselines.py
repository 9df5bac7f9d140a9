"""Reference predictors: no change, training mean, and per-episode autoregressive forecast."""
from __future__ import annotations

import logging
import warnings
from typing import Sequence, Tuple

import numpy as np
from statsmodels.tsa.ar_model import AutoReg

from ruptura.exceptions import EstimationError
from ruptura.rdd_estimator import EpisodeWindow, WindowConfig, fit_segment

logger = logging.getLogger("ruptura.learners.baselines")

DEFAULT_MAX_ORDER = 3


class NoChangeBaseline:
    """Always predicts (0, 0): the event changes nothing."""

    def fit(self, Y: np.ndarray) -> NoChangeBaseline:
        return self

    def predict(self, n: int) -> np.ndarray:
        return np.zeros((n, 2))

    def __repr__(self) -> str:
        return "NoChangeBaseline()"


class MeanBaseline:
    """Predicts the training-set mean target vector for every episode."""

    def __init__(self) -> None:
        self.mean_ = np.zeros(2)

    def fit(self, Y: np.ndarray) -> MeanBaseline:
        self.mean_ = np.asarray(Y, dtype=np.float64).mean(axis=0)
        return self

    def predict(self, n: int) -> np.ndarray:
        return np.tile(self.mean_, (n, 1))

    def __repr__(self) -> str:
        return f"MeanBaseline(mean={self.mean_.tolist()})"


def select_ar_order(y: np.ndarray, max_order: int = DEFAULT_MAX_ORDER) -> int:
    """AR order with the lowest AIC among ``0..max_order``, all fit on the same sample.

    The usable maximum shrinks with the series length so every candidate keeps at least two
    residual degrees of freedom. A flat series gets order 0.
    """
    y = np.asarray(y, dtype=np.float64)
    max_order = max(0, min(max_order, (len(y) - 2) // 2))
    if max_order == 0 or np.ptp(y) == 0.0:
        return 0
    aics = np.full(max_order + 1, np.inf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for p in range(max_order + 1):
            try:
                aic = AutoReg(y, lags=p, trend="c", hold_back=max_order).fit().aic
            except (ValueError, np.linalg.LinAlgError):
                continue
            if np.isfinite(aic):
                aics[p] = aic
    if not np.any(np.isfinite(aics)):
        return 0
    return int(np.argmin(aics))


def ar_forecast(
    y: np.ndarray, steps: int, max_order: int = DEFAULT_MAX_ORDER
) -> Tuple[np.ndarray, int]:
    """Forecast ``steps`` values past the end of ``y`` with an AR(p)-with-drift model."""
    y = np.asarray(y, dtype=np.float64)
    if np.ptp(y) == 0.0:
        return np.full(steps, y[-1]), 0
    order = select_ar_order(y, max_order)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = AutoReg(y, lags=order, trend="c").fit()
        forecast = np.asarray(result.forecast(steps), dtype=np.float64)
    return forecast, order


class ForecastBaseline:
    """Per-episode forecast of the after segment from the before segment alone.

    The before segment is treated as consecutive weeks. Forecasts are produced for every offset
    from the one following the last observed before-offset up to ``T``; those inside the after
    range get a line fit, and the deltas are that line's parameters minus the before fit's.
    """

    def __init__(self, max_order: int = DEFAULT_MAX_ORDER):
        self.max_order = max_order

    def fit(self, Y: np.ndarray) -> ForecastBaseline:
        return self

    def predict_window(self, window: EpisodeWindow, config: WindowConfig) -> Tuple[float, float]:
        before = fit_segment(window.before_t, window.before_y)
        last = int(window.before_t[-1])
        steps = config.half_width - last
        forecast, order = ar_forecast(window.before_y, steps, self.max_order)
        offsets = np.arange(last + 1, config.half_width + 1)
        keep = offsets >= config.after_range[0]
        after = fit_segment(offsets[keep], forecast[keep])
        logger.debug("%s: AR(%d) forecast over %d weeks", window.region_id, order, int(keep.sum()))
        return after.beta0 - before.beta0, after.beta1 - before.beta1

    def predict(self, windows: Sequence[EpisodeWindow], config: WindowConfig) -> np.ndarray:
        if not windows:
            raise EstimationError("The forecasting baseline needs the episode windows")
        return np.array([self.predict_window(w, config) for w in windows], dtype=np.float64)

    def __repr__(self) -> str:
        return f"ForecastBaseline(max_order={self.max_order})"

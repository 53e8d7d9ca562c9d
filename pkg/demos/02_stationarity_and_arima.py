"""
Making residual series stationary, then modelling them
=======================================================

Residual series drift with the scene. An offset log followed by a one-step lag
difference usually flattens them enough for KPSS to accept stationarity; an
ARMA model picked by AIC then gives one-step predictions whose error we score
with the range-normalised RMSE.
"""
import numpy as np

from camtamper.features import extract_residuals
from camtamper.synth import toy_scene
from camtamper.tsa import (adf_test, forecast_insample, kpss_test, log_lag_transform, log_offset,
                           select_order, srmse)

scene = toy_scene(1500, 64, 64, seed=8)
samples = list(extract_residuals(scene))
b1 = np.array([s.values["b1"] for s in samples[1:]])

for name, series in (("raw b1", b1), ("log-lag b1", log_lag_transform(b1).values)):
    a, k = adf_test(series), kpss_test(series)
    print(f"{name:>11}: ADF {a.statistic:8.3f} reject={a.flag!s:5}  KPSS {k.statistic:6.3f} accept={k.flag}")

# order selection on the log series with one difference, as the pipeline does
y, offset = log_offset(b1)
order, fit = select_order(y, p_max=3, q_max=3, d=1)
print("\nselected order", tuple(order), "AIC", round(fit.aic, 2))
print("phi", np.round(fit.phi, 3), "theta", np.round(fit.theta, 3))

x = np.diff(y)
pred = forecast_insample(fit, x, window=1000)
print("sRMSE over the last 1000 steps:", round(srmse(x[-1000:], pred), 4))

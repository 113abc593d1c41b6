"""The prognostics metric suite: thresholds, RULs, scores, lag errors.

Run: python3 demos/05_rul_metrics.py
"""

import numpy as np

from tstransformer.metrics import (
    FaultThresholds,
    accuracy_ft,
    evaluate_forecast,
    percent_error_ft,
    score_rul,
    threshold_crossing,
)

thresholds = FaultThresholds()  # 3.325 V initial, 3.5% .. 5.5% loss
print("threshold voltages:")
for frac, volts in zip(thresholds.loss_fractions, thresholds.voltages):
    print(f"  {100 * frac:.1f}% loss -> {volts:.4f} V")

# RUL is the time from the prediction origin to the first crossing,
# interpolated between samples.
t = np.linspace(500.0, 1000.0, 5001)
true = 3.31 - 4.2e-4 * (t - 500.0)
pred = 3.31 - 4.38e-4 * (t - 500.0)  # slightly too steep: early forecasts
rul_true = threshold_crossing(t, true, thresholds.voltages[0], 500.0)
rul_pred = threshold_crossing(t, pred, thresholds.voltages[0], 500.0)
pe = percent_error_ft(rul_true, rul_pred)
print(f"\n3.5% threshold: true RUL {rul_true:.2f} h, predicted {rul_pred:.2f} h, "
      f"%Er {pe:+.2f}% -> accuracy {accuracy_ft(pe):.4f}")

# The accuracy score is asymmetric: late forecasts (negative %Er) decay
# with a -5% half-life, early ones with +20%.
print("\naccuracy curve:", {p: round(accuracy_ft(p), 3) for p in (-10, -5, 0, 5, 20)})

# Aggregate score over all five thresholds, plus signed lag errors.
report = evaluate_forecast(t, true, pred, thresholds, 500.0)
print(f"\nScore_RUL {report.score_rul:.4f}, RMSE {report.rmse * 1000:.2f} mV")
print("lag errors (h, positive = prediction early):",
      [round(l, 2) for l in report.lag_errors])
print("\nreport CSV:\n" + report.to_csv())

# Feeding published percent errors through the chain reproduces the
# published aggregate score.
published = (-2.706, 0.466, -0.206, -0.269, -0.251)
print("score from published %Er values:",
      round(score_rul([accuracy_ft(p) for p in published]), 4))

"""The evaluation metrics, including the joint D1 rule, on crafted examples."""

import numpy as np

from csstereo.metrics import avg_abs_error, d1_rate, metric_row, outlier_rate
from csstereo.pnm import DisparityMap


def dm(values, valid=None):
    values = np.asarray(values, np.float32).reshape(1, -1)
    v = np.ones(values.shape, bool) if valid is None else np.asarray(valid, bool).reshape(1, -1)
    return DisparityMap(values * v, v)


gt = dm([100.0, 10.0, 40.0, 7.0])
pred = dm([104.0, 14.0, 40.0, 7.0])

print("gt  :", gt.values[0])
print("pred:", pred.values[0])
print(f"avg abs error: {avg_abs_error(pred, gt):.2f} px")
print(f">3px outliers (plain rule): {outlier_rate(pred, gt, 3):.0f}%")
print(f"D1 (joint: >3px AND >5% of gt): {d1_rate(pred, gt):.0f}%")
print()
print("the 4px error at gt=100 fails the 5% condition (4 < 5), so it is not a")
print("D1 outlier; the same 4px error at gt=10 easily clears 5% (4 > 0.5)")
print()

# strictness at thresholds: a pixel exactly at the threshold is an inlier
gt2 = dm([0.0])
pred2 = dm([3.0])
print(f"error exactly 3.0 px against threshold 3: {outlier_rate(pred2, gt2, 3):.0f}% outliers")

# a full per-image row, as written to the eval CSV
row = metric_row("example", pred, gt)
print("\nCSV row:", row.csv())

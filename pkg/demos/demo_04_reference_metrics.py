"""
Metrics from reference confusion counts
=======================================

A 2x2 confusion matrix of 1368/50 and 49/1422 reproduces a classification
report of 0.97 accuracy with per-class scores of 0.96-0.97. The counts alone
do not fix which class owns the 1,418-sample row, so both readings are shown;
they differ only in which class is credited with the 0.96 recall.
"""
from fractions import Fraction

from bigru_eeg.evaluation import ConfusionMatrix, format_table, metrics

readings = {
    "truth row has 1418 samples": ((1368, 50), (49, 1422)),
    "lie row has 1418 samples": ((1422, 49), (50, 1368)),
}
for title, counts in readings.items():
    print(title)
    print(format_table(metrics(ConfusionMatrix(counts))))

# the exact fractions behind the rounded table
tp, fn, fp = 1368, 50, 49
print("precision", Fraction(tp, tp + fp), "recall", Fraction(tp, tp + fn),
      "accuracy", Fraction(1368 + 1422, 2889))

# Ranking and threshold metrics
#
# AUC uses midranks, so tied scores count half. F1-macro averages the fraud
# and benign F1 at threshold 0.5. AP is the step-wise area under the
# precision-recall curve.

import numpy as np

from catgnn.metrics import average_precision, evaluate, f1_macro, roc_auc

labels = np.array([0, 0, 1, 1, 0, 1])
scores = np.array([0.1, 0.4, 0.35, 0.8, 0.4, 0.9])

print("auc", roc_auc(scores, labels))
print("f1 macro", f1_macro(scores, labels))
print("ap", average_precision(scores, labels))

# Ties: all scores equal gives AUC exactly 0.5.
print("constant scores auc", roc_auc(np.full(6, 0.3), labels))
print(evaluate(scores, labels).to_dict())

# coding: utf-8

# # The two margins
#
# alpha scales the ground-truth distance by (1 + alpha) during training.
# gamma adds ln(1 + gamma) / 2 to it. Both are switched off at test time.

import math

import numpy as np

from iculoss.head import ClassGaussians, MarginConfig, decision_distance, icu_loss_forward
from iculoss.head import margin_boundary_check

g = ClassGaussians([[0.0], [3.0]], np.log([[1.0], [1.5]]))
x = np.array([1.4])

# In[1]: gamma is a constant shift

for gamma in (0.0, 1e-3, 0.5):
    print(gamma, decision_distance(x, 0, g, gamma) - decision_distance(x, 0, g), 0.5 * math.log1p(gamma))

# In[2]: the intra-class boundary
#
# With equal Mahalanobis terms and alpha = 0 the label wins only when the
# other class is wider by more than gamma times its own variance.

for s_other in (1.0, 1.4, 1.6, 2.0):
    print("sigma2_other", s_other, "gamma 0.5 ->", margin_boundary_check(1.0, s_other, 0.5))

# In[3]: margins make the training loss stricter

xb = np.array([[0.2], [2.7], [1.1]])
labels = np.array([0, 1, 0])
for cfg in (MarginConfig(0, 0, 0, 0), MarginConfig(0.1, 0, 0, 0), MarginConfig(0, 0.5, 0, 0)):
    print(cfg, icu_loss_forward(xb, labels, g, cfg).total)

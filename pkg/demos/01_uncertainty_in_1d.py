# coding: utf-8

# # Why the variance belongs in the decision rule
#
# Two 1-D classes: a narrow one at 0 (variance 0.25) and a wide one at 4
# (variance 4). A point at 1.4 is 2.8 standard deviations from the narrow
# class but only 1.3 from the wide one.

import numpy as np

from iculoss.baselines import LgmParams, lgm_distances, lgm_predict
from iculoss.head import ClassGaussians, decision_distances, predict
from iculoss.oracle import TrueGmm, bayes_predict
from iculoss.rng import Rng

truth = TrueGmm.equal_priors([[0.0], [4.0]], [[0.25], [4.0]])
params = ClassGaussians(truth.means, np.log(truth.vars))

# In[1]: distances with and without the log-determinant

for x in (0.9, 1.4):
    print(x, "ICU", decision_distances([[x]], params)[0], "->", predict(np.array([x]), params))
    lgm = LgmParams(truth.means, np.log(truth.vars))
    print(x, "L-GM", lgm_distances([[x]], lgm)[0], "->", lgm_predict(np.array([x]), lgm))

# At 0.9 the two rules disagree. The ICU rule keeps ln(sigma^2) and sides
# with class 0, which is also what the Bayes rule says.

print("Bayes at 0.9:", bayes_predict(np.array([0.9]), truth))

# In[2]: accuracy on a large sample

x, y = truth.sample(100000, Rng(0))
print("Bayes / ICU rule:", np.mean(predict(x, params) == y))
print("L-GM rule:       ", np.mean(lgm_predict(x, LgmParams(truth.means, np.log(truth.vars))) == y))

# In[3]: learning the same thing from data
#
# A single linear layer (1 -> 1) plus the ICU head, trained for 300 epochs
# on 1000 points per class.

from iculoss.config import resolve
from iculoss.experiment import load_datasets, run_training

cfg = resolve({"loss": "icu", "network": {"hidden": [], "embed_dim": 1},
               "training": {"epochs": 300}, "data": {"kind": "preset", "name": "fig1"}})
train, test = load_datasets(cfg["data"])
mlp, head, records = run_training(cfg, train, test)
print("trained ICU test accuracy:", records[-1].test_accuracy)
print("Bayes on the same test split:", np.mean(bayes_predict(test.features, truth) == test.labels))

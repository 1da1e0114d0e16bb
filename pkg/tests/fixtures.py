"""Hand-checked instances shared by unit and acceptance tests."""

import numpy as np

# rows are classifiers, columns are 10 cases; 1 = correct
CORRELATED = np.array([
    [1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
    [1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
    [1, 0, 1, 1, 1, 1, 1, 1, 0, 0],
])
DIVERSE = np.array([
    [1, 1, 1, 1, 1, 1, 1, 1, 0, 0],
    [0, 1, 1, 1, 0, 1, 1, 1, 0, 1],
    [1, 0, 0, 0, 1, 0, 1, 1, 1, 1],
])

# 1-D instance no stump separates; traced by hand in exact arithmetic
SAMME_X = [1, 2, 3, 4]
SAMME_Y = [0, 1, 1, 0]
SAMME_ERRORS = ("1/4", "1/6", "1/5")
SAMME_PREDICTIONS = [0, 1, 1, 0]

SEPARABLE_X = [-2.0, -1.0, 1.0, 2.0]
SEPARABLE_Y = [0, 0, 1, 1]

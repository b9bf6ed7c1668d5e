"""Two-sample tests and interval estimates for planner comparisons."""

import warnings

import numpy as np
from scipy import stats


def significance_test(a, b):
    """Two-sided Welch t-test p-value.

    When both samples have zero variance the t statistic is undefined; the
    p-value is then 1 for equal means and 0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    if np.var(a) == 0.0 and np.var(b) == 0.0:
        return 1.0 if a[0] == b[0] else 0.0
    with warnings.catch_warnings():
        # near-constant samples trigger a precision warning; the p-value is still usable
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def mean_ci(x, level=0.95):
    """Mean and Student-t confidence interval ``(mean, lo, hi)``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    m = float(x.mean())
    if len(x) < 2:
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, len(x) - 1) * stats.sem(x)) if x.std() > 0 else 0.0
    return m, m - half, m + half


def censored_views(counts, n):
    """Views-to-threshold with cycles that never reached it set to ``n + 1``."""
    return np.array([n + 1 if c is None else c for c in counts], dtype=np.float64)

"""Null distributions and one-sided significance tests.

Three nulls cover the evaluation: the exact Binomial(n, 1/2)/n chance
distribution for accuracies, a Monte-Carlo null for correlations built by
correlating uniform random vectors with the truth, and a bootstrap over
per-rater scores for the human baseline. The one-sided test treats the
observed model score as a constant and asks how often the null reaches it.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps

from attrivis.errors import ConfigError, InsufficientRaters, UndefinedCorrelation
from attrivis.seeding import derive_seed

_CHUNK = 5000  # rows of uniform samples to correlate at a time


@dataclass
class NullSummary:
    kind: str  # BernoulliAccuracy | UniformCorrelation | BootstrapHuman
    critical_value_95: float
    n: int
    samples: Optional[np.ndarray] = None  # empirical nulls only
    params: Optional[dict] = None  # analytic nulls only
    attainable: bool = True


def bernoulli_accuracy_null(n: int) -> NullSummary:
    """Chance accuracy over n fair coin flips, evaluated exactly.

    The critical value is the smallest attainable accuracy a with
    P(mean >= a) <= 0.05 under Binomial(n, 1/2)/n. For very small n no
    accuracy clears the 5% tail (even n successes out of n happens too
    often); that is reported with attainable=False and an infinite
    critical value.
    """
    if n < 1:
        raise ConfigError("need n >= 1 observations")
    # smallest k with P(X >= k) <= 0.05
    tail = sps.binom.sf(np.arange(n + 1) - 1, n, 0.5)
    ok = np.flatnonzero(tail <= 0.05)
    if len(ok) == 0:
        return NullSummary(kind="BernoulliAccuracy", critical_value_95=math.inf,
                           n=n, params={"n": n, "p": 0.5}, attainable=False)
    return NullSummary(kind="BernoulliAccuracy",
                       critical_value_95=float(ok[0] / n),
                       n=n, params={"n": n, "p": 0.5})


def uniform_correlation_null(truth, n_samples: int = 100000,
                             seed: int = 0) -> NullSummary:
    """Correlations of independent uniform vectors against the truth."""
    t = np.asarray(truth, dtype=np.float64)
    if t.ndim != 1 or t.shape[0] < 3:
        raise ConfigError("truth must be a vector of length >= 3")
    if n_samples < 1:
        raise ConfigError("need at least one sample")
    tc = t - t.mean()
    tss = np.sqrt((tc * tc).sum())
    if tss == 0:
        raise UndefinedCorrelation("constant truth has no correlation null")
    rng = np.random.default_rng(derive_seed(seed, "uniform_null"))
    out = np.empty(n_samples)
    done = 0
    while done < n_samples:
        m = min(_CHUNK, n_samples - done)
        u = rng.uniform(size=(m, t.shape[0]))
        uc = u - u.mean(axis=1, keepdims=True)
        denom = np.sqrt((uc * uc).sum(axis=1)) * tss
        out[done : done + m] = (uc @ tc) / denom
        done += m
    return NullSummary(kind="UniformCorrelation",
                       critical_value_95=float(np.quantile(out, 0.95)),
                       n=t.shape[0], samples=out)


def bootstrap_human(per_rater_scores, n_samples: int = 100000,
                    seed: int = 0) -> NullSummary:
    """Bootstrap distribution of the mean per-rater score.

    Scores are sorted before resampling so any permutation of the input
    produces the identical distribution for a fixed seed.
    """
    s = np.sort(np.asarray(per_rater_scores, dtype=np.float64))
    if s.ndim != 1 or s.shape[0] < 1:
        raise InsufficientRaters("need at least one per-rater score")
    if n_samples < 1:
        raise ConfigError("need at least one sample")
    rng = np.random.default_rng(derive_seed(seed, "bootstrap"))
    idx = rng.integers(0, s.shape[0], size=(n_samples, s.shape[0]))
    means = s[idx].mean(axis=1)
    return NullSummary(kind="BootstrapHuman",
                       critical_value_95=float(np.quantile(means, 0.95)),
                       n=s.shape[0], samples=means)


def one_sided_test(observed: float, null: NullSummary, alpha: float = 0.05):
    """P(null >= observed), and whether that beats alpha.

    Empirical nulls use the plug-in tail count floored at 1/n_samples;
    the Bernoulli null is evaluated from the exact binomial tail.
    """
    if null.kind == "BernoulliAccuracy":
        n = null.params["n"]
        if observed <= 0:
            p = 1.0
        elif observed > 1:
            p = 0.0
        else:
            # smallest success count reaching the observed accuracy
            k = math.ceil(observed * n - 1e-9)
            p = float(sps.binom.sf(k - 1, n, 0.5))
    elif null.samples is not None:
        hits = int(np.count_nonzero(null.samples >= observed))
        p = max(hits, 1) / null.samples.shape[0]
    else:
        raise ConfigError(f"null summary of kind {null.kind!r} has no samples")
    return p, bool(p < alpha)

"""One-way ANOVA over cluster classes, OLS regression models, and the F / t
distribution functions behind their p-values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DataError, DegenerateError, RankDeficientError

__all__ = [
    "betainc",
    "f_cdf",
    "f_sf",
    "t_cdf",
    "t_sf",
    "stars",
    "GroupSummary",
    "AnovaResult",
    "one_way_anova",
    "DesignMatrix",
    "RegressionResult",
    "MODEL_ROLES",
    "DEFAULT_COLUMNS",
    "model_matrix",
    "ols",
    "Quartiles",
    "ClusterAnova",
    "anova_over_clusters",
]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 20000


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _betainc(a, b, x, y):
    # x + y == 1 is supplied by the caller so the complement keeps full precision
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc needs 0 <= x <= 1")
    return _betainc(a, b, x, 1.0 - x)


def _check_df(*dfs):
    for d in dfs:
        if not (d >= 1) or math.isinf(d):
            raise ValueError(f"invalid degrees of freedom {d!r}; need a finite value >= 1")


def f_cdf(x, d1, d2):
    """CDF of the F distribution with ``(d1, d2)`` degrees of freedom."""
    _check_df(d1, d2)
    if math.isnan(x):
        raise ValueError("x is NaN")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    den = d1 * x + d2
    return _betainc(d1 / 2.0, d2 / 2.0, d1 * x / den, d2 / den)


def f_sf(x, d1, d2):
    """Upper tail ``1 - f_cdf``, evaluated without cancellation."""
    _check_df(d1, d2)
    if math.isnan(x):
        raise ValueError("x is NaN")
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    den = d1 * x + d2
    return _betainc(d2 / 2.0, d1 / 2.0, d2 / den, d1 * x / den)


def t_sf(t, df):
    """Upper tail P(T > t) of Student's t."""
    _check_df(df)
    if math.isnan(t):
        raise ValueError("t is NaN")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    den = df + t * t
    tail = 0.5 * _betainc(df / 2.0, 0.5, df / den, t * t / den)
    return tail if t > 0 else 1.0 - tail


def t_cdf(t, df):
    """CDF of Student's t with ``df`` degrees of freedom."""
    _check_df(df)
    if math.isnan(t):
        raise ValueError("t is NaN")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    den = df + t * t
    tail = 0.5 * _betainc(df / 2.0, 0.5, df / den, t * t / den)
    return 1.0 - tail if t > 0 else tail


def stars(p):
    """Significance marks: ``***`` p < 0.001, ``**`` p < 0.01, ``*`` p < 0.05."""
    if p is None or math.isnan(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class GroupSummary:
    label: str
    n: int
    mean: float
    variance: float  # unbiased; 0 for singletons


@dataclass(frozen=True)
class AnovaResult:
    F: float  # math.inf when within-group variance is zero and means differ
    df_between: int
    df_within: int
    p: float
    groups: tuple
    pooled_variance: float
    ss_between: float
    ss_within: float

    @property
    def infinite(self):
        return math.isinf(self.F)

    @property
    def stars(self):
        return stars(self.p)


def one_way_anova(groups):
    """One-way ANOVA F test for equality of group means.

    Parameters
    ----------
    groups : mapping of label -> values, or sequence of value lists
    """
    if not hasattr(groups, "items"):
        groups = {str(k): g for k, g in enumerate(groups)}
    arrays = {}
    for label, vals in groups.items():
        arr = np.asarray(vals, dtype=float)
        if arr.size == 0:
            raise DataError(f"ANOVA group {label!r} is empty")
        if np.isnan(arr).any():
            raise DataError(f"ANOVA group {label!r} has missing values")
        arrays[str(label)] = arr
    k = len(arrays)
    if k < 2:
        raise DataError("ANOVA needs at least two groups")
    N = sum(a.size for a in arrays.values())
    dfb, dfw = k - 1, N - k
    if dfw <= 0:
        raise DataError("ANOVA has no within-group degrees of freedom (all groups singleton)")

    means = {lab: float(a.mean()) for lab, a in arrays.items()}
    grand = math.fsum(float(a.sum()) for a in arrays.values()) / N
    if len(set(means.values())) == 1:
        ssb = 0.0
    else:
        ssb = math.fsum(a.size * (means[lab] - grand) ** 2 for lab, a in arrays.items())
    ssw = math.fsum(float(((a - means[lab]) ** 2).sum()) for lab, a in arrays.items())

    if ssb == 0.0:
        F, p = 0.0, 1.0
    elif ssw == 0.0:
        F, p = math.inf, 0.0
    else:
        F = (ssb / dfb) / (ssw / dfw)
        p = f_sf(F, dfb, dfw)
    summaries = tuple(
        GroupSummary(lab, int(a.size), means[lab], float(a.var(ddof=1)) if a.size > 1 else 0.0)
        for lab, a in arrays.items()
    )
    return AnovaResult(F, dfb, dfw, p, summaries, ssw / dfw, ssb, ssw)


# regression ------------------------------------------------------------------

MODEL_ROLES = {
    1: ("population",),
    2: ("population", "damage"),
    3: ("poverty", "noedu", "single_parent", "minority"),
    4: ("population", "damage", "poverty", "noedu", "single_parent", "minority"),
}

DEFAULT_COLUMNS = {
    "population": "Population",
    "damage": "FEMA damage",
    "poverty": "Poverty%",
    "noedu": "NOEDU%",
    "single_parent": "Single parent household%",
    "minority": "Minority%",
}

_ALIASES = {"noedu": ("NOHSDP%",)}


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray  # first column is the intercept
    names: tuple  # ("const", predictor names...)
    model_id: int | None = None
    ids: tuple = ()


def model_matrix(table, model_id, columns=None, ids=None):
    """Design matrix (intercept + predictors) for regression model 1-4.

    ``columns`` maps roles (population, damage, poverty, noedu,
    single_parent, minority) to column names in ``table``.
    """
    if model_id not in MODEL_ROLES:
        raise ValueError(f"unknown model {model_id!r}; expected 1-4")
    cols = dict(DEFAULT_COLUMNS)
    cols.update(columns or {})
    names, missing = [], []
    for role in MODEL_ROLES[model_id]:
        name = cols[role]
        if name not in table:
            alt = next((a for a in _ALIASES.get(role, ()) if a in table), None)
            if alt is None:
                missing.append(name)
                continue
            name = alt
        names.append(name)
    if missing:
        raise DataError(f"model {model_id} is missing column(s): {missing}")
    vals = [table.require(nm, ids) for nm in names]
    n = vals[0].size
    X = np.column_stack([np.ones(n)] + vals)
    return DesignMatrix(X, ("const", *names), model_id, tuple(ids if ids is not None else table.ids))


@dataclass(frozen=True)
class RegressionResult:
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    adj_r2: float
    residuals: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    N: int = 0
    model_id: int | None = None

    @property
    def intercept(self):
        return float(self.coef[0])

    @property
    def k(self):
        return len(self.names) - 1

    def coefficients(self):
        """Predictor name -> (coef, se, t, p), intercept under ``const``."""
        return {nm: (float(b), float(s), float(t), float(p)) for nm, b, s, t, p in zip(self.names, self.coef, self.se, self.t, self.p)}


def _collinear_columns(X, names, tol):
    kept, bad = [], []
    for j in range(X.shape[1]):
        trial = X[:, kept + [j]]
        if np.linalg.matrix_rank(trial, tol=tol) < len(kept) + 1:
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def ols(y, design, model_id=None, names=None):
    """Ordinary least squares via Householder QR.

    ``design`` is a :class:`DesignMatrix` or a 2-D array whose first column
    is the intercept. Standard errors come from ``s^2 (X'X)^-1``; p-values
    are two-sided Student-t with ``N - k - 1`` degrees of freedom.
    """
    if isinstance(design, DesignMatrix):
        X = np.asarray(design.X, dtype=float)
        names = design.names
        model_id = design.model_id if model_id is None else model_id
    else:
        X = np.asarray(design, dtype=float)
        names = tuple(names) if names is not None else ("const",) + tuple(f"x{j}" for j in range(1, X.shape[1]))
    y = np.asarray(y, dtype=float)
    if np.isnan(y).any() or np.isnan(X).any():
        raise DataError("regression inputs contain missing values")
    N, p_cols = X.shape
    if y.shape != (N,):
        raise DataError("response length does not match design rows")
    if N <= p_cols:
        raise DataError(f"N={N} too small for {p_cols - 1} predictors plus intercept")

    sv = np.linalg.svd(X, compute_uv=False)
    tol = sv.max() * max(X.shape) * np.finfo(float).eps
    if (sv <= tol).any():
        bad = _collinear_columns(X, names, tol)
        raise RankDeficientError(f"design matrix is rank deficient; collinear column(s): {bad}", bad)

    Q, R = np.linalg.qr(X)
    beta = solve_triangular(R, Q.T @ y)
    fitted = X @ beta
    resid = y - fitted
    df = N - p_cols
    sse = float(resid @ resid)
    ybar = y.mean()
    sst = float(((y - ybar) ** 2).sum())
    r2 = 0.0 if sst == 0 else min(max(1.0 - sse / sst, 0.0), 1.0)
    adj = 1.0 - (1.0 - r2) * (N - 1) / df

    scale = np.linalg.norm(y) + np.finfo(float).tiny
    exact = math.sqrt(sse) <= 64 * np.finfo(float).eps * scale * math.sqrt(N)
    sigma2 = 0.0 if exact else sse / df
    Rinv = solve_triangular(R, np.eye(p_cols))
    se = np.sqrt(sigma2 * (Rinv**2).sum(axis=1))
    # exact fits: coefficients indistinguishable from zero get t = 0
    col_norm = np.linalg.norm(X, axis=0)
    negligible = np.abs(beta) * col_norm <= 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.sign(beta) * np.inf)
    t = np.where((se == 0) & negligible, 0.0, t)
    pvals = np.array([2.0 * t_sf(abs(tv), df) for tv in t])
    return RegressionResult(
        names=tuple(names), coef=beta, se=se, t=t, p=np.minimum(pvals, 1.0), r2=r2, adj_r2=adj,
        residuals=resid, fitted=fitted, N=N, model_id=model_id,
    )


# cluster-wise ANOVA ------------------------------------------------------------

_QUADRANTS = ("HH", "LL", "HL", "LH")


@dataclass(frozen=True)
class Quartiles:
    trait: str
    cluster: str
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


@dataclass(frozen=True)
class ClusterAnova:
    results: dict  # trait -> AnovaResult
    quartiles: tuple  # Quartiles rows, trait-major then cluster order
    clusters: tuple  # populated cluster codes used as groups

    def ranking(self):
        """Traits ordered by decreasing F."""
        return sorted(self.results, key=lambda t: -self.results[t].F)


def _quadrant_labels(result):
    if hasattr(result, "quadrants"):
        return [q.value for q in result.quadrants]
    return [c.value for c in result.clusters]


def anova_over_clusters(result, traits, trait_names=None, ids=None):
    """ANOVA of each demographic trait across the significant cluster classes.

    Only significant members of HH / LL / HL / LH enter the groups;
    non-significant regions and islands are excluded.

    Parameters
    ----------
    result : BivariateResult or LisaResult
    traits : AttributeTable
        Demographic columns; rows taken in ``ids`` order (default table order).
    """
    labels = _quadrant_labels(result)
    trait_names = list(trait_names) if trait_names is not None else traits.names
    if ids is None:
        ids = traits.ids
    if len(ids) != len(labels):
        raise DataError("cluster labels and trait rows are not index-aligned")
    members = {q: [k for k, lab in enumerate(labels) if lab == q] for q in _QUADRANTS}
    populated = tuple(q for q in _QUADRANTS if members[q])
    if len(populated) < 2:
        raise DataError(f"need at least two populated clusters for ANOVA, found {list(populated)}")

    results, quarts = {}, []
    for trait in trait_names:
        vals = traits.require(trait, ids)
        groups = {q: vals[members[q]] for q in populated}
        results[trait] = one_way_anova(groups)
        for q in populated:
            g = groups[q]
            q1, med, q3 = np.percentile(g, [25, 50, 75])
            quarts.append(Quartiles(trait, q, int(g.size), float(g.min()), float(q1), float(med), float(q3), float(g.max())))
    return ClusterAnova(results, tuple(quarts), populated)

"""Fixed-effects OLS with one- and two-way cluster-robust inference.

Fixed effects are absorbed by within-demeaning: exact for one grouping,
alternating projections for two. Coefficients come from a pivoted QR of
the demeaned design. Cluster-robust variances are CR1; two-way variances
combine the one-way pieces as V_A + V_B - V_AB. Reference distributions
use G_min - 1 degrees of freedom, G_min being the smallest cluster count.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from .errors import (
    ClusterError,
    ConvergenceError,
    EmptySampleError,
    RankDeficiencyError,
    SingularCovarianceError,
)

logger = logging.getLogger(__name__)

DEMEAN_TOL = 1e-10
MAX_SWEEPS = 10_000
# demeaned column norm below this share of its raw norm = absorbed by the FE
_ABSORBED = 1e-8
_RANK_TOL = 1e-10


@dataclass
class RegressionSpec:
    outcome: str
    treatments: list[str]
    covariates: list[str] = field(default_factory=list)
    fixed_effects: list[str] = field(default_factory=list)
    clusters: list[str] = field(default_factory=list)
    spec_id: str = ""

    @property
    def regressors(self) -> list[str]:
        return list(self.treatments) + list(self.covariates)

    @property
    def columns(self) -> list[str]:
        return list(dict.fromkeys(
            [self.outcome, *self.regressors, *self.fixed_effects, *self.clusters]))


@dataclass
class EffectEstimate:
    term: str
    spec_id: str
    coef: float
    se: float
    t: float
    p: float
    df: int
    n_obs: int
    n_clusters: tuple[int, ...]
    mean_control_outcome: float | None = None

    @property
    def stars(self) -> str:
        if self.p < 0.01:
            return "***"
        if self.p < 0.05:
            return "**"
        if self.p < 0.10:
            return "*"
        return ""


@dataclass
class FEFit:
    names: list[str]
    coef: np.ndarray
    resid: np.ndarray
    X: np.ndarray            # demeaned design
    n_obs: int
    n_absorbed: int          # FE levels absorbed (for classical dof)
    data: pd.DataFrame       # rows used after listwise deletion


@dataclass
class WaldResult:
    F: float
    p: float
    q: int
    df: int


@dataclass
class RegressionResult:
    spec: RegressionSpec
    fit: FEFit
    vcov: np.ndarray
    df: int
    n_clusters: tuple[int, ...]

    def estimate(self, term: str, mean_control_outcome: float | None = None) -> EffectEstimate:
        k = self.fit.names.index(term)
        coef = float(self.fit.coef[k])
        se = float(np.sqrt(max(self.vcov[k, k], 0.0)))
        t = coef / se if se > 0 else float("nan")
        p = float(2 * stats.t.sf(abs(t), self.df)) if se > 0 else float("nan")
        return EffectEstimate(
            term=term, spec_id=self.spec.spec_id, coef=coef, se=se, t=t, p=p,
            df=self.df, n_obs=self.fit.n_obs, n_clusters=self.n_clusters,
            mean_control_outcome=mean_control_outcome,
        )

    def wald(self, terms: Sequence[str]) -> WaldResult:
        idx = [self.fit.names.index(t) for t in terms]
        return joint_wald(self.fit.coef, self.vcov, idx, self.df)


def _codes(values: pd.Series) -> tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(values, sort=True)
    return codes.astype(np.int64), len(uniques)


def _group_means(M: np.ndarray, codes: np.ndarray, n_groups: int, sizes: np.ndarray) -> np.ndarray:
    sums = np.empty((n_groups, M.shape[1]))
    for j in range(M.shape[1]):
        sums[:, j] = np.bincount(codes, weights=M[:, j], minlength=n_groups)
    return sums / sizes[:, None]


def demean(M: np.ndarray, groups: Sequence[np.ndarray], tol: float = DEMEAN_TOL,
           max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Project out one or two sets of group dummies from the columns of M."""
    M = np.array(M, dtype=np.float64, copy=True)
    if M.ndim == 1:
        M = M[:, None]
    if not groups:
        return M
    prepared = []
    for codes in groups:
        n_groups = int(codes.max()) + 1
        sizes = np.bincount(codes, minlength=n_groups).astype(np.float64)
        prepared.append((codes, n_groups, sizes))

    if len(prepared) == 1:
        codes, n_groups, sizes = prepared[0]
        return M - _group_means(M, codes, n_groups, sizes)[codes]

    for sweep in range(max_sweeps):
        for codes, n_groups, sizes in prepared:
            M -= _group_means(M, codes, n_groups, sizes)[codes]
        worst = max(
            float(np.abs(_group_means(M, codes, n_groups, sizes)).max())
            for codes, n_groups, sizes in prepared
        )
        if worst < tol:
            logger.debug("demeaning converged after %d sweeps", sweep + 1)
            return M
    raise ConvergenceError(f"alternating projections did not converge in {max_sweeps} sweeps")


def listwise(data: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Rows complete on every listed column."""
    missing = [c for c in columns if c not in data.columns]
    if missing:
        raise KeyError(f"columns not in data: {missing}")
    return data.loc[data[list(columns)].notna().all(axis=1), list(columns)]


def ols_fe(data: pd.DataFrame, spec: RegressionSpec) -> FEFit:
    """OLS of outcome on regressors with the spec's fixed effects absorbed."""
    used = listwise(data, spec.columns)
    if used.empty:
        raise EmptySampleError(f"no complete rows for {spec.spec_id or spec.outcome}")
    names = spec.regressors
    y = used[spec.outcome].to_numpy(dtype=np.float64)
    X = used[names].to_numpy(dtype=np.float64).reshape(len(used), len(names))

    groups, n_absorbed = [], 0
    for fe in spec.fixed_effects:
        codes, n = _codes(used[fe])
        groups.append(codes)
        n_absorbed += n
    if len(groups) == 2:
        n_absorbed -= 1
    elif not groups:
        # no FE: an intercept is still partialled out
        groups = [np.zeros(len(used), dtype=np.int64)]
        n_absorbed = 1

    Z = demean(np.column_stack([y, X]), groups)
    yd, Xd = Z[:, 0], Z[:, 1:]

    raw_norm = np.linalg.norm(X - X.mean(axis=0), axis=0)
    raw_norm = np.where(raw_norm > 0, raw_norm, np.linalg.norm(X, axis=0))
    dem_norm = np.linalg.norm(Xd, axis=0)
    absorbed = [n for n, r, d in zip(names, raw_norm, dem_norm) if r == 0 or d < _ABSORBED * r]
    if absorbed:
        raise RankDeficiencyError(absorbed)

    scaled = Xd / dem_norm
    Q, R, piv = scipy.linalg.qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > _RANK_TOL * diag[0]).sum()) if len(diag) else 0
    if rank < len(names):
        raise RankDeficiencyError([names[j] for j in piv[rank:]])

    beta_scaled = np.empty(len(names))
    beta_scaled[piv] = scipy.linalg.solve_triangular(R, Q.T @ yd)
    coef = beta_scaled / dem_norm
    resid = yd - Xd @ coef
    return FEFit(names=names, coef=coef, resid=resid, X=Xd, n_obs=len(used),
                 n_absorbed=n_absorbed, data=used)


def _bread(X: np.ndarray) -> np.ndarray:
    return np.linalg.inv(X.T @ X)


def _cr1_piece(X: np.ndarray, resid: np.ndarray, codes: np.ndarray, bread: np.ndarray) -> tuple[np.ndarray, int]:
    n, k = X.shape
    n_groups = int(codes.max()) + 1
    scores = np.zeros((n_groups, k))
    np.add.at(scores, codes, X * resid[:, None])
    meat = scores.T @ scores
    c = n_groups / (n_groups - 1) * (n - 1) / (n - k) if n_groups > 1 else float("nan")
    return c * bread @ meat @ bread, n_groups


def cluster_vcov(resid: np.ndarray, X: np.ndarray, clusters: Sequence[np.ndarray],
                 repair: bool = True) -> np.ndarray:
    """CR1 one-way, or two-way V_A + V_B - V_AB, cluster-robust covariance.

    `clusters` holds one or two integer code arrays. A negative eigenvalue
    in the two-way result is floored at zero (with a warning) when `repair`.
    """
    X = np.asarray(X, dtype=np.float64)
    resid = np.asarray(resid, dtype=np.float64)
    if not 1 <= len(clusters) <= 2:
        raise ValueError("one or two cluster dimensions")
    coded = []
    for c in clusters:
        codes, g = _codes(pd.Series(np.asarray(c)))
        if g < 2:
            raise ClusterError("a cluster dimension has fewer than 2 clusters")
        coded.append(codes)
    bread = _bread(X)
    V_a, _ = _cr1_piece(X, resid, coded[0], bread)
    if len(coded) == 1:
        return V_a
    V_b, _ = _cr1_piece(X, resid, coded[1], bread)
    inter, g_ab = _codes(pd.Series(coded[0] * (int(coded[1].max()) + 1) + coded[1]))
    if g_ab < 2:
        raise ClusterError("intersection of cluster dimensions has fewer than 2 clusters")
    V_ab, _ = _cr1_piece(X, resid, inter, bread)
    V = V_a + V_b - V_ab
    if repair:
        V = _psd_repair(V)
    return V


def _psd_repair(V: np.ndarray) -> np.ndarray:
    V = (V + V.T) / 2
    vals, vecs = np.linalg.eigh(V)
    # rounding-level negatives are left alone
    if vals.min() < -1e-12 * max(float(np.abs(vals).max()), 1e-300):
        logger.warning("two-way cluster vcov has negative eigenvalue %.3g; flooring at 0", vals.min())
        V = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return V


def classical_vcov(resid: np.ndarray, X: np.ndarray, df_resid: int) -> np.ndarray:
    """Homoskedastic OLS covariance s²(X'X)⁻¹."""
    if df_resid <= 0:
        raise EmptySampleError("no residual degrees of freedom")
    s2 = float(resid @ resid) / df_resid
    return s2 * _bread(np.asarray(X, dtype=np.float64))


def joint_wald(coefs: np.ndarray, vcov: np.ndarray, subset: Sequence[int], df: int) -> WaldResult:
    """F = b'V⁻¹b / q on the subset, referred to F(q, df)."""
    idx = list(subset)
    if not idx:
        raise ValueError("empty subset for joint test")
    b = np.asarray(coefs, dtype=np.float64)[idx]
    V = np.asarray(vcov, dtype=np.float64)[np.ix_(idx, idx)]
    if np.linalg.matrix_rank(V) < len(idx):
        raise SingularCovarianceError("covariance of tested coefficients is singular")
    try:
        W = float(b @ scipy.linalg.solve(V, b, assume_a="sym"))
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SingularCovarianceError(str(e)) from e
    q = len(idx)
    F = max(W, 0.0) / q
    return WaldResult(F=F, p=float(stats.f.sf(F, q, df)), q=q, df=df)


def fit(data: pd.DataFrame, spec: RegressionSpec, cluster_robust: bool = True) -> RegressionResult:
    """ols_fe plus the spec's clustered (or classical) covariance."""
    fe_fit = ols_fe(data, spec)
    if cluster_robust and spec.clusters:
        codes = [_codes(fe_fit.data[c])[0] for c in spec.clusters]
        counts = tuple(int(c.max()) + 1 for c in codes)
        vcov = cluster_vcov(fe_fit.resid, fe_fit.X, codes)
        df = min(counts) - 1
    else:
        df = fe_fit.n_obs - len(fe_fit.names) - fe_fit.n_absorbed
        vcov = classical_vcov(fe_fit.resid, fe_fit.X, df)
        counts = tuple(int(_codes(fe_fit.data[c])[1]) for c in spec.clusters)
    return RegressionResult(spec=spec, fit=fe_fit, vcov=vcov, df=df, n_clusters=counts)


@dataclass
class BalanceResult:
    estimates: list[EffectEstimate]
    joint_f: float
    joint_p: float
    n_obs: int


def balance_test(sample: pd.DataFrame, covariates: Sequence[str], treatment: str = "treated",
                 jail: str = "facility_id", cluster_robust: bool = True,
                 spec_id: str = "balance") -> BalanceResult:
    """Treatment indicator on all covariates jointly, jail FE, jail clusters."""
    spec = RegressionSpec(
        outcome=treatment, treatments=[], covariates=list(covariates),
        fixed_effects=[jail], clusters=[jail], spec_id=spec_id,
    )
    result = fit(sample, spec, cluster_robust=cluster_robust)
    wald = result.wald(list(covariates))
    return BalanceResult(
        estimates=[result.estimate(c) for c in covariates],
        joint_f=wald.F, joint_p=wald.p, n_obs=result.fit.n_obs,
    )

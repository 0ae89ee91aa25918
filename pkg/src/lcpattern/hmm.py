"""Gaussian-emission HMM: Baum-Welch fitting, posteriors, decoding, segmentation.

One scenario is one observation sequence. By default each hidden state
emits from a single full-covariance Gaussian; ``n_mix > 1`` gives every state
a Gaussian mixture instead.

Fitting runs on a per-dimension standardized copy of the data and the fitted
parameters are mapped back to the original units; EM is affine-equivariant,
so this only improves conditioning.

Covariances are regularized by adding ``reg * I`` (original units) to every
M-step estimate. Because the ridged estimate is not the exact maximizer of
the expected complete-data log-likelihood, it is only accepted when it does
not lower that quantity for its component; otherwise the previous covariance
is kept. Every accepted step is then a generalized EM step, so the
log-likelihood recorded in ``FitResult.loglik_trace`` never decreases beyond
rounding. Plain ridge-after-M-step updates can lower it by up to ~1e-4 when a
state holds only a handful of frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import logsumexp

from . import kernels
from ._kmeans import kmeans
from .errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
EM_SLACK = 1e-8
SELECTION_CRITERIA = ("max-ll", "paper-literal", "bic")
DECODERS = ("viterbi", "posterior-argmax")
FIT_INITS = ("kmeans", "segments", "both")


def _as_obs(observations) -> np.ndarray:
    X = getattr(observations, "points", observations)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def gaussian_logpdf(X, mean, cov, index: int | None = None) -> np.ndarray:
    """Log density of ``N(mean, cov)`` at each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mean = np.asarray(mean, dtype=np.float64)
    try:
        c, low = cho_factor(np.asarray(cov, dtype=np.float64), lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        where = "" if index is None else f" (component {index})"
        raise NumericalError(f"covariance is not positive definite{where}") from None
    diff = X - mean
    sol = cho_solve((c, low), diff.T, check_finite=False)
    maha = np.einsum("ij,ji->i", diff, sol)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    return -0.5 * (X.shape[1] * LOG_2PI + logdet + maha)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def logpdf(self, X, index: int | None = None) -> np.ndarray:
        return gaussian_logpdf(X, self.mean, self.cov, index)


def gaussian_pdf(p, comp: GaussianComponent) -> float:
    """Density of a single point; evaluated in log space."""
    return float(np.exp(comp.logpdf(np.asarray(p, dtype=float)[None, :])[0]))


@dataclass(frozen=True, eq=False)
class HmmModel:
    startprob: np.ndarray
    transmat: np.ndarray
    emissions: tuple[tuple[GaussianComponent, ...], ...]

    def __post_init__(self):
        pi = np.asarray(self.startprob, dtype=float)
        A = np.asarray(self.transmat, dtype=float)
        n = len(pi)
        if n < 1 or A.shape != (n, n) or len(self.emissions) != n:
            raise ValidationError("inconsistent HMM dimensions")
        if abs(pi.sum() - 1.0) > 1e-9 or np.any(pi < 0):
            raise ValidationError("start probabilities must be a distribution")
        if np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9) or np.any(A < 0):
            raise ValidationError("transition rows must be distributions")
        for j, comps in enumerate(self.emissions):
            if abs(sum(c.weight for c in comps) - 1.0) > 1e-9:
                raise ValidationError(f"state {j}: mixture weights must sum to 1")
        object.__setattr__(self, "startprob", pi)
        object.__setattr__(self, "transmat", A)

    @property
    def n_states(self) -> int:
        return len(self.startprob)

    @property
    def n_mix(self) -> int:
        return len(self.emissions[0])

    def log_emission(self, X) -> np.ndarray:
        X = _as_obs(X)
        out = np.empty((len(X), self.n_states))
        for j, comps in enumerate(self.emissions):
            if len(comps) == 1:
                out[:, j] = comps[0].logpdf(X, j)
            else:
                parts = [np.log(c.weight) + c.logpdf(X, j) if c.weight > 0 else np.full(len(X), -np.inf)
                         for c in comps]
                out[:, j] = logsumexp(np.stack(parts), axis=0)
        return out

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "startprob": self.startprob.tolist(),
            "transmat": self.transmat.tolist(),
            "emissions": [[{"weight": c.weight, "mean": np.asarray(c.mean).tolist(),
                            "cov": np.asarray(c.cov).tolist()} for c in comps]
                          for comps in self.emissions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        em = tuple(tuple(GaussianComponent(np.asarray(c["mean"]), np.asarray(c["cov"]), float(c["weight"]))
                         for c in comps) for comps in d["emissions"])
        return cls(np.asarray(d["startprob"]), np.asarray(d["transmat"]), em)


@dataclass
class FitResult:
    """``loglik_trace`` holds the log-likelihood at every iterate (non-decreasing);
    ``cov_rejections`` counts ridged covariance updates that were declined."""

    model: HmmModel
    loglik: float
    loglik_trace: list[float]
    n_iter: int
    converged: bool
    cov_rejections: int = 0


def _forward_backward(logB, A, pi):
    if np.any(np.isneginf(logB).all(axis=1)):
        ll = -np.inf
    else:
        with np.errstate(invalid="ignore"):
            gamma, xi, ll = kernels.forward_backward(logB, A, pi)
    if not np.isfinite(ll):
        raise NumericalError("observation sequence has zero likelihood under the model "
                             "(all emissions underflow); increase covariance regularization")
    return gamma, xi, ll


def posterior(model: HmmModel, observations) -> np.ndarray:
    """Per-frame state posteriors ``(T, N)``; each row sums to one."""
    X = _as_obs(observations)
    gamma, _, _ = _forward_backward(model.log_emission(X), model.transmat, model.startprob)
    return gamma


def log_likelihood(model: HmmModel, observations) -> float:
    X = _as_obs(observations)
    return _forward_backward(model.log_emission(X), model.transmat, model.startprob)[2]


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def path_log_prob(model: HmmModel, observations, path: Sequence[int]) -> float:
    """Joint log probability of ``observations`` and the state ``path``."""
    X = _as_obs(observations)
    q = np.asarray(path, dtype=int)
    logB = model.log_emission(X)
    lp = _log(model.startprob[q[0]]) + logB[np.arange(len(q)), q].sum()
    return float(lp + _log(model.transmat[q[:-1], q[1:]]).sum())


def decode(model: HmmModel, observations, method: str = "viterbi") -> np.ndarray:
    """Hidden state sequence: Viterbi path, or per-frame posterior argmax."""
    X = _as_obs(observations)
    logB = model.log_emission(X)
    if method == "viterbi":
        # an all-zero-likelihood sequence has no path; surface it like the posterior does
        _forward_backward(logB, model.transmat, model.startprob)
        path, _ = kernels.viterbi(logB, _log(model.transmat), _log(model.startprob))
        return np.asarray(path, dtype=int)
    if method == "posterior-argmax":
        gamma, _, _ = _forward_backward(logB, model.transmat, model.startprob)
        return gamma.argmax(axis=1)
    raise ValidationError(f"unknown decoder {method!r}; expected one of {DECODERS}")


# --- Baum-Welch -----------------------------------------------------------------

def _initial_params(Z, n_states, n_mix, ridge, rng, init="kmeans"):
    T, d = Z.shape
    glob_cov = np.cov(Z, rowvar=False, bias=True).reshape(d, d) + np.diag(ridge)
    if n_states == 1:
        labels = np.zeros(T, dtype=int)
    elif init == "segments":
        # equal contiguous blocks in time order
        labels = np.arange(T) * n_states // T
    else:
        labels = kmeans(Z, n_states, rng, init="++").labels
    means = np.empty((n_states, n_mix, d))
    covs = np.empty((n_states, n_mix, d, d))
    weights = np.full((n_states, n_mix), 1.0 / n_mix)
    for j in range(n_states):
        members = Z[labels == j]
        if len(members) == 0:
            members = Z
        sub = np.zeros(len(members), dtype=int)
        if n_mix > 1 and len(np.unique(members, axis=0)) >= n_mix:
            sub = kmeans(members, n_mix, rng, init="++").labels
        for m in range(n_mix):
            part = members[sub == m] if np.any(sub == m) else members
            means[j, m] = part.mean(axis=0)
            covs[j, m] = (np.cov(part, rowvar=False, bias=True).reshape(d, d) + np.diag(ridge)
                          if len(part) > 1 else glob_cov)
    if n_states == 1:
        A = np.ones((1, 1))
    else:
        A = np.full((n_states, n_states), 0.1 / (n_states - 1))
        np.fill_diagonal(A, 0.9)
    pi = np.full(n_states, 1.0 / n_states)
    return pi, A, weights, means, covs


def _cholesky_ext(cov, index):
    """Lower Cholesky factor in extended precision (``np.longdouble``)."""
    a = np.asarray(cov, dtype=np.longdouble)
    d = len(a)
    L = np.zeros((d, d), dtype=np.longdouble)
    for i in range(d):
        for k in range(i + 1):
            s = a[i, k] - (L[i, :k] * L[k, :k]).sum()
            if i == k:
                if not s > 0:
                    raise NumericalError(f"covariance is not positive definite (component {index})")
                L[i, i] = np.sqrt(s)
            else:
                L[i, k] = s / L[k, k]
    return L


def _forward_solve(L, B):
    """Solve ``L @ Y = B`` for lower-triangular ``L``; ``B`` is ``(d, n)``."""
    Y = np.empty_like(B)
    for i in range(len(L)):
        Y[i] = (B[i] - L[i, :i] @ Y[:i]) / L[i, i]
    return Y


# Near-singular state covariances (a state holding about d frames) have
# condition numbers near 1e9; in float64 that alone puts ~1e-7 of noise on the
# log-likelihood, above the EM ascent check. Inside the fit loop, densities,
# penalty and scatter matrices are therefore evaluated in extended precision.

def _component_logpdf(Z, weights, means, covs):
    N, M = weights.shape
    out = np.empty((len(Z), N, M))
    Zl = Z.astype(np.longdouble)
    chols = np.empty(covs.shape, dtype=np.longdouble)
    for j in range(N):
        for m in range(M):
            L = _cholesky_ext(covs[j, m], j)
            chols[j, m] = L
            y = _forward_solve(L, (Zl - means[j, m].astype(np.longdouble)).T)
            logdet = 2.0 * np.log(np.diag(L)).sum()
            with np.errstate(divide="ignore"):
                lw = np.log(weights[j, m])
            out[:, j, m] = lw - 0.5 * (Z.shape[1] * LOG_2PI + logdet + (y * y).sum(axis=0))
    return out, chols


def _cov_cost(cov, scatter_mean):
    """``log|cov| + tr(inv(cov) @ S)``: minus twice the per-frame expected log-density, up to constants."""
    L = _cholesky_ext(cov, -1)
    Y = _forward_solve(L, np.asarray(scatter_mean, dtype=np.longdouble))
    W = _forward_solve(L, Y.T.copy())
    return 2.0 * np.log(np.diag(L)).sum() + np.trace(W)


def fit(observations, n_states: int, seed: int = 0, *, n_mix: int = 1, reg: float = 1e-6,
        tol: float = 1e-10, max_iter: int = 500, n_init: int = 1, init: str = "both") -> FitResult:
    """Baum-Welch on one observation sequence.

    States are initialized by K-means on the frames, transitions start sticky
    (0.9 self-transition), start probabilities uniform. Iteration stops when
    the penalized log-likelihood gain drops below ``tol`` or after
    ``max_iter`` rounds.

    ``init`` picks the starting partition: ``kmeans`` clusters the frames,
    ``segments`` cuts the sequence into equal contiguous blocks, ``both`` runs
    EM from each. K-means starts are repeated ``n_init`` times with seeds
    ``seed``, ``seed + 1``, ... The run with the highest penalized objective
    is kept.
    """
    if n_init < 1:
        raise ValidationError("n_init must be >= 1")
    if init not in FIT_INITS:
        raise ValidationError(f"unknown init {init!r}; expected one of {FIT_INITS}")
    starts = [("kmeans", seed + r) for r in range(n_init)] if init != "segments" else []
    if init != "kmeans":
        starts.append(("segments", seed))
    best = None
    for how, s in starts:
        res = _fit_once(observations, n_states, s, n_mix, reg, tol, max_iter, how)
        if best is None or res.loglik > best.loglik:
            best = res
    return best


def _fit_once(observations, n_states, seed, n_mix, reg, tol, max_iter, init) -> FitResult:
    X = _as_obs(observations)
    T, d = X.shape
    if n_states < 1:
        raise ValidationError("n_states must be >= 1")
    if n_states > T:
        raise ValidationError(f"n_states={n_states} exceeds sequence length {T}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("observations must be finite")

    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale <= 0] = 1.0
    Z = (X - shift) / scale
    ridge = reg / scale ** 2
    log_jacobian = T * np.log(scale).sum()

    rng = np.random.default_rng(seed)
    pi, A, weights, means, covs = _initial_params(Z, n_states, n_mix, ridge, rng, init)

    ll_trace: list[float] = []
    rejected = 0
    converged = False
    it = 0
    while True:
        comp, _ = _component_logpdf(Z, weights, means, covs)
        logB = logsumexp(comp, axis=2)
        gamma, xi, ll = _forward_backward(logB, A, pi)
        ll_trace.append(ll - log_jacobian)
        if len(ll_trace) > 1:
            gain = ll_trace[-1] - ll_trace[-2]
            if gain < -EM_SLACK:
                raise NumericalError(f"EM log-likelihood decreased by {-gain:.3e} at iteration {it}")
            if abs(gain) < tol:
                converged = True
                break
        if it >= max_iter:
            break
        it += 1

        pi = gamma[0] / gamma[0].sum()
        rows = xi.sum(axis=1)
        live = rows > 0
        A = A.copy()
        A[live] = xi[live] / rows[live, None]
        resp = gamma[:, :, None] * np.exp(comp - logB[:, :, None])
        Zl = Z.astype(np.longdouble)
        for j in range(n_states):
            occ = resp[:, j, :].sum(axis=0)
            total = occ.sum()
            if total <= 0:
                continue
            weights[j] = occ / total
            for m in range(n_mix):
                if occ[m] <= 0:
                    continue
                r = resp[:, j, m].astype(np.longdouble)
                mu = r @ Zl / r.sum()
                diff = Zl - mu
                S = ((r[:, None] * diff).T @ diff) / r.sum()
                means[j, m] = mu
                cand = (S + np.diag(ridge)).astype(np.float64)
                if _cov_cost(cand, S) <= _cov_cost(covs[j, m], S):
                    covs[j, m] = cand
                else:
                    rejected += 1

    S = np.diag(scale)
    emissions = tuple(
        tuple(GaussianComponent(shift + scale * means[j, m], S @ covs[j, m] @ S, float(weights[j, m]))
              for m in range(n_mix))
        for j in range(n_states))
    model = HmmModel(pi, A, emissions)
    if rejected:
        logger.debug("fit N=%d: %d ridged covariance updates declined", n_states, rejected)
    return FitResult(model, ll_trace[-1], ll_trace, it, converged, rejected)


# --- model selection ------------------------------------------------------------------

@dataclass
class ModelSelection:
    n_states: int
    model: HmmModel
    path: np.ndarray
    loglik: float
    criterion: str
    candidates: list[tuple[int, float]] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)
    stop_reason: str = ""

    def __iter__(self):
        # unpacks as (n_states, model)
        return iter((self.n_states, self.model))


def select_model(observations, n_max: int = 10, seed: int = 0, *, criterion: str = "max-ll",
                 decode_method: str = "viterbi", **fit_kw) -> ModelSelection:
    """Fit N = 1, 2, ... until decoding degenerates, then pick N by ``criterion``.

    A fit is degenerate when its decoded path leaves some state unvisited, or
    when fitting fails numerically. ``max-ll`` takes the largest
    log-likelihood among completed fits, ``paper-literal`` the smallest, and
    ``bic`` the smallest Bayesian information criterion.
    """
    if criterion not in SELECTION_CRITERIA:
        raise ValidationError(f"unknown selection criterion {criterion!r}")
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    X = _as_obs(observations)
    done: list[tuple[int, FitResult, np.ndarray]] = []
    reason = f"reached n_max={n_max}"
    for n in range(1, n_max + 1):
        if n > len(X):
            reason = f"N={n} exceeds sequence length"
            break
        try:
            res = fit(X, n, seed, **fit_kw)
            path = decode(res.model, X, decode_method)
        except NumericalError as exc:
            reason = f"N={n}: {exc}"
            break
        if not np.isfinite(res.loglik) or len(np.unique(path)) < n:
            reason = f"N={n}: decoded path leaves a state unvisited"
            break
        done.append((n, res, path))
    if not done:
        raise NumericalError(f"no state count could be fitted ({reason})")
    lls = np.array([r.loglik for _, r, _ in done])
    if criterion == "max-ll":
        pick = int(np.argmax(lls))
    elif criterion == "paper-literal":
        pick = int(np.argmin(lls))
    else:
        n_mix = fit_kw.get("n_mix", 1)
        d = X.shape[1]
        npar = np.array([n * n_mix * (d + d * (d + 1) // 2) + n * (n_mix - 1) + n * (n - 1) + (n - 1)
                         for n, _, _ in done])
        pick = int(np.argmin(-2.0 * lls + npar * np.log(len(X))))
    n, res, path = done[pick]
    logger.info("model selection (%s): N*=%d among %s; sweep stopped: %s",
                criterion, n, [m for m, _, _ in done], reason)
    return ModelSelection(n, res.model, path, res.loglik, criterion,
                          [(m, r.loglik) for m, r, _ in done], res.loglik_trace, reason)


# --- segmentation --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Primitive:
    """A maximal constant-state run; ``start``/``end`` are inclusive 0-based frame offsets."""

    scenario_ref: str | None
    state_label: int
    start: int
    end: int
    points: np.ndarray

    def __len__(self) -> int:
        return self.end - self.start + 1


def state_runs(path: Sequence[int]) -> list[tuple[int, int, int]]:
    """``(state, start, end)`` for every maximal constant run of ``path``."""
    q = np.asarray(path)
    if len(q) == 0:
        return []
    cuts = np.flatnonzero(q[1:] != q[:-1]) + 1
    starts = np.r_[0, cuts]
    ends = np.r_[cuts - 1, len(q) - 1]
    return [(int(q[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def segment(scenario, path: Sequence[int], min_frames: int = 10,
            scenario_ref: str | None = None) -> list[Primitive]:
    """Cut a scenario at state changes; runs shorter than ``min_frames`` are dropped."""
    X = _as_obs(scenario)
    if len(path) != len(X):
        raise ValidationError(f"path length {len(path)} != scenario length {len(X)}")
    return [Primitive(scenario_ref, s, a, b, X[a:b + 1].copy())
            for s, a, b in state_runs(path) if b - a + 1 >= min_frames]

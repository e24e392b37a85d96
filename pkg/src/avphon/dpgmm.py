"""Dirichlet-process Gaussian mixture fitted by collapsed Gibbs sampling.

Assignments are resampled point by point from the Chinese-restaurant-process
prior times the Normal-Inverse-Wishart posterior predictive (a multivariate
Student-t). After the last sweep each cluster is summarized by its
posterior-mean Gaussian, and the mixture answers posterior-over-cluster
queries on full or partial (marginalized) feature vectors.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import logsumexp

from avphon import _gibbs, io
from avphon.errors import ConfigError, DataError, NumericalError
from avphon.features import ModalityLayout

logger = logging.getLogger(__name__)

MODEL_FORMAT = 1
EIG_FLOOR = 1e-8
_INITIAL_CAPACITY = 32


@dataclass(frozen=True)
class DpgmmConfig:
    alpha: float = 1.0
    iterations: int = 1500
    init_clusters: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.init_clusters < 1:
            raise ConfigError(f"init_clusters must be >= 1, got {self.init_clusters}")


@dataclass
class NiwPrior:
    mean0: np.ndarray
    kappa0: float
    nu0: float
    psi0: np.ndarray

    def __post_init__(self):
        self.mean0 = np.asarray(self.mean0, dtype=np.float64)
        self.psi0 = np.asarray(self.psi0, dtype=np.float64)
        d = self.mean0.shape[0]
        if self.psi0.shape != (d, d):
            raise ConfigError(f"psi0 must be {d}x{d}")
        if not np.allclose(self.psi0, self.psi0.T):
            raise ConfigError("psi0 must be symmetric")
        if np.linalg.eigvalsh(self.psi0)[0] <= 0:
            raise ConfigError("psi0 must be positive definite")
        if not self.kappa0 > 0:
            raise ConfigError("kappa0 must be positive")
        if not self.nu0 > d - 1:
            raise ConfigError(f"nu0 must exceed d - 1 = {d - 1}")

    @property
    def dims(self):
        return self.mean0.shape[0]

    @classmethod
    def from_data(cls, X, kappa0=0.001, nu_offset=3.0, psi_scale=1.0):
        """Weakly informative defaults: data mean, diagonal of data variances, nu0 = d + 3.

        ``psi_scale`` multiplies the variance diagonal.
        """
        X = np.asarray(X, dtype=np.float64)
        var = X.var(axis=0)
        floor = max(float(var.max()) * 1e-6, 1e-12)
        return cls(X.mean(axis=0), kappa0, X.shape[1] + nu_offset,
                   psi_scale * np.diag(np.maximum(var, floor)))

    def to_dict(self):
        return {"mean0": self.mean0.tolist(), "kappa0": self.kappa0, "nu0": self.nu0,
                "psi0": self.psi0.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean0"]), d["kappa0"], d["nu0"], np.array(d["psi0"]))


@dataclass
class DpgmmModel:
    """Fitted mixture. Immutable in use; posterior queries are pure."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    layout: ModalityLayout
    config: DpgmmConfig = field(default_factory=DpgmmConfig)
    prior: NiwPrior = None
    trace: list = field(default_factory=list)
    mode: str = "sequential"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        self._chol_cache = {}

    @property
    def n_clusters(self):
        return len(self.weights)

    @property
    def dims(self):
        return self.means.shape[1]

    def _factors(self, observed):
        key = tuple(observed.tolist())
        if key not in self._chol_cache:
            sub = self.covariances[:, observed[:, None], observed[None, :]]
            chols = np.empty_like(sub)
            logdets = np.empty(len(sub))
            for k, c in enumerate(sub):
                try:
                    chols[k] = np.linalg.cholesky(c)
                except np.linalg.LinAlgError:
                    raise NumericalError(f"cluster {k} covariance is not positive definite") from None
                logdets[k] = 2.0 * np.sum(np.log(np.diag(chols[k])))
            self._chol_cache[key] = (chols, logdets)
        return self._chol_cache[key]

    def log_joint(self, X, observed=None):
        """``log w_k + log N(x; mean_k, cov_k)`` restricted to ``observed`` dims, shape (n, K)."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        observed = np.arange(self.dims) if observed is None else np.asarray(observed, dtype=int)
        if len(observed) == 0:
            raise DataError("observed dimension set is empty")
        if observed.min() < 0 or observed.max() >= self.dims or len(set(observed.tolist())) != len(observed):
            raise DataError(f"observed dims must be distinct indices in [0, {self.dims})")
        if X.shape[1] != len(observed):
            raise DataError(f"vector has {X.shape[1]} dims, expected {len(observed)}")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite input vector")
        chols, logdets = self._factors(observed)
        m = len(observed)
        out = np.empty((X.shape[0], self.n_clusters))
        for k in range(self.n_clusters):
            y = solve_triangular(chols[k], (X - self.means[k, observed]).T, lower=True)
            out[:, k] = (np.log(self.weights[k]) - 0.5 * (m * math.log(2 * math.pi) + logdets[k])
                         - 0.5 * np.sum(y * y, axis=0))
        return out[0] if single else out

    def posterior(self, x):
        """Posterior over clusters for full-dimensional vector(s) x."""
        return self.posterior_marginal(x, np.arange(self.dims))

    def posterior_marginal(self, x_obs, observed):
        """Posterior using each cluster's marginal Gaussian over ``observed`` dims."""
        lj = self.log_joint(x_obs, observed)
        return np.exp(lj - logsumexp(lj, axis=-1, keepdims=True))

    # --- serialization -----------------------------------------------------

    def to_bytes(self):
        K, d = self.means.shape
        header = {
            "format": MODEL_FORMAT,
            "layout": self.layout.to_dict(),
            "config": asdict(self.config),
            "prior": self.prior.to_dict() if self.prior is not None else None,
            "mode": self.mode,
            "n_values": K + K * d + K * d * d,
        }
        payload = np.concatenate([self.weights, self.means.ravel(), self.covariances.ravel()])
        return io.pack_container(io.KIND_MODEL, d, K, header, payload.astype("<f8"))

    @classmethod
    def from_bytes(cls, data):
        d, K, header, flat = io.unpack_container(data, io.KIND_MODEL, np.float64)
        if header.get("format") != MODEL_FORMAT:
            raise io.ContainerError(f"unsupported model format {header.get('format')}")
        try:
            weights = flat[:K]
            means = flat[K:K + K * d].reshape(K, d)
            covs = flat[K + K * d:].reshape(K, d, d)
            prior = NiwPrior.from_dict(header["prior"]) if header.get("prior") else None
            return cls(weights, means, covs, ModalityLayout.from_dict(header["layout"]),
                       DpgmmConfig(**header["config"]), prior, [], header.get("mode", "sequential"))
        except (KeyError, TypeError, ValueError) as exc:
            raise io.ContainerError(f"corrupt model header: {exc}") from None

    def save(self, path):
        io.atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def trace_csv(self):
        rows = [{"sweep": s, "K": k, "joint_log_prob": repr(float(lp))} for s, k, lp in self.trace]
        return io.csv_text(["sweep", "K", "joint_log_prob"], rows)


def crp_assignment_probs(n, counts, alpha, exact=False):
    """CRP distribution for point ``n`` given the cluster sizes of the first n-1 points.

    Returns ``(new_cluster_prob, existing_cluster_probs)``. With ``exact=True``
    and integer/rational alpha the masses are Fractions.
    """
    counts = list(counts)
    if any(c < 0 for c in counts) or sum(counts) != n - 1:
        raise DataError(f"cluster sizes sum to {sum(counts)}, expected n - 1 = {n - 1}")
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    if exact:
        alpha = Fraction(alpha)
        denom = n - 1 + alpha
        return alpha / denom, [Fraction(c) / denom for c in counts]
    denom = n - 1 + float(alpha)
    return float(alpha) / denom, np.asarray(counts, dtype=np.float64) / denom


def _stack(data):
    if isinstance(data, np.ndarray):
        return np.asarray(data, dtype=np.float64), None
    seqs = list(data)
    if not seqs:
        raise DataError("no training data")
    layout = seqs[0].layout
    for s in seqs:
        if s.layout != layout:
            raise DataError(f"utterance {s.utterance}: layout differs from the first sequence")
    return np.vstack([s.vectors for s in seqs]), layout


def regularize_covariance(cov):
    """Symmetrize and floor eigenvalues at ``1e-8 * trace / d``."""
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    w, v = np.linalg.eigh(cov)
    floor = EIG_FLOOR * max(np.trace(cov), 0.0) / d
    if w[0] >= floor and floor > 0:
        return cov
    w = np.maximum(w, floor if floor > 0 else EIG_FLOOR)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


class _State:
    """Sampler state arrays with growable cluster capacity."""

    def __init__(self, X, z, capacity, psi0, chol0):
        n, d = X.shape
        self.z = z.astype(np.int64)
        self.counts = np.zeros(capacity, dtype=np.int64)
        self.sums = np.zeros((capacity, d))
        self.chol = np.repeat(chol0[None], capacity, axis=0)
        self.logdets = np.zeros(capacity)
        self.active = np.zeros(capacity, dtype=np.bool_)
        np.add.at(self.counts, self.z, 1)
        np.add.at(self.sums, self.z, X)
        self.active[:] = self.counts > 0

    def grow(self):
        cap = len(self.counts)
        extra = cap
        self.counts = np.concatenate([self.counts, np.zeros(extra, dtype=np.int64)])
        self.sums = np.concatenate([self.sums, np.zeros((extra, self.sums.shape[1]))])
        self.chol = np.concatenate([self.chol, np.repeat(self.chol[:1] * 0, extra, axis=0)])
        self.logdets = np.concatenate([self.logdets, np.zeros(extra)])
        self.active = np.concatenate([self.active, np.zeros(extra, dtype=np.bool_)])


def fit(data, prior=None, config=None, layout=None, callback=None):
    """Fit a DPGMM by collapsed Gibbs sampling.

    Parameters
    ----------
    data : iterable of FeatureSequence, or array of shape (n, d)
        Training vectors; sequences are stacked in the given order.
    prior : NiwPrior, optional
        Defaults to ``NiwPrior.from_data``.
    config : DpgmmConfig, optional
    layout : ModalityLayout, optional
        Needed only when ``data`` is a bare array (defaults to audio-only).
    callback : callable, optional
        Called as ``callback(sweep, n_clusters, joint_log_prob)`` after each sweep.

    Returns
    -------
    DpgmmModel
    """
    config = config or DpgmmConfig()
    X, seq_layout = _stack(data)
    if X.ndim != 2 or X.shape[1] == 0:
        raise DataError("training data must be a non-empty (n, d) matrix with d >= 1")
    n, d = X.shape
    layout = seq_layout or layout or ModalityLayout.audio_only(d)
    if layout.total_dims != d:
        raise DataError(f"layout has {layout.total_dims} dims but data has {d}")
    if not np.all(np.isfinite(X)):
        raise DataError("training data contain non-finite values")
    if n < config.init_clusters:
        raise DataError(f"{n} training vectors is fewer than init_clusters={config.init_clusters}")
    prior = prior if prior is not None else NiwPrior.from_data(X)
    if prior.dims != d:
        raise ConfigError(f"prior has {prior.dims} dims, data has {d}")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n).astype(np.int64)
    Xc = np.ascontiguousarray(X - prior.mean0)
    psi0 = np.ascontiguousarray(prior.psi0)
    chol0 = np.linalg.cholesky(psi0)
    logdet0 = 2.0 * float(np.sum(np.log(np.diag(chol0))))
    z0 = rng.integers(0, config.init_clusters, size=n)
    state = _State(Xc, z0, max(_INITIAL_CAPACITY, 2 * config.init_clusters), psi0, chol0)
    kappa0, nu0, alpha = float(prior.kappa0), float(prior.nu0), float(config.alpha)

    trace = []
    _gibbs.rebuild_all(Xc, state.z, state.counts, state.chol, state.logdets, state.active,
                       psi0, kappa0)
    for it in range(1, config.iterations + 1):
        uniforms = rng.random(n)
        start = 0
        while True:
            stop = _gibbs.sweep(Xc, order[start:], uniforms[start:], state.z, state.counts,
                                state.sums, state.chol, state.logdets, state.active,
                                psi0, chol0, logdet0, kappa0, nu0, alpha)
            if stop < 0:
                break
            start += stop
            state.grow()
        # refresh factors from scratch so rank-one drift never accumulates across sweeps
        _gibbs.rebuild_all(Xc, state.z, state.counts, state.chol, state.logdets, state.active,
                           psi0, kappa0)
        K = int(state.active.sum())
        lp = _gibbs.joint_log_prob(state.counts, state.chol, state.active, n, alpha,
                                   kappa0, nu0, logdet0, d)
        if not math.isfinite(lp):
            raise NumericalError(f"joint log probability became non-finite at sweep {it}")
        trace.append((it, K, lp))
        if callback is not None:
            callback(it, K, lp)
        if it % 50 == 0 or it == config.iterations:
            logger.debug("sweep %d: K=%d log p=%.3f", it, K, lp)

    return _extract(Xc, state, prior, config, layout, trace)


def _extract(Xc, state, prior, config, layout, trace):
    d = Xc.shape[1]
    slots = np.flatnonzero(state.active)
    n = Xc.shape[0]
    weights, means, covs = [], [], []
    for k in slots:
        nk = state.counts[k]
        kn = prior.kappa0 + nk
        nun = prior.nu0 + nk
        L = state.chol[k]
        psi = L @ L.T
        means.append(state.sums[k] / kn + prior.mean0)
        denom = nun - d - 1.0
        covs.append(regularize_covariance(psi / denom if denom > 0 else psi / nun))
        weights.append(nk / (n + config.alpha))
    weights = np.asarray(weights)
    weights /= weights.sum()
    return DpgmmModel(weights, np.array(means), np.array(covs), layout, config, prior, trace)


def check_covariances(model):
    """True when every covariance is symmetric positive definite."""
    for c in model.covariances:
        if not np.allclose(c, c.T):
            return False
        try:
            cho_factor(c)
        except np.linalg.LinAlgError:
            return False
    return True

"""K-Means and diagonal GMM clustering, and proxy resolution IDs built from them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus
from .errors import InfeasibleError, NumericError, ShapeError
from .textprep import NgramConfig, WordVectorTable, build_vocab, embed_text, preprocess, tfidf_matrix

VARIANCE_FLOOR = 1e-6
PROJECTION_DIM = 128


@dataclass(frozen=True)
class CentroidModel:
    k: int
    centroids: np.ndarray
    inertia: float
    seed: int
    labels: np.ndarray
    inertia_trace: tuple[float, ...] = ()
    n_iter: int = 0


@dataclass(frozen=True)
class GmmModel:
    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: tuple[float, ...]
    seed: int = 0
    variance_floor: float = VARIANCE_FLOOR

    def log_resp(self, X) -> tuple[np.ndarray, np.ndarray]:
        return _gmm_log_resp(_dense(X), self.weights, self.means, self.variances)

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(self.log_resp(X)[0])

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.log_resp(X)[0], axis=1)


@dataclass(frozen=True)
class SyntheticLabeling:
    assignment: Mapping[str, str]
    method: str
    k: int
    sizes: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"assignment": dict(self.assignment), "method": self.method, "k": self.k, "sizes": dict(self.sizes)}

    @classmethod
    def from_dict(cls, d) -> "SyntheticLabeling":
        return cls(dict(d["assignment"]), d["method"], int(d["k"]), dict(d.get("sizes", {})))


def _dense(X) -> np.ndarray:
    return X.toarray() if sp.issparse(X) else np.asarray(X, dtype=np.float64)


def _check_points(X, k):
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
    else:
        try:
            X = np.asarray(X, dtype=np.float64)
        except ValueError as exc:
            raise ShapeError(f"vectors have inconsistent dimensions: {exc}") from None
        if X.ndim != 2:
            raise ShapeError(f"expected a 2-D array of vectors, got shape {X.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if X.shape[0] < k:
        raise InfeasibleError(f"{X.shape[0]} points cannot form {k} clusters")
    return X


def _row_sq_norms(X) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def _sq_dists(X, x_sq, C) -> np.ndarray:
    cross = X @ C.T
    cross = np.asarray(cross)
    d = x_sq[:, None] - 2.0 * cross + np.einsum("ij,ij->i", C, C)[None, :]
    return np.maximum(d, 0.0)


def _exact_inertia(X, x_sq, C, labels) -> float:
    if sp.issparse(X):
        return float(_sq_dists(X, x_sq, C)[np.arange(X.shape[0]), labels].sum())
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _plus_plus(X, x_sq, k, rng) -> np.ndarray:
    """Greedy k-means++: each step samples ``2 + ln k`` D^2-weighted candidates
    and keeps the one that most reduces the potential (lowest index on ties)."""
    n = X.shape[0]
    trials = 2 + int(np.log(k))
    first = int(rng.integers(n))
    chosen = [first]
    C = _dense(X[first : first + 1])
    closest = _sq_dists(X, x_sq, C)[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with a centre; pick any unused one
            unused = np.setdiff1d(np.arange(n), chosen)
            nxt = int(unused[rng.integers(unused.size)])
            cand_d = _sq_dists(X, x_sq, _dense(X[nxt : nxt + 1]))[:, 0]
        else:
            cands = rng.choice(n, size=trials, p=closest / total)
            d = np.minimum(closest[:, None], _sq_dists(X, x_sq, _dense(X[cands])))
            best = int(np.argmin(d.sum(axis=0)))
            nxt = int(cands[best])
            cand_d = d[:, best]
        chosen.append(nxt)
        C = np.vstack([C, _dense(X[nxt : nxt + 1])])
        closest = np.minimum(closest, cand_d)
    return C


def _centroids(X, labels, k) -> tuple[np.ndarray, np.ndarray]:
    onehot = sp.csr_matrix((np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(k, len(labels)))
    counts = np.asarray(onehot.sum(axis=1)).ravel()
    sums = np.asarray((onehot @ X).todense()) if sp.issparse(X) else onehot @ X
    with np.errstate(invalid="ignore", divide="ignore"):
        C = sums / counts[:, None]
    return C, counts


def kmeans_fit(vectors, k: int, seed: int = 0, max_iter: int = 300) -> CentroidModel:
    """k-means++ seeding then Lloyd iterations to an assignment fixpoint.

    Works on dense arrays or scipy sparse rows. An empty cluster takes over
    the point farthest from its own centroid.
    """
    X = _check_points(vectors, k)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    x_sq = _row_sq_norms(X)
    C = _plus_plus(X, x_sq, k, rng)
    labels = np.argmin(_sq_dists(X, x_sq, C), axis=1)
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        C, counts = _centroids(X, labels, k)
        for j in np.where(counts == 0)[0]:
            C_ok = np.where(counts[:, None] > 0, C, 0.0)
            own = _sq_dists(X, x_sq, C_ok)[np.arange(n), labels]
            own[counts[labels] <= 1] = -1.0
            far = int(np.argmax(own))
            donor = labels[far]
            labels[far] = j
            counts[donor] -= 1
            counts[j] = 1
            C[j] = _dense(X[far : far + 1])[0]
            members = labels == donor
            C[donor] = np.asarray(X[members].mean(axis=0)).ravel()
        trace.append(_exact_inertia(X, x_sq, C, labels))
        new_labels = np.argmin(_sq_dists(X, x_sq, C), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = _exact_inertia(X, x_sq, C, labels)
    return CentroidModel(k, C, inertia, seed, labels, tuple(trace), n_iter)


def kmeans_restarts(vectors, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> CentroidModel:
    """Lowest-inertia run among seeds ``seed .. seed + n_init - 1`` (first wins ties)."""
    best = None
    for i in range(max(1, n_init)):
        model = kmeans_fit(vectors, k, seed + i, max_iter)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def kmeans_predict(model: CentroidModel, vectors) -> np.ndarray:
    X = sp.csr_matrix(vectors, dtype=np.float64) if sp.issparse(vectors) else np.asarray(vectors, dtype=np.float64)
    if X.shape[1] != model.centroids.shape[1]:
        raise ShapeError(f"expected dimension {model.centroids.shape[1]}, got {X.shape[1]}")
    return np.argmin(_sq_dists(X, _row_sq_norms(X), model.centroids), axis=1)


def _gmm_log_resp(X, weights, means, variances):
    log_w = np.log(np.where(weights > 0, weights, 1e-300))
    log_det = np.log(2.0 * np.pi * variances).sum(axis=1)
    inv = 1.0 / variances
    # sum_d (x - mu)^2 / var, expanded for a single matmul
    maha = (X * X) @ inv.T - 2.0 * X @ (means * inv).T + np.einsum("ij,ij->i", means * means, inv)[None, :]
    log_joint = log_w[None, :] - 0.5 * (log_det[None, :] + maha)
    log_norm = logsumexp(log_joint, axis=1)
    return log_joint - log_norm[:, None], log_norm


def gmm_fit(
    vectors,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmModel:
    """EM for a diagonal-covariance mixture, initialized from :func:`kmeans_fit`."""
    X = _dense(_check_points(vectors, k))
    n, d = X.shape
    km = kmeans_fit(X, k, seed=seed)
    counts = np.bincount(km.labels, minlength=k).astype(np.float64)
    weights = counts / n
    means = km.centroids.copy()
    global_var = np.maximum(X.var(axis=0), variance_floor)
    variances = np.empty((k, d))
    for j in range(k):
        members = X[km.labels == j]
        variances[j] = np.maximum(members.var(axis=0), variance_floor) if len(members) > 1 else global_var

    trace: list[float] = []
    for it in range(max_iter):
        log_resp, log_norm = _gmm_log_resp(X, weights, means, variances)
        ll = float(log_norm.sum())
        if not np.isfinite(ll):
            raise NumericError(f"non-finite log-likelihood at EM iteration {it}")
        trace.append(ll)
        if it > 0 and ll - trace[-2] < tol:
            break
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0)
        alive = nk > 1e-12
        weights = nk / n
        new_means = (resp.T @ X) / np.where(alive, nk, 1.0)[:, None]
        means = np.where(alive[:, None], new_means, means)
        sq = variances.copy()
        # second moment about the new mean; more accurate than E[x^2] - mu^2
        for j in np.where(alive)[0]:
            diff = X - means[j]
            sq[j] = resp[:, j] @ (diff * diff) / nk[j]
        variances = np.where(alive[:, None], np.maximum(sq, variance_floor), variances)
    else:
        _, log_norm = _gmm_log_resp(X, weights, means, variances)
        trace.append(float(log_norm.sum()))
    return GmmModel(k, weights, means, variances, tuple(trace), seed, variance_floor)


def silhouette(vectors, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance; singletons score 0."""
    X = _dense(vectors)
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ValueError("silhouette is undefined for fewer than 2 clusters")
    n = X.shape[0]
    counts = np.bincount(inv)
    x_sq = np.einsum("ij,ij->i", X, X)
    scores = np.zeros(n)
    chunk = 1024
    for start in range(0, n, chunk):
        rows = slice(start, min(n, start + chunk))
        d2 = x_sq[rows, None] - 2.0 * X[rows] @ X.T + x_sq[None, :]
        dist = np.sqrt(np.maximum(d2, 0.0))
        sums = np.zeros((dist.shape[0], len(uniq)))
        for j in range(len(uniq)):
            sums[:, j] = dist[:, inv == j].sum(axis=1)
        own = inv[rows]
        own_n = counts[own]
        a = sums[np.arange(len(own)), own] / np.maximum(own_n - 1, 1)
        mean_other = sums / counts[None, :]
        mean_other[np.arange(len(own)), own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        s[own_n == 1] = 0.0
        scores[rows] = s
    return float(scores.mean())


class KMeans(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters=10, seed=0, max_iter=300):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        self.model_ = kmeans_fit(X, self.n_clusters, self.seed, self.max_iter)
        self.cluster_centers_ = self.model_.centroids
        self.labels_ = self.model_.labels
        self.inertia_ = self.model_.inertia
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return kmeans_predict(self.model_, X)


class DiagonalGMM(ClusterMixin, BaseEstimator):
    def __init__(self, n_components=10, seed=0, max_iter=100, tol=1e-6):
        self.n_components = n_components
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        self.model_ = gmm_fit(X, self.n_components, self.seed, self.max_iter, self.tol)
        self.weights_ = self.model_.weights
        self.means_ = self.model_.means
        self.variances_ = self.model_.variances
        self.labels_ = self.model_.predict(X)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)


def random_projection(dim_in: int, dim_out: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, dim_in, dim_out])
    return rng.standard_normal((dim_in, dim_out)) / np.sqrt(dim_out)


class ResolutionClusterer(BaseEstimator):
    """Cluster resolution texts; ``predict`` labels unseen texts with the fitted model.

    Cluster indices are re-ranked by decreasing member count (ties by raw
    index) so label strings ``RSYN-<rank>`` are stable across re-runs.
    """

    def __init__(self, method="kmeans", k=10, seed=0, min_df=2, max_df_ratio=0.5,
                 ngram_range=(1, 1), mode="lemma+stem", n_init=10, features="tfidf"):
        self.method = method
        self.n_init = n_init
        self.features = features
        self.k = k
        self.seed = seed
        self.min_df = min_df
        self.max_df_ratio = max_df_ratio
        self.ngram_range = ngram_range
        self.mode = mode

    def _features(self, texts, fit=False):
        docs = [preprocess(t, self.mode) for t in texts]
        if self.features == "wordvec":
            table = WordVectorTable(seed=self.seed)
            return np.array([embed_text(d, table) for d in docs]).reshape(len(docs), table.dim)
        if fit:
            self.vocabulary_ = build_vocab(docs, self.min_df, self.max_df_ratio, NgramConfig(*self.ngram_range))
        X = tfidf_matrix(docs, self.vocabulary_)
        if self.method == "gmm":
            if len(self.vocabulary_) > PROJECTION_DIM:
                X = np.asarray(X @ random_projection(len(self.vocabulary_), PROJECTION_DIM, self.seed))
            else:
                X = X.toarray()
        return X

    def vectorize(self, texts):
        """Fit the vocabulary on ``texts`` and return their clustering features."""
        return self._features(texts, fit=True)

    def fit(self, texts, y=None):
        if self.method not in ("kmeans", "gmm"):
            raise ValueError(f"unknown clustering method {self.method!r}")
        if self.features not in ("tfidf", "wordvec"):
            raise ValueError(f"unknown clustering features {self.features!r}")
        X = self._features(texts, fit=True)
        if self.method == "kmeans":
            self.model_ = kmeans_restarts(X, self.k, self.seed, self.n_init)
            raw = self.model_.labels
        else:
            self.model_ = gmm_fit(X, self.k, self.seed)
            raw = self.model_.predict(X)
        sizes = np.bincount(raw, minlength=self.k)
        order = sorted(range(self.k), key=lambda j: (-sizes[j], j))
        self.rank_ = np.empty(self.k, dtype=int)
        self.rank_[order] = np.arange(self.k)
        self.features_ = X
        self.labels_ = [f"RSYN-{r}" for r in self.rank_[raw]]
        return self

    def predict(self, texts) -> list[str]:
        check_is_fitted(self, "model_")
        X = self._features(texts)
        raw = kmeans_predict(self.model_, X) if self.method == "kmeans" else self.model_.predict(X)
        return [f"RSYN-{r}" for r in self.rank_[raw]]


def assign_resolution_ids(
    train: Corpus,
    method: str = "kmeans",
    k: int = 10,
    seed: int = 0,
    min_df: int = 2,
    max_df_ratio: float = 0.5,
    return_clusterer: bool = False,
    n_init: int = 10,
    features: str = "tfidf",
    ngram_range: tuple[int, int] = (1, 1),
):
    """Cluster the training resolution texts into ``RSYN-<i>`` proxy labels."""
    eligible = [r for r in train if r.resolution_text]
    if not eligible:
        raise InfeasibleError("no training record carries resolution text to cluster")
    clusterer = ResolutionClusterer(method, k, seed, min_df, max_df_ratio, ngram_range, n_init=n_init,
                                    features=features).fit(
        [r.resolution_text for r in eligible]
    )
    assignment = {r.incident_id: lbl for r, lbl in zip(eligible, clusterer.labels_)}
    sizes: dict[str, int] = {}
    for lbl in clusterer.labels_:
        sizes[lbl] = sizes.get(lbl, 0) + 1
    labeling = SyntheticLabeling(assignment, method, k, dict(sorted(sizes.items())))
    return (labeling, clusterer) if return_clusterer else labeling


def k_sweep(vectors, ks: Sequence[int] = range(2, 21), seed: int = 0) -> list[dict]:
    """Fit K-Means for each k and report silhouette and inertia."""
    out = []
    n = vectors.shape[0]
    for k in ks:
        if k >= n:
            break
        model = kmeans_fit(vectors, k, seed)
        if len(np.unique(model.labels)) < 2:
            continue
        out.append({"k": int(k), "silhouette": silhouette(vectors, model.labels), "inertia": model.inertia})
    return out

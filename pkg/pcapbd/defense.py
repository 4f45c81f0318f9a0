# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Activation clustering: project the last hidden layer's activations of rows
 the model calls benign, cluster them with k-means for k = 2..7 and score
 each clustering with the silhouette coefficient. Triggered rows spread over
 every cluster mean the backdoor does not separate from benign traffic.
-------------------------------------------------------------------------------
'''
import csv
import warnings
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA
from sklearn.exceptions import ConvergenceWarning
from sklearn.manifold import TSNE
from sklearn.metrics import silhouette_score

from pcapbd.errors import AnalysisRefusedError, ContractError
from pcapbd.ids_core import hidden_activations, predict_classes
from pcapbd.logger import info, warning

K_RANGE = tuple(range(2, 8))
MIN_ANALYSIS_ROWS = 8
KMEANS_MAX_ITER = 300
KMEANS_TOLERANCE = 1e-9
KMEANS_N_INIT = 10
REDUCE_METHODS = ("pca", "tsne")
TAG_BENIGN = "benign"
TAG_TRIGGERED = "triggered"


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int


@dataclass
class ClusterAnalysis:
    points: np.ndarray
    tags: np.ndarray
    assignments: Dict[int, np.ndarray] = field(default_factory=dict)
    silhouettes: Dict[int, float] = field(default_factory=dict)
    composition: Dict[int, List[Dict[str, int]]] = field(default_factory=dict)
    n_rows: int = 0

    @property
    def best_k(self):
        return max(self.silhouettes, key=lambda k: (self.silhouettes[k], -k))

    def trigger_spread(self, k):
        '''Fraction of the clusters at size k holding at least one triggered row.'''
        counts = [c.get(TAG_TRIGGERED, 0) for c in self.composition[k]]
        return sum(1 for c in counts if c > 0) / len(counts)


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# REDUCTION
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def principal_directions(X, target_dim):
    '''
    Top `target_dim` principal axes as columns, largest variance first, each
    with its largest-magnitude component positive, and their variances.
    '''
    pca = PCA(n_components=target_dim, svd_solver="full").fit(X)
    directions = pca.components_.T
    pivots = np.argmax(np.abs(directions), axis=0)
    signs = np.sign(directions[pivots, np.arange(directions.shape[1])])
    signs[signs == 0] = 1.0
    return directions * signs, pca.explained_variance_


def reduce(activations, target_dim=2, seed=0, method="pca"):
    '''
    Project activations to `target_dim` dimensions.

    Parameters
    ----------
    activations: numpy.array
       (n, width) matrix.
    target_dim: int
       2 or 3.
    seed: int
       Only used by the stochastic embedding.
    method: str
       "pca" (deterministic principal directions) or "tsne".

    Returns
    -------
    reduced: numpy.array
       (n, target_dim).
    '''
    X = np.asarray(activations, dtype=float)
    if target_dim not in (2, 3):
        raise ContractError(f"target dimension must be 2 or 3, got {target_dim}")
    if method not in REDUCE_METHODS:
        raise ContractError(f"unknown reduction '{method}', expected one of {REDUCE_METHODS}")
    if X.ndim != 2 or len(X) < target_dim:
        raise ContractError(f"need at least {target_dim} rows to reduce to {target_dim} dimensions")
    if np.all(X.var(axis=0) == 0):
        warning("Activations have zero variance, reduced coordinates are all zero")
        return np.zeros((len(X), target_dim))

    if method == "tsne":
        perplexity = min(30.0, max(1.0, (len(X) - 1) / 3.0))
        return TSNE(n_components=target_dim, perplexity=perplexity, init="pca",
                    random_state=seed).fit_transform(X)

    directions, _ = principal_directions(X, min(target_dim, X.shape[1]))
    reduced = (X - X.mean(axis=0)) @ directions
    if reduced.shape[1] < target_dim:
        reduced = np.hstack([reduced, np.zeros((len(X), target_dim - reduced.shape[1]))])
    return reduced


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# CLUSTERING
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def farthest_point_init(X, k, rng):
    '''
    First centroid drawn from rng, every next one the point farthest from the
    centroids chosen so far (lowest index on ties).
    '''
    chosen = [int(rng.integers(len(X)))]
    nearest = cdist(X, X[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, cdist(X, X[[nxt]], "sqeuclidean")[:, 0])
    return X[chosen].copy()


def kmeans(points, k, seed=0, n_init=KMEANS_N_INIT, max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOLERANCE):
    '''
    Best (lowest inertia, first on ties) of `n_init` Lloyd runs, each from a
    farthest-point start whose first centroid is drawn from the seeded rng.
    '''
    X = np.asarray(points, dtype=float)
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(X) < k:
        raise ContractError(f"k={k} clusters need at least {k} points, got {len(X)}")
    rng = np.random.default_rng(seed)
    best = None
    with warnings.catch_warnings():
        # duplicated points can leave fewer distinct clusters than k
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(max(1, n_init)):
            fitted = KMeans(n_clusters=k, init=farthest_point_init(X, k, rng), n_init=1, max_iter=max_iter,
                            tol=tol, algorithm="lloyd", random_state=0).fit(X)
            if best is None or fitted.inertia_ < best.inertia:
                best = KMeansResult(fitted.labels_.astype(int), fitted.cluster_centers_, float(fitted.inertia_),
                                    int(fitted.n_iter_))
    return best


def silhouette(points, assignments):
    '''
    Mean silhouette coefficient with Euclidean distances. Points alone in
    their cluster contribute 0.
    '''
    X = np.asarray(points, dtype=float)
    labels = np.asarray(assignments)
    if len(labels) != len(X):
        raise ContractError(f"{len(X)} points but {len(labels)} assignments")
    nLabels = len(np.unique(labels))
    if nLabels < 2:
        raise ContractError("silhouette needs at least two non-empty clusters")
    if nLabels == len(X):
        return 0.0
    return float(silhouette_score(X, labels, metric="euclidean"))


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# ANALYSIS
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def select_benign_predicted(model, X, tags):
    '''
    Rows (and their tags) that the model classifies as benign.
    '''
    X = np.asarray(X, dtype=float)
    tags = np.asarray(tags)
    mask = predict_classes(model, X) == model.benign_index
    info(f"{int(mask.sum())} of {len(X)} rows predicted benign")
    return X[mask], tags[mask]


def analyze(model, rows, tags, seed=0, target_dim=2, method="pca", k_values=K_RANGE, max_points=4000):
    '''
    Reduce the last-hidden-layer activations of `rows`, cluster for every k
    and tabulate silhouettes and the tag composition of each cluster.

    Parameters
    ----------
    model: IdsModel
    rows: numpy.array
       Feature rows the model predicted benign.
    tags: sequence of str
       Ground truth per row, "benign" or "triggered".
    max_points: int
       Larger inputs are subsampled (seeded) to this many rows.

    Returns
    -------
    analysis: ClusterAnalysis
    '''
    rows = np.asarray(rows, dtype=float)
    tags = np.asarray(tags).astype(str)
    if len(rows) < MIN_ANALYSIS_ROWS:
        raise AnalysisRefusedError(f"cluster analysis needs at least {MIN_ANALYSIS_ROWS} rows, got {len(rows)}")
    if len(tags) != len(rows):
        raise ContractError(f"{len(rows)} rows but {len(tags)} tags")
    rng = np.random.default_rng(seed)
    if max_points and len(rows) > max_points:
        keep = np.sort(rng.choice(len(rows), size=max_points, replace=False))
        rows, tags = rows[keep], tags[keep]
        info(f"Subsampled to {max_points} rows for clustering")

    points = reduce(hidden_activations(model, rows), target_dim, seed=seed, method=method)
    analysis = ClusterAnalysis(points=points, tags=tags, n_rows=len(rows))
    tagNames = sorted(set(tags) | {TAG_BENIGN, TAG_TRIGGERED})
    for k in k_values:
        if k > len(points):
            continue
        result = kmeans(points, k, seed=seed)
        analysis.assignments[k] = result.assignments
        if len(np.unique(result.assignments)) < 2:
            analysis.silhouettes[k] = 0.0
        else:
            analysis.silhouettes[k] = silhouette(points, result.assignments)
        analysis.composition[k] = [
            {t: int(np.sum((result.assignments == c) & (tags == t))) for t in tagNames}
            for c in range(k)]
        info(f"k={k}: silhouette {analysis.silhouettes[k]:.4f}")
    return analysis


def write_cluster_points(analysis, path):
    '''
    dim_0..dim_{d-1}, cluster_k<k> per k, tag; one line per analysed row.
    '''
    ks = sorted(analysis.assignments)
    header = [f"dim_{i}" for i in range(analysis.points.shape[1])] + [f"cluster_k{k}" for k in ks] + ["tag"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i, point in enumerate(analysis.points):
            writer.writerow([repr(float(v)) for v in point]
                            + [int(analysis.assignments[k][i]) for k in ks]
                            + [analysis.tags[i]])
    info(f"Writing cluster points: {path}")

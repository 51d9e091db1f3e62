"""Statistical alignment metrics between two embedding sets.

Implements the standard second-order suite: HSIC / CKA on (optionally RBF)
kernels, the mutual-kNN-masked local variant CKNNA, canonical correlation
analysis with linear or RBF kernel PCA preprocessing, and SVCCA. All scores
compare an image view V (n x d_v) against a text view L (n x d_l) with rows
paired by sample.

Conventions that the contracts pin down:

* Kernels are centered with H = I - (1/n) 11^T; HSIC(K, L) = tr(Kc Lc)/(n-1)^2.
* CKNNA's cross term is masked by mutual k-nearest neighborhood of both
  views; each normalization term is masked by its own view's kNN graph.
  Self-pairs enter every sum weighted by the row's neighborhood density, so
  the k = n-1 score reproduces CKA exactly while small-k scores stay driven
  by neighborhood agreement (independent views score near zero).
* CCA adds ridge 1e-8 * mean(diag) to each covariance block and reports
  singular values of the whitened cross-covariance, clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InvalidInput
from .numkit import Matrix, as_matrix, center_columns, svd, sym_eig

KERNEL_KINDS = ("linear", "rbf")


def median_heuristic_gamma(x: Matrix) -> float:
    """1 / (2 * median pairwise squared distance); fallback 1.0 if degenerate."""
    m = as_matrix(x)
    sq = _pairwise_sqdist(m)
    off = sq[~np.eye(m.shape[0], dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    if med <= 0.0:
        return 1.0
    return 1.0 / (2.0 * med)


def _pairwise_sqdist(x: Matrix) -> Matrix:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d, 0.0)


def gram(x: Matrix, kind: str = "linear", gamma: float | None = None) -> Matrix:
    """Kernel matrix of the rows of x: K = X X^T or exp(-gamma ||xi - xj||^2)."""
    m = as_matrix(x)
    if kind == "linear":
        k = m @ m.T
        return (k + k.T) / 2.0
    if kind == "rbf":
        if gamma is None:
            gamma = median_heuristic_gamma(m)
        if gamma <= 0:
            raise InvalidInput(f"rbf gamma must be > 0, got {gamma}")
        return np.exp(-gamma * _pairwise_sqdist(m))
    raise InvalidInput(f"unknown kernel kind {kind!r}")


def _check_symmetric(k: Matrix, tol: float = 1e-10) -> Matrix:
    m = as_matrix(k, "kernel")
    if m.shape[0] != m.shape[1]:
        raise InvalidInput(f"kernel must be square, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max())) if m.size else 1.0
    if m.size and float(np.abs(m - m.T).max()) > tol * scale:
        raise InvalidInput("kernel is asymmetric beyond tolerance")
    return m


def center_gram(k: Matrix) -> Matrix:
    """H K H with H = I - (1/n) 11^T; row and column sums become zero."""
    m = _check_symmetric(k)
    row = m.mean(axis=1, keepdims=True)
    col = m.mean(axis=0, keepdims=True)
    return m - row - col + m.mean()


def hsic(k: Matrix, l: Matrix) -> float:
    """tr(Kc Lc) / (n-1)^2 over the centered kernels."""
    kk = _check_symmetric(k)
    ll = _check_symmetric(l)
    if kk.shape != ll.shape:
        raise InvalidInput(f"kernel sizes differ: {kk.shape} vs {ll.shape}")
    n = kk.shape[0]
    if n < 2:
        raise InvalidInput("hsic needs at least 2 samples")
    kc = center_gram(kk)
    lc = center_gram(ll)
    return float(np.sum(kc * lc) / (n - 1) ** 2)


def cka(x: Matrix, y: Matrix, kind: str = "linear", gamma: float | None = None) -> float:
    """HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L)); in [0, 1] for PSD kernels."""
    xm = as_matrix(x, "x")
    ym = as_matrix(y, "y")
    if xm.shape[0] != ym.shape[0]:
        raise InvalidInput("x and y must have the same number of rows")
    k = gram(xm, kind, gamma)
    l = gram(ym, kind, gamma)
    kk = hsic(k, k)
    ll = hsic(l, l)
    if kk <= 0.0 or ll <= 0.0:
        raise DegenerateInput("zero-variance input: HSIC self-term vanishes")
    return float(hsic(k, l) / np.sqrt(kk * ll))


def _knn_sets(sim: Matrix, k: int) -> Matrix:
    """Boolean n x n: row i marks i's k most similar j != i (stable order)."""
    n = sim.shape[0]
    s = sim.copy()
    np.fill_diagonal(s, -np.inf)
    # stable argsort on descending similarity keeps ties deterministic
    order = np.argsort(-s, axis=1, kind="stable")
    mask = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    mask[rows, order[:, :k].ravel()] = True
    return mask


def mutual_knn_mask(v: Matrix, lm: Matrix, k: int, similarity: str = "inner") -> Matrix:
    """mask(i, j) = 1 iff j in kNN(v_i) and j in kNN(l_i) and i != j.

    Neighbors ranked by kernel similarity: raw inner products by default,
    cosine when ``similarity="cosine"``.
    """
    vm = as_matrix(v, "v")
    lmm = as_matrix(lm, "lm")
    n = vm.shape[0]
    if lmm.shape[0] != n:
        raise InvalidInput("views must have the same number of rows")
    if not 1 <= k <= n - 1:
        raise InvalidInput(f"k must be in [1, n-1], got k={k}, n={n}")
    vn, ln = _normalized_views(vm, lmm, similarity)
    return _knn_sets(vn @ vn.T, k) & _knn_sets(ln @ ln.T, k)


def _normalized_views(v, lm, similarity):
    if similarity == "cosine":
        v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-30)
        lm = lm / np.maximum(np.linalg.norm(lm, axis=1, keepdims=True), 1e-30)
    elif similarity != "inner":
        raise InvalidInput(f"unknown similarity {similarity!r}")
    return v, lm


def _align_local(a_c: Matrix, b_c: Matrix, mask: Matrix) -> float:
    """Masked centered-similarity sum with density-weighted self-pairs.

    Each off-diagonal pair contributes when masked; the self-pair of row i
    contributes with weight |neighbors(i)| / (n-1). A full mask therefore
    reproduces the complete double sum (including the diagonal), which is
    what makes the k = n-1 score collapse to the global one exactly, while
    sparse masks keep the self-pairs from dominating.
    """
    n = mask.shape[0]
    w = mask.astype(np.float64)
    w[np.arange(n), np.arange(n)] = mask.sum(axis=1) / (n - 1)
    return float(np.sum(w * a_c * b_c))


def cknna(v: Matrix, lm: Matrix, k: int, similarity: str = "inner") -> float:
    """CKA restricted to k-nearest-neighbor structure of the two views.

    The cross term sums centered-similarity products over pairs that are
    mutual k-nearest neighbors in both views; each normalization term sums
    over its own view's kNN pairs. All three sums add density-weighted
    self-pairs (see _align_local), so cknna(v, lm, n-1) == cka(v, lm) holds
    exactly and cknna(v, v, k) == 1 for every valid k.
    """
    vm = as_matrix(v, "v")
    lmm = as_matrix(lm, "lm")
    n = vm.shape[0]
    if lmm.shape[0] != n:
        raise InvalidInput("views must have the same number of rows")
    if not 1 <= k <= n - 1:
        raise InvalidInput(f"k must be in [1, n-1], got k={k}, n={n}")
    vn, ln = _normalized_views(vm, lmm, similarity)
    nn_v = _knn_sets(vn @ vn.T, k)
    nn_l = _knn_sets(ln @ ln.T, k)
    mutual = nn_v & nn_l
    if not mutual.any():
        raise DegenerateInput("mutual kNN mask is empty")
    kc = center_gram(gram(vm))
    lc = center_gram(gram(lmm))
    num = _align_local(kc, lc, mutual)
    dk = _align_local(kc, kc, nn_v)
    dl = _align_local(lc, lc, nn_l)
    if dk <= 0.0 or dl <= 0.0:
        raise DegenerateInput("masked self-alignment vanishes")
    return num / float(np.sqrt(dk * dl))


def _fix_signs(components: Matrix) -> Matrix:
    """Make the largest-magnitude coordinate of each component positive."""
    out = components.copy()
    for i in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


def pca_reduce(x: Matrix, r: int) -> Matrix:
    """Project rows of x onto the top-r principal components of centered x."""
    xm = as_matrix(x)
    n, d = xm.shape
    if not 1 <= r <= min(n - 1, d):
        raise InvalidInput(f"r must be in [1, min(rows-1, cols)] = [1, {min(n - 1, d)}]")
    xc = center_columns(xm)
    _, _, vt = svd(xc)
    comps = _fix_signs(vt[:r])
    return xc @ comps.T


def kpca_reduce(x: Matrix, r: int, gamma: float | None = None) -> Matrix:
    """Top-r kernel-PCA scores of the centered RBF kernel of x.

    Column i is sqrt(lambda_i) * u_i, i.e. the centered kernel projected on
    its i-th eigenvector scaled by 1/sqrt(lambda_i).
    """
    xm = as_matrix(x)
    n = xm.shape[0]
    if not 1 <= r <= n - 1:
        raise InvalidInput(f"r must be in [1, rows-1] = [1, {n - 1}]")
    kc = center_gram(gram(xm, "rbf", gamma))
    evals, evecs = sym_eig(kc)
    top = evals[:r]
    if top[-1] <= max(evals[0], 1.0) * 1e-12:
        raise DegenerateInput(f"centered kernel has rank < {r}")
    scores = evecs[:, :r] * np.sqrt(top)
    return _fix_signs(scores.T).T


def _inv_sqrt_psd(s: Matrix) -> Matrix:
    evals, evecs = sym_eig(s)
    if evals[-1] <= 0:
        raise DegenerateInput("covariance block not positive definite after ridge")
    return (evecs / np.sqrt(evals)) @ evecs.T


def cca(x: Matrix, y: Matrix, k: int | None = None, ridge_scale: float = 1e-8) -> np.ndarray:
    """Canonical correlations (descending, in [0, 1]) between the two views.

    Whitened cross-covariance SVD: singular values of
    Sxx^-1/2 Sxy Syy^-1/2 with ridge ridge_scale * mean(diag) on Sxx, Syy.
    The first entry is the usual single-number alignment score.
    """
    xm = as_matrix(x, "x")
    ym = as_matrix(y, "y")
    n = xm.shape[0]
    if ym.shape[0] != n:
        raise InvalidInput("views must have the same number of rows")
    if n < 3:
        raise InvalidInput(f"cca needs at least 3 samples, got {n}")
    dmin = min(xm.shape[1], ym.shape[1])
    if k is None:
        k = dmin
    if not 1 <= k <= dmin:
        raise InvalidInput(f"k must be in [1, {dmin}], got {k}")
    xc = center_columns(xm)
    yc = center_columns(ym)
    sxx = xc.T @ xc / n
    syy = yc.T @ yc / n
    sxy = xc.T @ yc / n
    for s in (sxx, syy):
        dim = s.shape[0]
        s[np.diag_indices(dim)] += ridge_scale * (np.trace(s) / dim)
    t = _inv_sqrt_psd(sxx) @ sxy @ _inv_sqrt_psd(syy)
    _, sing, _ = svd(t)
    return np.clip(sing[:k], 0.0, 1.0)


def svcca(x: Matrix, y: Matrix, eta: float = 0.99, k: int = 10) -> float:
    """SVD-truncate each view to explain >= eta of variance, then mean
    of the top min(r_x, r_y, k) canonical correlations."""
    xm = as_matrix(x, "x")
    ym = as_matrix(y, "y")
    if not 0 < eta <= 1:
        raise InvalidInput(f"eta must be in (0, 1], got {eta}")
    if k < 1:
        raise InvalidInput("k must be >= 1")

    def truncate(m: Matrix) -> Matrix:
        mc = center_columns(m)
        u, s, _ = svd(mc)
        energy = s * s
        total = energy.sum()
        if total <= 0:
            raise DegenerateInput("zero-variance view")
        keep = int(np.searchsorted(np.cumsum(energy) / total, eta) + 1)
        keep = min(keep, len(s))
        return u[:, :keep] * s[:keep]

    xh = truncate(xm)
    yh = truncate(ym)
    corrs = cca(xh, yh, k=min(xh.shape[1], yh.shape[1]))
    top = min(xh.shape[1], yh.shape[1], k)
    return float(np.mean(corrs[:top]))


@dataclass
class MetricConfig:
    """Defaults for the three-setting alignment report."""

    pca_r: int = 50
    cca_ridge: float = 1e-8
    svcca_eta: float = 0.99
    svcca_k: int = 10
    knn_k: int = 10
    kernel: str = "linear"
    rbf_gamma: float | None = None
    knn_similarity: str = "inner"

    def to_dict(self) -> dict:
        return {
            "pca_r": self.pca_r,
            "cca_ridge": self.cca_ridge,
            "svcca_eta": self.svcca_eta,
            "svcca_k": self.svcca_k,
            "knn_k": self.knn_k,
            "kernel": self.kernel,
            "rbf_gamma": self.rbf_gamma,
            "knn_similarity": self.knn_similarity,
        }


METRIC_NAMES = ("cca_linear", "cca_kernel", "cka", "svcca", "cknna")

SETTING_MATCH = "match"
SETTING_EASY = "easy_nonmatch"
SETTING_HARD = "hard_nonmatch"


@dataclass
class AlignmentReport:
    """Metric grid over the match / easy non-match / hard non-match settings."""

    scores: dict
    config: dict
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scores": self.scores, "config": self.config, "errors": self.errors}


def _metric_cell(name: str, v: Matrix, l: Matrix, cfg: MetricConfig) -> float:
    n = v.shape[0]
    if name == "cca_linear":
        r = min(cfg.pca_r, n - 1, v.shape[1], l.shape[1])
        return float(cca(pca_reduce(v, r), pca_reduce(l, r), ridge_scale=cfg.cca_ridge)[0])
    if name == "cca_kernel":
        r = min(cfg.pca_r, n - 1)
        return float(
            cca(
                kpca_reduce(v, r, cfg.rbf_gamma),
                kpca_reduce(l, r, cfg.rbf_gamma),
                ridge_scale=cfg.cca_ridge,
            )[0]
        )
    if name == "cka":
        return cka(v, l, cfg.kernel, cfg.rbf_gamma)
    if name == "svcca":
        return svcca(v, l, cfg.svcca_eta, cfg.svcca_k)
    if name == "cknna":
        return cknna(v, l, cfg.knn_k, cfg.knn_similarity)
    raise InvalidInput(f"unknown metric {name!r}")


def compute_setting_scores(v: Matrix, l: Matrix, cfg: MetricConfig, tolerant: bool = False):
    """All metric cells for one (images, texts) pairing.

    Returns (scores, errors); with ``tolerant`` a failing cell is recorded in
    ``errors`` instead of propagating.
    """
    scores, errors = {}, {}
    for name in METRIC_NAMES:
        if tolerant:
            try:
                scores[name] = _metric_cell(name, v, l, cfg)
            except (InvalidInput, DegenerateInput) as exc:
                errors[name] = str(exc)
        else:
            scores[name] = _metric_cell(name, v, l, cfg)
    return scores, errors


def alignment_report(
    v: Matrix,
    l_match: Matrix,
    l_easy: Matrix | None,
    l_hard: Matrix,
    cfg: MetricConfig | None = None,
) -> AlignmentReport:
    """Full metric grid; each setting pairs the same images with a text set.

    Metric errors propagate. Pass ``l_easy=None`` to skip that setting.
    """
    cfg = cfg or MetricConfig()
    vm = as_matrix(v, "v")
    settings = {SETTING_MATCH: l_match, SETTING_HARD: l_hard}
    if l_easy is not None:
        settings[SETTING_EASY] = l_easy
    scores = {}
    for name, l in settings.items():
        lm = as_matrix(l, name)
        if lm.shape[0] != vm.shape[0]:
            raise InvalidInput(f"{name}: row count differs from images")
        scores[name], _ = compute_setting_scores(vm, lm, cfg)
    return AlignmentReport(scores=scores, config=cfg.to_dict())

"""Composite objectives F = (1/n) sum_i f_i + psi and their oracles.

Smooth parts are finite sums exposing value / gradient / per-component
oracles; regularizers expose a closed-form proximal operator. ``shift`` wraps
an objective with the quadratic perturbation (kappa/2)||x - y||^2 that the
outer acceleration loop minimizes at each iteration.

All objects are immutable after construction and every oracle is pure, so
they can be shared freely between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "OracleError",
    "LabeledDataset",
    "Regularizer",
    "prox",
    "SmoothSum",
    "LogisticSum",
    "QuadraticSum",
    "ShiftedSum",
    "CompositeObjective",
    "ShiftedObjective",
    "shift",
    "logistic_value",
    "component_gradient",
    "logistic_objective",
]

DENSE_MAX_FEATURES = 64


class OracleError(ValueError):
    """Invalid oracle input: wrong dimension, bad index, NaN or Inf."""


def _check_vector(x, p, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != p:
        raise OracleError(f"{name} must have shape ({p},), got {x.shape}")
    if not np.isfinite(x).all():
        raise OracleError(f"{name} contains NaN or Inf")
    return x


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Binary classification data: ``features`` (n x p) and labels in {-1, +1}.

    Features may be a dense array or any scipy sparse matrix; sparse input is
    kept as CSR. Use :meth:`csr_arrays` for the raw (indptr, indices, data)
    view shared by the compiled kernels.
    """

    features: np.ndarray | sp.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        feats = self.features
        if sp.issparse(feats):
            feats = sp.csr_matrix(feats, dtype=float)
            feats.sort_indices()
        else:
            feats = np.array(feats, dtype=float)
            if feats.ndim != 2:
                raise ValueError("features must be a 2-d array")
        labels = np.asarray(self.labels, dtype=float).ravel()
        n, p = feats.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
        if labels.shape[0] != n:
            raise ValueError(f"{labels.shape[0]} labels for {n} rows")
        if not np.all((labels == 1.0) | (labels == -1.0)):
            raise ValueError("labels must be in {-1, +1}")
        data = feats.data if sp.issparse(feats) else feats
        if not np.isfinite(data).all():
            raise ValueError("features contain NaN or Inf")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.features)

    def row_norms_sq(self) -> np.ndarray:
        if self.is_sparse:
            return np.asarray(self.features.multiply(self.features).sum(axis=1)).ravel()
        return np.einsum("ij,ij->i", self.features, self.features)

    def csr_arrays(self):
        """Return ``(indptr, indices, data)`` of the CSR form of the features."""
        csr = self.features if self.is_sparse else sp.csr_matrix(self.features)
        return (
            np.ascontiguousarray(csr.indptr, dtype=np.int64),
            np.ascontiguousarray(csr.indices, dtype=np.int64),
            np.ascontiguousarray(csr.data, dtype=float),
        )

    def matvec(self, x):
        return self.features @ x

    def rmatvec(self, v):
        return self.features.T @ v


# ---------------------------------------------------------------------------
# regularizers


@dataclass(frozen=True)
class Regularizer:
    """psi(x) = l1 * ||x||_1 + (l2 / 2) * ||x||^2.

    The four supported variants (zero, L1, squared L2, elastic net) are the
    corners of this two-parameter family; see :attr:`kind`.
    """

    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.l1) and np.isfinite(self.l2)):
            raise ValueError("regularization weights must be finite")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularization weights must be nonnegative")

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def lasso(cls, l1):
        return cls(l1=l1)

    @classmethod
    def ridge(cls, l2):
        return cls(l2=l2)

    @classmethod
    def elastic_net(cls, l1, l2):
        return cls(l1=l1, l2=l2)

    @property
    def kind(self) -> str:
        if self.l1 > 0 and self.l2 > 0:
            return "elastic_net"
        if self.l1 > 0:
            return "l1"
        if self.l2 > 0:
            return "squared_l2"
        return "zero"

    @property
    def strong_convexity(self) -> float:
        return self.l2

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        out = 0.0
        if self.l1:
            out += self.l1 * np.abs(x).sum()
        if self.l2:
            out += 0.5 * self.l2 * float(x @ x)
        return out

    def prox(self, z, step):
        return prox(self, z, step)


def prox(reg: Regularizer, z, step: float):
    """argmin_u { step * psi(u) + 0.5 * ||u - z||^2 }.

    Soft-thresholding at ``step * l1`` followed by shrinkage by
    ``1 / (1 + step * l2)``; the two commute into the exact elastic-net prox.
    """
    if not step > 0:
        raise OracleError(f"prox step must be positive, got {step}")
    z = np.asarray(z, dtype=float)
    if not np.isfinite(z).all():
        raise OracleError("prox input contains NaN or Inf")
    out = z
    if reg.l1:
        t = step * reg.l1
        out = np.sign(out) * np.maximum(np.abs(out) - t, 0.0)
    if reg.l2:
        out = out / (1.0 + step * reg.l2)
    if out is z:
        out = z.copy()
    return out


# ---------------------------------------------------------------------------
# smooth finite sums


class SmoothSum:
    """f(x) = (1/n) sum_i f_i(x) with every f_i mu-strongly convex and L-smooth.

    Subclasses implement the per-component oracles and may override the
    vectorized full-sum versions. ``a1_zero`` flags sums whose components all
    satisfy f_i(x) >= (mu/2)||x||^2, which permits the all-zero lower-bound
    initialization of MISO-Prox.
    """

    n: int
    p: int
    L: float
    mu: float
    a1_zero: bool = False

    def _check_index(self, i):
        if not (0 <= i < self.n):
            raise OracleError(f"component index {i} out of range [0, {self.n})")

    def component_value(self, i, x) -> float:
        raise NotImplementedError

    def component_grad(self, i, x) -> np.ndarray:
        raise NotImplementedError

    def component_values(self, x) -> np.ndarray:
        x = _check_vector(x, self.p)
        return np.array([self.component_value(i, x) for i in range(self.n)])

    def value(self, x) -> float:
        return float(np.mean(self.component_values(x)))

    def grad(self, x) -> np.ndarray:
        x = _check_vector(x, self.p)
        return np.mean([self.component_grad(i, x) for i in range(self.n)], axis=0)


class LogisticSum(SmoothSum):
    """f_i(x) = log(1 + exp(-b_i <a_i, x>)) + (mu_reg / 2) ||x||^2."""

    a1_zero = True

    def __init__(self, dataset: LabeledDataset, mu_reg: float = 0.0):
        if mu_reg < 0 or not np.isfinite(mu_reg):
            raise ValueError("mu_reg must be a nonnegative real")
        self.dataset = dataset
        self.mu_reg = float(mu_reg)
        self.n, self.p = dataset.n, dataset.p
        self.mu = self.mu_reg
        self.L = 0.25 * float(dataset.row_norms_sq().max()) + self.mu_reg
        if not math.isfinite(self.L):
            raise OracleError("smoothness constant overflows; rescale or normalize the features")
        self._indptr, self._indices, self._data = dataset.csr_arrays()
        self._dense = None if dataset.is_sparse else dataset.features

    def _row(self, i):
        if self._dense is not None:
            return None, self._dense[i]
        s, e = self._indptr[i], self._indptr[i + 1]
        return self._indices[s:e], self._data[s:e]

    def component_value(self, i, x):
        self._check_index(i)
        x = _check_vector(x, self.p)
        idx, vals = self._row(i)
        dot = vals @ (x if idx is None else x[idx])
        m = self.dataset.labels[i] * dot
        return float(np.logaddexp(0.0, -m) + 0.5 * self.mu_reg * (x @ x))

    def component_grad(self, i, x):
        self._check_index(i)
        x = _check_vector(x, self.p)
        idx, vals = self._row(i)
        b = self.dataset.labels[i]
        dot = vals @ (x if idx is None else x[idx])
        s = -b * _sigmoid(-b * dot)
        g = self.mu_reg * x
        if idx is None:
            g = g + s * vals
        else:
            g[idx] += s * vals
        return g

    def margins(self, x):
        return self.dataset.labels * self.dataset.matvec(x)

    def component_values(self, x):
        x = _check_vector(x, self.p)
        return np.logaddexp(0.0, -self.margins(x)) + 0.5 * self.mu_reg * (x @ x)

    def value(self, x):
        x = _check_vector(x, self.p)
        return float(np.mean(np.logaddexp(0.0, -self.margins(x))) + 0.5 * self.mu_reg * (x @ x))

    def grad(self, x):
        x = _check_vector(x, self.p)
        b = self.dataset.labels
        s = -b * _sigmoid(-self.margins(x))
        return np.asarray(self.dataset.rmatvec(s)).ravel() / self.n + self.mu_reg * x

    def hessian(self, x):
        """Dense p x p Hessian of the mean; used by the F* oracle."""
        x = _check_vector(x, self.p)
        sig = _sigmoid(self.margins(x))
        w = sig * (1.0 - sig) / self.n
        A = self.dataset.features
        if sp.issparse(A):
            H = (A.T @ sp.diags(w) @ A).toarray()
        else:
            H = (A * w[:, None]).T @ A
        return H + self.mu_reg * np.eye(self.p)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


class QuadraticSum(SmoothSum):
    """f_i(x) = 0.5 * sum_j h_ij (x_j - c_ij)^2 with positive curvatures h.

    Per-coordinate curvatures make conditioning easy to control while keeping
    the minimizer in closed form: x*_j = sum_i h_ij c_ij / sum_i h_ij.
    """

    def __init__(self, centers, curvatures=None):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if curvatures is None:
            curvatures = np.ones_like(centers)
        curvatures = np.broadcast_to(np.asarray(curvatures, dtype=float), centers.shape).copy()
        if not (curvatures > 0).all():
            raise ValueError("curvatures must be positive")
        if not (np.isfinite(centers).all() and np.isfinite(curvatures).all()):
            raise ValueError("centers and curvatures must be finite")
        self.centers, self.curvatures = centers, curvatures
        self.n, self.p = centers.shape
        self.L = float(curvatures.max())
        self.mu = float(curvatures.min())

    def minimizer(self):
        h = self.curvatures
        return (h * self.centers).sum(axis=0) / h.sum(axis=0)

    def component_value(self, i, x):
        self._check_index(i)
        x = _check_vector(x, self.p)
        d = x - self.centers[i]
        return float(0.5 * (self.curvatures[i] * d) @ d)

    def component_grad(self, i, x):
        self._check_index(i)
        x = _check_vector(x, self.p)
        return self.curvatures[i] * (x - self.centers[i])

    def component_values(self, x):
        x = _check_vector(x, self.p)
        d = x[None, :] - self.centers
        return 0.5 * (self.curvatures * d * d).sum(axis=1)

    def grad(self, x):
        x = _check_vector(x, self.p)
        return (self.curvatures * (x[None, :] - self.centers)).mean(axis=0)


class ShiftedSum(SmoothSum):
    """Components f_i(x) + (kappa/2)||x - y||^2 of a base smooth sum."""

    def __init__(self, base: SmoothSum, center, kappa: float):
        if not kappa > 0 or not np.isfinite(kappa):
            raise OracleError(f"kappa must be a positive real, got {kappa}")
        self.base = base
        self.center = _check_vector(center, base.p, "center").copy()
        self.center.setflags(write=False)
        self.kappa = float(kappa)
        self.n, self.p = base.n, base.p
        self.L = base.L + self.kappa
        self.mu = base.mu + self.kappa

    def _quad(self, x):
        d = x - self.center
        return 0.5 * self.kappa * float(d @ d)

    def component_value(self, i, x):
        x = _check_vector(x, self.p)
        return self.base.component_value(i, x) + self._quad(x)

    def component_grad(self, i, x):
        x = _check_vector(x, self.p)
        return self.base.component_grad(i, x) + self.kappa * (x - self.center)

    def component_values(self, x):
        x = _check_vector(x, self.p)
        return self.base.component_values(x) + self._quad(x)

    def value(self, x):
        x = _check_vector(x, self.p)
        return self.base.value(x) + self._quad(x)

    def grad(self, x):
        x = _check_vector(x, self.p)
        return self.base.grad(x) + self.kappa * (x - self.center)


# ---------------------------------------------------------------------------
# composite objectives


@dataclass(frozen=True, eq=False)
class CompositeObjective:
    """F(x) = f(x) + psi(x).

    ``mu`` credits the squared-L2 weight of psi to the strong convexity of F;
    ``L`` is the gradient Lipschitz constant of f plus that same weight.
    Solvers take their step sizes from ``smooth`` alone.
    """

    smooth: SmoothSum
    psi: Regularizer = field(default_factory=Regularizer)

    @property
    def n(self):
        return self.smooth.n

    @property
    def p(self):
        return self.smooth.p

    @property
    def mu(self):
        return self.smooth.mu + self.psi.l2

    @property
    def L(self):
        return self.smooth.L + self.psi.l2

    def value(self, x) -> float:
        x = _check_vector(x, self.p)
        return self.smooth.value(x) + self.psi.value(x)

    def smooth_grad(self, x):
        return self.smooth.grad(x)

    def component_grad(self, i, x):
        return self.smooth.component_grad(i, x)

    def prox(self, z, step):
        return prox(self.psi, z, step)


class ShiftedObjective(CompositeObjective):
    """G(x) = F(x) + (kappa/2)||x - y||^2, built by :func:`shift`."""

    def __init__(self, base: CompositeObjective, center, kappa: float):
        super().__init__(ShiftedSum(base.smooth, center, kappa), base.psi)
        object.__setattr__(self, "base", base)

    @property
    def center(self):
        return self.smooth.center

    @property
    def kappa(self):
        return self.smooth.kappa


def shift(obj: CompositeObjective, y, kappa: float) -> ShiftedObjective:
    """Return G(x) = F(x) + (kappa/2)||x - y||^2 (kappa > 0)."""
    return ShiftedObjective(obj, y, kappa)


def logistic_value(dataset: LabeledDataset, x, mu_reg: float = 0.0) -> float:
    """(1/n) sum_i log(1 + exp(-b_i <a_i, x>)) + (mu_reg/2)||x||^2."""
    return LogisticSum(dataset, mu_reg).value(x)


def component_gradient(obj: CompositeObjective, i: int, x) -> np.ndarray:
    return obj.smooth.component_grad(i, x)


def logistic_objective(dataset: LabeledDataset, mu: float = 0.0, l1: float = 0.0):
    """l2-regularized (optionally l1-penalized) logistic regression.

    The ridge term is folded into the smooth part so that every component is
    ``mu``-strongly convex; the L1 weight goes to psi.
    """
    return CompositeObjective(LogisticSum(dataset, mu), Regularizer(l1=l1))

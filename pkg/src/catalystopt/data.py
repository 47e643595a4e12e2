"""libsvm text I/O, row normalization and seeded synthetic logistic data.

Synthetic data is drawn from ``numpy.random.Generator(numpy.random.Philox(seed))``,
a counter-based generator whose streams do not depend on the platform.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .problem import DENSE_MAX_FEATURES, LabeledDataset

__all__ = [
    "LibsvmError",
    "LibsvmRecord",
    "parse_libsvm",
    "parse_libsvm_records",
    "load_libsvm",
    "write_libsvm",
    "normalize_rows",
    "SyntheticSpec",
    "parse_synthetic_spec",
    "synth_logistic",
]


class LibsvmError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class LibsvmRecord:
    label: float
    entries: tuple  # ((1-based index, value), ...), strictly increasing


def _map_label(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise LibsvmError(lineno, f"malformed label {tok!r}") from None
    if v == 1.0:
        return 1.0
    if v in (0.0, -1.0):
        return -1.0
    raise LibsvmError(lineno, f"label {tok!r} cannot be mapped to -1/+1")


def parse_libsvm_records(text):
    """Yield ``(lineno, LibsvmRecord)`` for every data line of ``text`` (str or text stream)."""
    stream = io.StringIO(text) if isinstance(text, str) else text
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        label = _map_label(toks[0], lineno)
        entries = []
        last = 0
        for tok in toks[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise LibsvmError(lineno, f"malformed token {tok!r}")
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise LibsvmError(lineno, f"malformed token {tok!r}") from None
            if j < 1:
                raise LibsvmError(lineno, f"feature index must be >= 1, got {j}")
            if j == last:
                raise LibsvmError(lineno, f"duplicate feature index {j}")
            if j < last:
                raise LibsvmError(lineno, f"feature indices must increase ({j} after {last})")
            if not np.isfinite(v):
                raise LibsvmError(lineno, f"non-finite value in {tok!r}")
            entries.append((j, v))
            last = j
        yield lineno, LibsvmRecord(label, tuple(entries))


def parse_libsvm(text, n_features=None) -> LabeledDataset:
    """Parse libsvm text into a dataset with 0-based columns.

    ``p`` is the largest index seen unless ``n_features`` is given. Features
    are dense when p <= 64 and CSR otherwise.
    """
    labels, indptr, indices, data = [], [0], [], []
    for lineno, rec in parse_libsvm_records(text):
        labels.append(rec.label)
        for j, v in rec.entries:
            if n_features is not None and j > n_features:
                raise LibsvmError(lineno, f"index {j} exceeds n_features={n_features}")
            indices.append(j - 1)
            data.append(v)
        indptr.append(len(indices))
    if not labels:
        raise ValueError("no data lines found")
    p = n_features if n_features is not None else (max(indices) + 1 if indices else 1)
    X = sp.csr_matrix((np.array(data, dtype=float), np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)), shape=(len(labels), p))
    feats = X.toarray() if p <= DENSE_MAX_FEATURES else X
    return LabeledDataset(feats, np.array(labels))


def load_libsvm(path, n_features=None) -> LabeledDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_libsvm(fh, n_features=n_features)


def write_libsvm(dataset: LabeledDataset) -> str:
    """libsvm text with 1-based indices; values use ``repr`` so parsing is exact."""
    X = sp.csr_matrix(dataset.features)
    X.eliminate_zeros()
    X.sort_indices()
    lines = []
    for i in range(dataset.n):
        s, e = X.indptr[i], X.indptr[i + 1]
        toks = ["+1" if dataset.labels[i] > 0 else "-1"]
        toks += [f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[s:e], X.data[s:e])]
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


def normalize_rows(dataset: LabeledDataset) -> LabeledDataset:
    """Scale every nonzero row to unit Euclidean norm; zero rows are kept."""
    norms = np.sqrt(dataset.row_norms_sq())
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    if dataset.is_sparse:
        feats = sp.diags(scale) @ dataset.features
    else:
        feats = dataset.features * scale[:, None]
    return LabeledDataset(feats, dataset.labels.copy())


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian design with a planted logistic model.

    Column j is scaled by ``feature_decay ** j``, so values below 1 make the
    design (and the logistic Hessian) ill-conditioned. Labels are drawn from
    P(b = +1 | a) = sigmoid(<a, w>) and then flipped with probability
    ``label_noise``.
    """

    n: int
    p: int
    seed: int = 0
    label_noise: float = 0.0
    feature_decay: float = 1.0
    weight_scale: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be >= 1")
        if not 0 <= self.label_noise <= 1:
            raise ValueError("label_noise must lie in [0, 1]")
        if not self.feature_decay > 0:
            raise ValueError("feature_decay must be positive")


_SPEC_KEYS = {"n": int, "p": int, "seed": int, "label_noise": float, "noise": float,
              "feature_decay": float, "decay": float, "weight_scale": float}


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """Parse ``"n=100,p=10,seed=1[,label_noise=0.1,feature_decay=0.8]"``."""
    kw = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = part.partition("=")
        key = key.strip()
        if not sep or key not in _SPEC_KEYS:
            raise ValueError(f"bad synthetic spec entry {part!r}")
        name = {"noise": "label_noise", "decay": "feature_decay"}.get(key, key)
        kw[name] = _SPEC_KEYS[key](val)
    if "n" not in kw or "p" not in kw:
        raise ValueError("synthetic spec needs n and p")
    return SyntheticSpec(**kw)


def synth_logistic(spec: SyntheticSpec) -> LabeledDataset:
    rng = np.random.Generator(np.random.Philox(spec.seed))
    scales = spec.feature_decay ** np.arange(spec.p)
    A = rng.standard_normal((spec.n, spec.p)) * scales
    w = rng.standard_normal(spec.p) * spec.weight_scale
    t = A @ w
    prob = 0.5 * (1.0 + np.tanh(0.5 * t))
    b = np.where(rng.random(spec.n) < prob, 1.0, -1.0)
    flip = rng.random(spec.n) < spec.label_noise
    b = np.where(flip, -b, b)
    feats = A if spec.p <= DENSE_MAX_FEATURES else sp.csr_matrix(A)
    return LabeledDataset(feats, b)

"""Toy transformer classifier with explicit analytic gradients.

Forward pipeline: token embedding -> single-head scaled dot-product
self-attention -> residual add -> two-layer ReLU feed-forward ->
residual add -> mean pool over the sequence -> affine classifier.
No layer norm, no dropout, no positional signal; the synthetic task
below does not need token order, and a small exact backward pass is
worth more here than architectural completeness.

The synthetic task: sequences of uniform random tokens, labeled by the
most frequent token id with ties going to the smallest id. A model that
learns to pool token histograms solves it, which exercises every weight
matrix on the way.

All parameters live in a ModelParams registry of named tensors. The
backward pass returns gradients keyed by tensor name, with bias
gradients under "<name>.bias". Every analytic gradient is validated
against central finite differences in the test suite.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, DataError, ShapeError

EMBEDDING = "embedding"
ATTENTION = "attention"
FFN = "ffn"
CLASSIFIER = "classifier"
ROLES = (EMBEDDING, ATTENTION, FFN, CLASSIFIER)

# tensor name -> (role, prunable by default); attention and ffn weights
# are fair game, embedding and classifier stay dense unless overridden
LAYOUT = (
    ("embedding", EMBEDDING, False),
    ("Wq", ATTENTION, True),
    ("Wk", ATTENTION, True),
    ("Wv", ATTENTION, True),
    ("Wo", ATTENTION, True),
    ("ffn_in", FFN, True),
    ("ffn_out", FFN, True),
    ("classifier", CLASSIFIER, False),
)


@dataclass
class ArchConfig:
    vocab: int = 8
    dim: int = 16
    heads: int = 1
    ffn: int = 32
    classes: int = 8
    seq_len: int = 16

    def validate(self) -> None:
        for name in ("vocab", "dim", "heads", "ffn", "classes", "seq_len"):
            if getattr(self, name) < 1:
                raise ShapeError(f"architecture field {name} must be positive")
        if self.heads != 1:
            raise ShapeError(
                f"this model is single-head only, got heads={self.heads}"
            )
        if not self.vocab >= self.classes >= 2:
            raise ShapeError(
                f"need vocab >= classes >= 2, got vocab={self.vocab} "
                f"classes={self.classes}"
            )


@dataclass
class WeightTensor:
    matrix: np.ndarray
    role: str
    prunable: bool
    bias: np.ndarray | None = None


class ModelParams:
    """Ordered registry of named weight tensors.

    `version` increments on every mutation (optimizer steps, pruning)
    so cached activations can detect that they are stale.
    """

    def __init__(self, tensors: list[tuple[str, WeightTensor]]):
        names = [n for n, _ in tensors]
        if len(set(names)) != len(names):
            raise ShapeError("tensor names must be unique")
        self._tensors = dict(tensors)
        self.version = 0

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensor(self, name: str) -> WeightTensor:
        if name not in self._tensors:
            raise ShapeError(f"no tensor named {name!r}")
        return self._tensors[name]

    def items(self):
        return self._tensors.items()

    def bump(self) -> None:
        self.version += 1

    def clone(self) -> "ModelParams":
        copies = []
        for name, t in self._tensors.items():
            copies.append(
                (
                    name,
                    WeightTensor(
                        matrix=t.matrix.copy(),
                        role=t.role,
                        prunable=t.prunable,
                        bias=None if t.bias is None else t.bias.copy(),
                    ),
                )
            )
        return ModelParams(copies)


@dataclass
class Batch:
    token_ids: np.ndarray  # (batch, seq_len) ints
    labels: np.ndarray  # (batch,) ints

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.token_ids.ndim != 2 or self.labels.ndim != 1:
            raise DataError(
                f"batch shapes invalid: tokens {self.token_ids.shape}, "
                f"labels {self.labels.shape}"
            )
        if self.token_ids.shape[0] != self.labels.shape[0]:
            raise DataError("token and label counts differ")
        if self.token_ids.size and self.token_ids.min() < 0:
            raise DataError("negative token id")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("negative label")


@dataclass
class ForwardCache:
    """Activations retained for backward; valid for one (params, batch)."""

    token_ids: np.ndarray
    X: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray
    att: np.ndarray
    H1: np.ndarray
    U: np.ndarray
    R: np.ndarray
    P: np.ndarray
    params_ref: ModelParams = field(repr=False)
    params_version: int = 0


def build_model(config: ArchConfig, rng: np.random.Generator,
                prunable_overrides: dict[str, bool] | None = None) -> ModelParams:
    """Initialize all tensors from N(0, 1/fan_in); biases start at zero."""
    config.validate()
    v, d, f, c = config.vocab, config.dim, config.ffn, config.classes
    shapes = {
        "embedding": (v, d),
        "Wq": (d, d),
        "Wk": (d, d),
        "Wv": (d, d),
        "Wo": (d, d),
        "ffn_in": (d, f),
        "ffn_out": (f, d),
        "classifier": (d, c),
    }
    bias_len = {"ffn_in": f, "ffn_out": d, "classifier": c}
    overrides = prunable_overrides or {}
    for name in overrides:
        if name not in shapes:
            raise ShapeError(f"prunable override names unknown tensor {name!r}")
    tensors = []
    for name, role, prunable in LAYOUT:
        rows, cols = shapes[name]
        fan_in = rows if name != "embedding" else d
        matrix = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(rows, cols))
        bias = np.zeros(bias_len[name]) if name in bias_len else None
        tensors.append(
            (
                name,
                WeightTensor(
                    matrix=matrix,
                    role=role,
                    prunable=overrides.get(name, prunable),
                    bias=bias,
                ),
            )
        )
    return ModelParams(tensors)


def _softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ModelParams, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    """batch (B, S) token ids -> logits (B, classes) plus cache."""
    E = params.tensor("embedding").matrix
    toks = batch.token_ids
    if toks.size and toks.max() >= E.shape[0]:
        raise DataError(
            f"token id {int(toks.max())} out of range for vocab {E.shape[0]}"
        )
    d = E.shape[1]
    Wq = params.tensor("Wq").matrix
    Wk = params.tensor("Wk").matrix
    Wv = params.tensor("Wv").matrix
    Wo = params.tensor("Wo").matrix
    fi = params.tensor("ffn_in")
    fo = params.tensor("ffn_out")
    cl = params.tensor("classifier")

    X = E[toks]  # (B, S, d)
    Q = X @ Wq
    K = X @ Wk
    V = X @ Wv
    scores = Q @ K.transpose(0, 2, 1) / np.sqrt(d)
    A = _softmax(scores)
    att = A @ V
    H1 = X + att @ Wo
    U = H1 @ fi.matrix + fi.bias
    R = np.maximum(U, 0.0)
    H2 = H1 + (R @ fo.matrix + fo.bias)
    P = H2.mean(axis=1)  # (B, d)
    logits = P @ cl.matrix + cl.bias
    cache = ForwardCache(
        token_ids=toks, X=X, Q=Q, K=K, V=V, A=A, att=att,
        H1=H1, U=U, R=R, P=P,
        params_ref=params, params_version=params.version,
    )
    return logits, cache


def loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} vs logits {logits.shape}")
    if labels.size and not (0 <= labels.min() and labels.max() < c):
        raise DataError(f"label out of range for {c} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(n), labels]))


def backward(params: ModelParams, cache: ForwardCache,
             labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy for every tensor and bias.

    Keys are tensor names, biases under "<name>.bias".
    """
    if cache.params_ref is not params or cache.params_version != params.version:
        raise ShapeError(
            "stale forward cache: parameters changed since the forward pass"
        )
    labels = np.asarray(labels, dtype=np.int64)
    toks = cache.token_ids
    B, S = toks.shape
    E = params.tensor("embedding").matrix
    d = E.shape[1]
    f = params.tensor("ffn_in").matrix.shape[1]
    Wq = params.tensor("Wq").matrix
    Wk = params.tensor("Wk").matrix
    Wv = params.tensor("Wv").matrix
    Wo = params.tensor("Wo").matrix
    Wi = params.tensor("ffn_in").matrix
    Wf = params.tensor("ffn_out").matrix
    Wc = params.tensor("classifier").matrix

    logits = cache.P @ Wc + params.tensor("classifier").bias
    probs = _softmax(logits)
    dlog = probs.copy()
    dlog[np.arange(B), labels] -= 1.0
    dlog /= B

    g: dict[str, np.ndarray] = {}
    g["classifier"] = cache.P.T @ dlog
    g["classifier.bias"] = dlog.sum(axis=0)
    dP = dlog @ Wc.T
    dH2 = np.repeat(dP[:, None, :], S, axis=1) / S
    dF2 = dH2
    g["ffn_out"] = cache.R.reshape(-1, f).T @ dF2.reshape(-1, d)
    g["ffn_out.bias"] = dF2.sum(axis=(0, 1))
    dR = dF2 @ Wf.T
    dU = dR * (cache.U > 0)
    g["ffn_in"] = cache.H1.reshape(-1, d).T @ dU.reshape(-1, f)
    g["ffn_in.bias"] = dU.sum(axis=(0, 1))
    dH1 = dH2 + dU @ Wi.T
    dO = dH1
    g["Wo"] = cache.att.reshape(-1, d).T @ dO.reshape(-1, d)
    datt = dO @ Wo.T
    dA = datt @ cache.V.transpose(0, 2, 1)
    dV = cache.A.transpose(0, 2, 1) @ datt
    # softmax Jacobian applied row-wise to the attention weights
    ds = cache.A * (dA - (dA * cache.A).sum(axis=-1, keepdims=True))
    dQ = ds @ cache.K / np.sqrt(d)
    dK = ds.transpose(0, 2, 1) @ cache.Q / np.sqrt(d)
    g["Wq"] = cache.X.reshape(-1, d).T @ dQ.reshape(-1, d)
    g["Wk"] = cache.X.reshape(-1, d).T @ dK.reshape(-1, d)
    g["Wv"] = cache.X.reshape(-1, d).T @ dV.reshape(-1, d)
    dX = dH1 + dQ @ Wq.T + dK @ Wk.T + dV @ Wv.T
    g["embedding"] = np.zeros_like(E)
    np.add.at(g["embedding"], toks.reshape(-1), dX.reshape(-1, d))
    return g


def loss_and_gradients(params: ModelParams,
                       batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = forward(params, batch)
    value = loss(logits, batch.labels)
    return value, backward(params, cache, batch.labels)


def make_synthetic_dataset(seed: int, n_samples: int, seq_len: int,
                           vocab: int, batch_size: int = 32) -> list[Batch]:
    """Uniform random token sequences labeled by their modal token id.

    Ties go to the smallest id. Deterministic per seed; returned as
    consecutive batches of batch_size (last one may be short).
    """
    if vocab < 2:
        raise DataError(f"vocab must be >= 2, got {vocab}")
    if n_samples < 1 or seq_len < 1 or batch_size < 1:
        raise DataError("n_samples, seq_len, batch_size must be positive")
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, vocab, size=(n_samples, seq_len))
    counts = np.zeros((n_samples, vocab), dtype=np.int64)
    for c in range(vocab):
        counts[:, c] = (toks == c).sum(axis=1)
    labels = counts.argmax(axis=1)  # argmax takes the first max: smallest id
    batches = []
    for lo in range(0, n_samples, batch_size):
        hi = min(lo + batch_size, n_samples)
        batches.append(Batch(token_ids=toks[lo:hi], labels=labels[lo:hi]))
    return batches


def evaluate(params: ModelParams, dataset: list[Batch]) -> float:
    """Fraction of argmax(logits) == label; argmax ties -> smallest index."""
    if not dataset or sum(b.labels.size for b in dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    hits = 0
    total = 0
    for batch in dataset:
        logits, _ = forward(params, batch)
        hits += int((logits.argmax(axis=1) == batch.labels).sum())
        total += batch.labels.size
    return hits / total


# ---------------------------------------------------------------------------
# checkpoint format: manifest.txt plus one .bin per tensor (and per bias),
# little-endian float64, row-major; round-trips must be bit-exact

MANIFEST = "manifest.txt"


def _write_f64(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(path: str, count: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) != 8 * count:
        raise CheckpointError(
            f"{path}: expected {8 * count} bytes, found {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def save_checkpoint(params: ModelParams, out_dir: str,
                    meta: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = ["# blockprune checkpoint v1"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    for name, t in params.items():
        if any(ch.isspace() for ch in name) or "/" in name:
            raise CheckpointError(f"tensor name {name!r} not storable")
        rows, cols = t.matrix.shape
        data_file = f"{name}.bin"
        bias_file = f"{name}.bias.bin" if t.bias is not None else "-"
        lines.append(
            f"{name} {rows} {cols} {t.role} {int(t.prunable)} "
            f"{data_file} {bias_file}"
        )
        _write_f64(os.path.join(out_dir, data_file), t.matrix)
        if t.bias is not None:
            _write_f64(os.path.join(out_dir, bias_file), t.bias)
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(in_dir: str) -> ModelParams:
    manifest = os.path.join(in_dir, MANIFEST)
    if not os.path.exists(manifest):
        raise CheckpointError(f"no manifest at {manifest}")
    tensors = []
    with open(manifest, encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 7:
                raise CheckpointError(
                    f"{manifest}:{lineno}: expected 7 fields, got {len(parts)}"
                )
            name, rows_s, cols_s, role, prunable_s, data_file, bias_file = parts
            try:
                rows, cols = int(rows_s), int(cols_s)
                prunable = bool(int(prunable_s))
            except ValueError:
                raise CheckpointError(
                    f"{manifest}:{lineno}: malformed numeric field"
                ) from None
            if role not in ROLES:
                raise CheckpointError(f"{manifest}:{lineno}: unknown role {role!r}")
            matrix = _read_f64(
                os.path.join(in_dir, data_file), rows * cols
            ).reshape(rows, cols)
            bias = None
            if bias_file != "-":
                bias_path = os.path.join(in_dir, bias_file)
                n_bias = os.path.getsize(bias_path) // 8
                bias = _read_f64(bias_path, n_bias)
            tensors.append(
                (name, WeightTensor(matrix=matrix, role=role,
                                    prunable=prunable, bias=bias))
            )
    return ModelParams(tensors)

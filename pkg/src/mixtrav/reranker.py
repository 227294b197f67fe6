"""Trajectory-feature reranker.

Each candidate is described by three fingerprints of the trajectory that
reached it:

* textual (``tf``): per-step relevance of the expanded query to the step's
  document, left-padded with zeros to three steps, plus the candidate's
  initial semantic score;
* structural (``sf``): the category sequence, left-padded with ``padding``;
* traversal identifiers (``ti``): structural / textual / pad per step.

The scorer concatenates ``sf`` (256), ``tf`` (256) and ``ti`` (3 x 256)
into 1280 features and applies two fully connected layers with a tanh in
between, ending in a two-way softmax. Everything is plain numpy with
hand-written backpropagation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .scoring import Scorer
from .text import expand_query
from .traversal import StepKind, Trajectory

logger = logging.getLogger(__name__)

SLOTS = 3
PAD_CATEGORY = "padding"
UNK_CATEGORY = "<unk>"
TI_TOKENS = ("pad", "structural", "textual")
FEATURE_GROUPS = ("tf", "sf", "ti")
CHECKPOINT_FORMAT = "mixtrav-reranker"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrajectoryFeatures:
    tf: tuple[float, float, float, float]
    sf: tuple[str, str, str]
    ti: tuple[str, str, str]

    @property
    def padding_mask(self) -> tuple[bool, bool, bool]:
        return tuple(t == "pad" for t in self.ti)


def _ti_token(kind: StepKind) -> str:
    return "structural" if kind is StepKind.STRUCTURAL else "textual"


def extract_features(traj: Trajectory, query: str, scorer: Scorer, initial_score: float) -> TrajectoryFeatures:
    """Fixed-width fingerprints of ``traj``; only the last three steps are used."""
    steps = traj.steps[-SLOTS:]
    pad = SLOTS - len(steps)
    tf = [0.0] * pad + [scorer.score(expand_query(query, s.restriction), s.node) for s in steps]
    sf = [PAD_CATEGORY] * pad + [s.category for s in steps]
    ti = ["pad"] * pad + [_ti_token(s.kind) for s in steps]
    return TrajectoryFeatures((*tf, float(initial_score)), tuple(sf), tuple(ti))


@dataclass
class TrainExample:
    query_id: str
    features: TrajectoryFeatures
    label: int
    node: str = ""


class Batch(NamedTuple):
    tf: np.ndarray  # (B, 4)
    sf: np.ndarray  # (B, 3) int
    ti: np.ndarray  # (B, 3) int


PARAM_SHAPES = {
    "tf_w": lambda d, h, v: (4, d),
    "tf_b": lambda d, h, v: (d,),
    "cat_embed": lambda d, h, v: (v, d),
    "sf_w": lambda d, h, v: (d, d),
    "sf_b": lambda d, h, v: (d,),
    "ti_embed": lambda d, h, v: (len(TI_TOKENS), d),
    "w1": lambda d, h, v: (5 * d, h),
    "b1": lambda d, h, v: (h,),
    "w2": lambda d, h, v: (h, 2),
    "b2": lambda d, h, v: (2,),
}
_BRANCH_PARAMS = {"tf": ("tf_w", "tf_b"), "sf": ("cat_embed", "sf_w", "sf_b"), "ti": ("ti_embed",)}


@dataclass
class RerankerModel:
    categories: tuple[str, ...]
    dim: int = 256
    hidden: int = 128
    features: tuple[str, ...] = FEATURE_GROUPS
    seed: int = 0
    activation: str = "tanh"
    params: dict[str, np.ndarray] = field(default_factory=dict)
    # Fixed affine normalization of the raw tf vector, fitted by ``train``.
    tf_shift: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    tf_scale: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        self.tf_shift = tuple(float(v) for v in self.tf_shift)
        self.tf_scale = tuple(float(v) for v in self.tf_scale)
        if len(self.tf_shift) != 4 or len(self.tf_scale) != 4 or min(self.tf_scale) <= 0:
            raise ValueError("tf normalization needs 4 shifts and 4 positive scales")
        self.categories = tuple(sorted(set(self.categories) - {PAD_CATEGORY, UNK_CATEGORY}))
        self.vocab = (PAD_CATEGORY, UNK_CATEGORY) + self.categories
        self._cat_index = {c: k for k, c in enumerate(self.vocab)}
        self.features = tuple(f for f in FEATURE_GROUPS if f in set(self.features))
        if self.activation != "tanh":
            raise ValueError("only the tanh activation is supported")
        if not self.params:
            self.params = self._init_params(np.random.default_rng(self.seed))
        self._check_shapes()

    @classmethod
    def zeros(cls, categories, **kw) -> "RerankerModel":
        m = cls(categories, **kw)
        for p in m.params.values():
            p[...] = 0.0
        return m

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: f(self.dim, self.hidden, len(self.vocab)) for k, f in PARAM_SHAPES.items()}

    def _init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = {}
        for name, shape in self._shapes().items():
            if name.endswith("_b") or name in ("b1", "b2"):
                out[name] = np.zeros(shape)
            elif name.endswith("embed"):
                out[name] = rng.normal(0.0, 0.1, size=shape)
            else:
                out[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        return out

    def _check_shapes(self) -> None:
        for name, shape in self._shapes().items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if tuple(self.params[name].shape) != shape:
                raise ValueError(
                    f"dimension mismatch for {name}: expected {shape}, got {tuple(self.params[name].shape)}"
                )

    def frozen(self) -> set[str]:
        return {p for g, names in _BRANCH_PARAMS.items() if g not in self.features for p in names}

    def copy(self) -> "RerankerModel":
        return RerankerModel(
            self.categories, self.dim, self.hidden, self.features, self.seed, self.activation,
            {k: v.copy() for k, v in self.params.items()}, self.tf_shift, self.tf_scale,
        )

    def encode(self, feats: Sequence[TrajectoryFeatures]) -> Batch:
        unk = self._cat_index[UNK_CATEGORY]
        ti_index = {t: k for k, t in enumerate(TI_TOKENS)}
        tf = np.array([f.tf for f in feats], dtype=np.float64).reshape(len(feats), 4)
        tf = (tf - np.array(self.tf_shift)) / np.array(self.tf_scale)
        sf = np.array([[self._cat_index.get(c, unk) for c in f.sf] for f in feats], dtype=np.int64).reshape(len(feats), SLOTS)
        ti = np.array([[ti_index[t] for t in f.ti] for f in feats], dtype=np.int64).reshape(len(feats), SLOTS)
        return Batch(tf, sf, ti)

    # -- checkpoint -------------------------------------------------------

    def config(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": self.hidden,
            "categories": list(self.categories),
            "features": list(self.features),
            "seed": self.seed,
            "activation": self.activation,
            "tf_shift": list(self.tf_shift),
            "tf_scale": list(self.tf_scale),
        }

    def to_json(self) -> str:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config(),
            "params": {
                k: {"shape": list(self.params[k].shape), "data": self.params[k].ravel().tolist()}
                for k in PARAM_SHAPES
            },
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RerankerModel":
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a reranker checkpoint of a supported version")
        cfg = doc["config"]
        params = {}
        for k, blob in doc["params"].items():
            arr = np.asarray(blob["data"], dtype=np.float64)
            if arr.size != int(np.prod(blob["shape"])):
                raise ValueError(f"dimension mismatch for {k}: data does not fill its shape")
            params[k] = arr.reshape(blob["shape"])
        return cls(
            tuple(cfg["categories"]), int(cfg["dim"]), int(cfg["hidden"]), tuple(cfg["features"]),
            int(cfg["seed"]), cfg.get("activation", "tanh"), params,
            tuple(cfg.get("tf_shift", (0.0,) * 4)), tuple(cfg.get("tf_scale", (1.0,) * 4)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "RerankerModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def _onehot(idx: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(idx), k))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _forward(m: RerankerModel, x: Batch):
    # The first layer acts on concat(sf_out, tf_out, ti_out). All three
    # branches are affine in either a rank-4 input or one-hot counts over a
    # tiny vocabulary, so each block is folded into a small table first and
    # the 256-wide activations are never materialized.
    P = m.params
    d = m.dim
    w1 = P["w1"]
    cache = {"x": x}
    pre = np.broadcast_to(P["b1"], (x.tf.shape[0], m.hidden)).copy()
    if "sf" in m.features:
        counts = sum(_onehot(x.sf[:, s], len(m.vocab)) for s in range(SLOTS)) / SLOTS
        proj = P["cat_embed"] @ P["sf_w"]
        pre += counts @ (proj @ w1[:d]) + P["sf_b"] @ w1[:d]
        cache.update(sf_counts=counts, sf_proj=proj)
    if "tf" in m.features:
        table = P["tf_w"] @ w1[d : 2 * d]
        pre += x.tf @ table + P["tf_b"] @ w1[d : 2 * d]
        cache["tf_table"] = table
    if "ti" in m.features:
        ti_hot = [_onehot(x.ti[:, s], len(TI_TOKENS)) for s in range(SLOTS)]
        for s in range(SLOTS):
            block = w1[(2 + s) * d : (3 + s) * d]
            pre += ti_hot[s] @ (P["ti_embed"] @ block)
        cache["ti_hot"] = ti_hot
    h = np.tanh(pre)
    logits = h @ P["w2"] + P["b2"]
    cache["h"] = h
    return logits, cache


def _backward(m: RerankerModel, cache, dlogits: np.ndarray, want_input=False):
    """Gradients of sum(dlogits * logits) w.r.t. active parameters (and tf input).

    Parameters of masked branches are left out of the returned dict.
    """
    P = m.params
    d = m.dim
    w1 = P["w1"]
    x: Batch = cache["x"]
    h = cache["h"]
    g = {"w2": h.T @ dlogits, "b2": dlogits.sum(axis=0)}
    dpre = (dlogits @ P["w2"].T) * (1.0 - h * h)
    dsum = dpre.sum(axis=0)
    g["b1"] = dsum
    g["w1"] = gw1 = np.zeros_like(w1)
    dtf_in = np.zeros_like(x.tf) if want_input else None
    if "sf" in m.features:
        w1s = w1[:d]
        per_cat = cache["sf_counts"].T @ dpre  # (V, h)
        gw1[:d] = cache["sf_proj"].T @ per_cat + np.outer(P["sf_b"], dsum)
        dmean = per_cat @ w1s.T  # (V, d): counts^T @ d(sf_out)
        g["sf_w"] = P["cat_embed"].T @ dmean
        g["sf_b"] = dsum @ w1s.T
        g["cat_embed"] = dmean @ P["sf_w"].T
    if "tf" in m.features:
        w1t = w1[d : 2 * d]
        per_in = x.tf.T @ dpre  # (4, h)
        gw1[d : 2 * d] = P["tf_w"].T @ per_in + np.outer(P["tf_b"], dsum)
        g["tf_w"] = per_in @ w1t.T
        g["tf_b"] = dsum @ w1t.T
        if want_input:
            dtf_in = dpre @ cache["tf_table"].T
    if "ti" in m.features:
        g["ti_embed"] = np.zeros_like(P["ti_embed"])
        for s, hot in enumerate(cache["ti_hot"]):
            rows = slice((2 + s) * d, (3 + s) * d)
            per_token = hot.T @ dpre
            gw1[rows] = P["ti_embed"].T @ per_token
            g["ti_embed"] += per_token @ w1[rows].T
    return g, dtf_in


class ForwardResult(NamedTuple):
    logits: np.ndarray
    p1: float


def forward(m: RerankerModel, x: TrajectoryFeatures) -> ForwardResult:
    logits, _ = _forward(m, m.encode([x]))
    return ForwardResult(logits[0].copy(), float(_softmax(logits)[0, 1]))


def predict_proba(m: RerankerModel, feats: Sequence[TrajectoryFeatures]) -> np.ndarray:
    """Positive-class probability for each feature record."""
    if not feats:
        return np.zeros(0)
    logits, _ = _forward(m, m.encode(feats))
    return _softmax(logits)[:, 1]


def loss_and_grad(m: RerankerModel, batch: Sequence[TrainExample]) -> tuple[float, dict[str, np.ndarray]]:
    """Summed two-class cross-entropy and its exact gradient."""
    if not batch:
        raise ValueError("batch must be non-empty")
    x = m.encode([e.features for e in batch])
    y = np.array([e.label for e in batch], dtype=np.int64)
    logits, cache = _forward(m, x)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].sum())
    onehot = np.zeros_like(logits)
    onehot[np.arange(len(y)), y] = 1.0
    dlogits = np.exp(logp) - onehot
    grads, _ = _backward(m, cache, dlogits)
    for name, value in m.params.items():
        if name not in grads or name in m.frozen():
            grads[name] = np.zeros_like(value)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    standardize: bool = True


def fit_tf_normalization(dataset: Sequence[TrainExample]) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Per-column mean and standard deviation of the raw tf vectors (unit scale for constant columns)."""
    raw = np.array([e.features.tf for e in dataset], dtype=np.float64).reshape(-1, 4)
    std = raw.std(axis=0)
    return tuple(raw.mean(axis=0)), tuple(np.where(std > 1e-12, std, 1.0))


def train(m: RerankerModel, dataset: Sequence[TrainExample], cfg: TrainConfig = TrainConfig()):
    """Mini-batch gradient descent on the summed cross-entropy.

    Returns a trained copy of ``m`` and the per-epoch mean loss, with the
    loss before any update as the first entry. With ``cfg.standardize`` the
    copy's tf normalization is refitted on ``dataset`` first; raw BM25
    scores and cosine scores live on very different scales and plain
    gradient descent on the summed loss diverges without it.
    """
    labels = {e.label for e in dataset}
    if labels != {0, 1}:
        raise ValueError("training data must contain both positive and negative examples")
    model = m.copy()
    if cfg.standardize:
        model.tf_shift, model.tf_scale = fit_tf_normalization(dataset)
    rng = np.random.default_rng(cfg.seed)
    data = list(dataset)
    x_all = model.encode([e.features for e in data])
    y_all = np.array([e.label for e in data], dtype=np.int64)

    def mean_loss() -> float:
        logits, _ = _forward(model, x_all)
        return float(-_log_softmax(logits)[np.arange(len(y_all)), y_all].mean())

    curve = [mean_loss()]
    frozen = model.frozen()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = Batch(x_all.tf[idx], x_all.sf[idx], x_all.ti[idx])
            yb = y_all[idx]
            logits, cache = _forward(model, xb)
            dlogits = _softmax(logits)
            dlogits[np.arange(len(yb)), yb] -= 1.0
            grads, _ = _backward(model, cache, dlogits)
            for name, gval in grads.items():
                if name not in frozen:
                    model.params[name] -= cfg.learning_rate * gval
        curve.append(mean_loss())
    return model, curve


class PoolEntry(NamedTuple):
    node: str
    features: TrajectoryFeatures
    initial_score: float


class Ranked(NamedTuple):
    node: str
    p1: float
    initial_score: float


def rerank(m: RerankerModel, pool: Iterable[PoolEntry], K: int) -> list[Ranked]:
    """Sort by model probability, then initial score, then node id; keep ``K``."""
    entries = sorted(pool, key=lambda e: e.node)
    probs = predict_proba(m, [e.features for e in entries])
    ranked = [Ranked(e.node, float(p), float(e.initial_score)) for e, p in zip(entries, probs)]
    ranked.sort(key=lambda r: (-r.p1, -r.initial_score, r.node))
    return ranked[:K]


class Saliency(NamedTuple):
    values: np.ndarray
    padding: tuple[bool, bool, bool]


def tf_saliency(m: RerankerModel, x: TrajectoryFeatures) -> Saliency:
    """``|d p1 / d tf[l]|`` for the three per-step textual scores."""
    logits, cache = _forward(m, m.encode([x]))
    p = _softmax(logits)[0]
    # d p1 / d logits = p1 * (onehot_1 - p)
    dlogits = (p[1] * (np.array([0.0, 1.0]) - p))[None, :]
    _, dtf = _backward(m, cache, dlogits, want_input=True)
    dtf = dtf[0] / np.array(m.tf_scale)  # back to raw tf units
    return Saliency(np.abs(dtf[:SLOTS]), x.padding_mask)

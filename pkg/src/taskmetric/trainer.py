"""Episodic training of a small parametric embedding.

A linear map or one-hidden-layer MLP is trained over a stream of episodes
by plain SGD on the mean negative log-probability of the true query
labels, with the per-episode metric treated as a constant inside each
backward pass (gradients do not flow through the matrix inverse). Support
sets may be mixed on the usual schedule; queries stay clean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Episode, EpisodeConfig, MetricHyperParams, MetricMatrix
from .errors import DataFormatError, ParameterError, TrainingError
from .metric import compute_prototypes, episode_metric
from .mixing import TimConfig, augment_episode
from .sampler import as_rng, sample_episode

KINDS = ("linear", "mlp1")
METRIC_MODES = ("euclidean", "eam")
_MODEL_MAGIC = "TEAMMODEL1"
_DIST_FLOOR = 1e-12


def _param_count(kind: str, in_dim: int, out_dim: int, hidden_dim: int) -> int:
    if kind == "linear":
        return out_dim * in_dim + out_dim
    return hidden_dim * in_dim + hidden_dim + out_dim * hidden_dim + out_dim


@dataclass
class EmbeddingModel:
    """Flat-parameter embedding: ``linear`` is W x + b, ``mlp1`` is
    W2 relu(W1 x + b1) + b2. Parameters live in one flat array in
    declaration order (W then b per layer)."""

    kind: str
    in_dim: int
    out_dim: int
    hidden_dim: int = 0
    params: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ParameterError("in_dim and out_dim must be positive")
        if self.kind == "mlp1" and self.hidden_dim < 1:
            raise ParameterError("mlp1 needs a positive hidden_dim")
        if self.kind == "linear":
            self.hidden_dim = 0
        expected = _param_count(self.kind, self.in_dim, self.out_dim, self.hidden_dim)
        if self.params is None:
            self.params = np.zeros(expected)
        self.params = np.asarray(self.params, dtype=np.float64).ravel()
        if self.params.shape[0] != expected:
            raise ParameterError(
                f"{self.kind} {self.in_dim}->{self.out_dim} needs {expected} params, "
                f"got {self.params.shape[0]}"
            )
        if not np.all(np.isfinite(self.params)):
            raise ParameterError("model parameters must be finite")

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.kind, self.in_dim, self.out_dim, self.hidden_dim, self.params.copy()
        )

    def weights(self):
        """Reshaped views into the flat parameter array."""
        p = self.params
        if self.kind == "linear":
            k = self.out_dim * self.in_dim
            return p[:k].reshape(self.out_dim, self.in_dim), p[k:]
        h, i, o = self.hidden_dim, self.in_dim, self.out_dim
        ofs = 0
        w1 = p[ofs : ofs + h * i].reshape(h, i)
        ofs += h * i
        b1 = p[ofs : ofs + h]
        ofs += h
        w2 = p[ofs : ofs + o * h].reshape(o, h)
        ofs += o * h
        b2 = p[ofs:]
        return w1, b1, w2, b2


def init_model(
    kind: str, in_dim: int, out_dim: int, hidden_dim: int = 0, rng=None
) -> EmbeddingModel:
    """Seeded random initialization, uniform in [-1/sqrt(in_dim), 1/sqrt(in_dim)]."""
    rng = as_rng(rng)
    n = _param_count(kind, in_dim, out_dim, hidden_dim if kind == "mlp1" else 0)
    bound = 1.0 / np.sqrt(in_dim)
    params = rng.uniform(-bound, bound, size=n)
    return EmbeddingModel(kind, in_dim, out_dim, hidden_dim, params)


def embed(model: EmbeddingModel, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != model.in_dim:
        raise ParameterError(f"input dim {batch.shape[1]} != model in_dim {model.in_dim}")
    if model.kind == "linear":
        w, b = model.weights()
        out = batch @ w.T + b
    else:
        w1, b1, w2, b2 = model.weights()
        out = np.maximum(batch @ w1.T + b1, 0.0) @ w2.T + b2
    return out[0] if single else out


def _embedded_episode(model: EmbeddingModel, episode: Episode) -> Episode:
    return Episode(
        embed(model, episode.support_x),
        episode.support_y,
        embed(model, episode.query_x),
        episode.query_y,
        embed(model, episode.unlabeled_x) if episode.unlabeled_x.shape[0] else None,
    )


def _resolve_metric(
    embedded: Episode, hp: MetricHyperParams, metric_mode: str, fixed_metric
) -> MetricMatrix:
    if fixed_metric is not None:
        return fixed_metric
    if metric_mode == "euclidean":
        return MetricMatrix.identity(embedded.dim)
    if metric_mode == "eam":
        return episode_metric(embedded, hp)
    raise ParameterError(f"metric_mode must be one of {METRIC_MODES}, got {metric_mode!r}")


def episode_loss(
    model: EmbeddingModel,
    episode: Episode,
    hp: MetricHyperParams,
    metric_mode: str = "euclidean",
    fixed_metric: MetricMatrix | None = None,
) -> float:
    """Mean negative log-probability of the true query labels under the
    query-over-prototypes softmax in the embedded space.

    ``fixed_metric`` pins the metric to a precomputed value, which is how
    gradient checks hold the metric constant while the embedding moves.
    """
    loss, _ = _loss_and_grad(model, episode, hp, metric_mode, fixed_metric, need_grad=False)
    return loss


def loss_gradient(
    model: EmbeddingModel,
    episode: Episode,
    hp: MetricHyperParams,
    metric_mode: str = "euclidean",
    fixed_metric: MetricMatrix | None = None,
) -> np.ndarray:
    """Analytic gradient of :func:`episode_loss` with respect to the flat
    parameters, with the per-episode metric held constant."""
    _, grad = _loss_and_grad(model, episode, hp, metric_mode, fixed_metric, need_grad=True)
    return grad


def _loss_and_grad(model, episode, hp, metric_mode, fixed_metric, need_grad=True):
    sx, sy = episode.support_x, episode.support_y
    qx, qy = episode.query_x, episode.query_y
    if qy.size == 0:
        raise ParameterError("episode has no queries to score")
    n_way = episode.n_way
    k_per_class = np.bincount(sy, minlength=n_way).astype(np.float64)

    embedded = _embedded_episode(model, episode)
    zq, zs = embedded.query_x, embedded.support_x
    metric = _resolve_metric(embedded, hp, metric_mode, fixed_metric)
    mat = metric.matrix

    protos = compute_prototypes(zs, sy)
    diffs = zq[:, None, :] - protos[None, :, :]  # (q, N, d)
    quad = np.einsum("qnd,de,qne->qn", diffs, mat, diffs)
    dist = np.sqrt(np.maximum(quad, 0.0))

    logits = -dist
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n_q = qy.shape[0]
    loss = float(-log_probs[np.arange(n_q), qy].mean())
    if not need_grad:
        return loss, None

    probs = np.exp(log_probs)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n_q), qy] = 1.0
    g_dist = (onehot - probs) / n_q  # d loss / d dist[i, c]

    safe = np.maximum(dist, _DIST_FLOOR)
    md = diffs @ mat  # (q, N, d): M (q_i - p_c) rows
    coef = (g_dist / safe)[:, :, None]
    g_q = (coef * md).sum(axis=1)  # (q, d)
    g_p = -(coef * md).sum(axis=0)  # (N, d)
    g_s = g_p[sy] / k_per_class[sy][:, None]  # prototype mean fan-out

    points = np.concatenate([sx, qx], axis=0)
    upstream = np.concatenate([g_s, g_q], axis=0)
    grad = np.zeros_like(model.params)
    _backprop(model, points, upstream, grad)
    return loss, grad


def _backprop(model, x, g_out, grad_flat):
    if model.kind == "linear":
        k = model.out_dim * model.in_dim
        grad_flat[:k] += (g_out.T @ x).ravel()
        grad_flat[k:] += g_out.sum(axis=0)
        return
    w1, b1, w2, b2 = model.weights()
    a = x @ w1.T + b1
    h = np.maximum(a, 0.0)
    hn = model.hidden_dim * model.in_dim
    ofs = 0
    g_h = g_out @ w2
    g_a = g_h * (a > 0.0)
    grad_flat[ofs : ofs + hn] += (g_a.T @ x).ravel()
    ofs += hn
    grad_flat[ofs : ofs + model.hidden_dim] += g_a.sum(axis=0)
    ofs += model.hidden_dim
    grad_flat[ofs : ofs + model.out_dim * model.hidden_dim] += (g_out.T @ h).ravel()
    ofs += model.out_dim * model.hidden_dim
    grad_flat[ofs:] += g_out.sum(axis=0)


@dataclass(frozen=True)
class TrainConfig:
    """Episode stream shape and optimization schedule."""

    episode: EpisodeConfig
    learning_rate: float
    episodes: int
    tim: TimConfig | None = None
    lr_halving_every: int = 10000
    eval_every: int = 1
    seed: int = 0
    metric_mode: str = "euclidean"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be non-negative")
        if self.episodes < 1:
            raise ParameterError("episodes must be positive")
        if self.lr_halving_every < 1 or self.eval_every < 1:
            raise ParameterError("lr_halving_every and eval_every must be positive")
        if self.metric_mode not in METRIC_MODES:
            raise ParameterError(f"metric_mode must be one of {METRIC_MODES}")


def train(model: EmbeddingModel, dataset, cfg: TrainConfig, hp: MetricHyperParams):
    """Run the episodic SGD loop.

    Per episode: sample, apply mixing when the schedule is on, take one
    gradient step with the learning rate halved every
    ``lr_halving_every`` episodes. Returns the trained model and the loss
    trace sampled every ``eval_every`` episodes; the input model is not
    modified. Deterministic given ``cfg.seed``.
    """
    trained = model.copy()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.episodes)
    trace = []
    for ep in range(cfg.episodes):
        rng = np.random.default_rng(children[ep])
        episode = sample_episode(dataset, cfg.episode, rng)
        if cfg.tim is not None:
            episode = augment_episode(episode, cfg.tim, ep, rng)
        loss, grad = _loss_and_grad(trained, episode, hp, cfg.metric_mode, None)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingError(f"training diverged at episode {ep}", episode_index=ep)
        lr = cfg.learning_rate * 0.5 ** (ep // cfg.lr_halving_every)
        trained.params = trained.params - lr * grad
        if (ep + 1) % cfg.eval_every == 0:
            trace.append(loss)
    return trained, np.asarray(trace)


def save_model(model: EmbeddingModel, path) -> None:
    """Checkpoint: ASCII header line, then the flat parameters as
    little-endian f64 in declaration order."""
    header = f"{_MODEL_MAGIC} {model.kind} {model.in_dim} {model.hidden_dim} {model.out_dim}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(model.params.astype("<f8").tobytes())


def load_model(path) -> EmbeddingModel:
    blob = Path(path).read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DataFormatError(f"{path}: missing checkpoint header")
    fields = blob[:newline].decode("ascii", errors="replace").split()
    if len(fields) != 5 or fields[0] != _MODEL_MAGIC:
        raise DataFormatError(f"{path}: bad checkpoint header {fields!r}")
    kind = fields[1]
    try:
        in_dim, hidden_dim, out_dim = (int(v) for v in fields[2:])
    except ValueError:
        raise DataFormatError(f"{path}: non-integer dims in header") from None
    if kind not in KINDS:
        raise DataFormatError(f"{path}: unknown model kind {kind!r}")
    expected = _param_count(kind, in_dim, out_dim, hidden_dim)
    params = np.frombuffer(blob, dtype="<f8", offset=newline + 1)
    if params.shape[0] != expected:
        raise DataFormatError(
            f"{path}: expected {expected} parameters, found {params.shape[0]}"
        )
    return EmbeddingModel(kind, in_dim, out_dim, hidden_dim, params.copy())

"""Neural model of how a user's final order shifts in response to explanations.

The model predicts the decision shift (final order minus initial order, in
lots) from the day's context and the combination of explanations shown.
Context and explanation inputs are embedded into a shared hidden dimension;
explanation features are projected per modality, gated elementwise by a
per-class embedding, and summed over the flagged items only, so hidden items
cannot influence the output. The concatenated embeddings feed a 3-layer tanh
head.

Two output heads are supported: scalar delta regression (default) and a
categorical distribution over binned deltas whose expectation is reported as
the predicted delta.

Everything is plain numpy with hand-written gradients; training is full-batch
gradient descent with momentum and is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .explanations import Combination, DayCandidates, Modality
from .market import CLASS_INDEX
from .predictor import PredictionDistribution, TrainingError
from .weights_io import load_weights, save_weights

DEFAULT_EMBED_DIM = 64
DEFAULT_MAX_LOTS = 30


@dataclass(frozen=True)
class DecisionContext:
    """Everything besides the explanations that conditions the day's decision."""

    day_index: int
    p: PredictionDistribution
    total_rate: float
    initial_order: int


@dataclass(frozen=True)
class InteractionRecord:
    """One logged day: context, combination shown, and the user's final order."""

    context: DecisionContext
    combination: Combination
    final_order: int
    session_id: str = ""
    timestamp: str = ""

    @property
    def delta(self) -> int:
        return self.final_order - self.context.initial_order


@dataclass(frozen=True)
class DecisionPrediction:
    """Predicted decision shift, optionally with a distribution over delta bins."""

    predicted_delta: float
    bin_values: np.ndarray | None = None
    probabilities: np.ndarray | None = None

    def __post_init__(self) -> None:
        if (self.probabilities is None) != (self.bin_values is None):
            raise ValueError("bin_values and probabilities must be given together")
        if self.probabilities is not None:
            if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
                raise ValueError("bin probabilities must sum to 1")
            if np.any(self.probabilities < -1e-12):
                raise ValueError("negative bin probability")
            expectation = float(self.probabilities @ self.bin_values)
            if abs(expectation - self.predicted_delta) > 1e-6:
                raise ValueError(
                    f"distribution expectation {expectation} inconsistent with "
                    f"predicted delta {self.predicted_delta}"
                )


@dataclass
class UserModelConfig:
    embed_dim: int = DEFAULT_EMBED_DIM
    feature_dim: int = 256
    n_days: int = 60
    max_lots: int = DEFAULT_MAX_LOTS
    head: str = "regression"  # or "categorical"
    bin_range: int = 5
    learning_rate: float = 0.03
    momentum: float = 0.9
    epochs: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if self.head not in ("regression", "categorical"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def n_outputs(self) -> int:
        return 1 if self.head == "regression" else 2 * self.bin_range + 1

    def bin_values(self) -> np.ndarray:
        return np.arange(-self.bin_range, self.bin_range + 1, dtype=float)


PARAM_NAMES = (
    "day_embed", "class_embed", "w_p", "w_r", "w_d", "w_text", "w_sal",
    "h1", "hb1", "h2", "hb2", "h3", "hb3",
)


@dataclass
class UserModelParams:
    config: UserModelConfig
    day_embed: np.ndarray   # (n_days, E)
    class_embed: np.ndarray  # (3, E)
    w_p: np.ndarray         # (E, 3)
    w_r: np.ndarray         # (E,)
    w_d: np.ndarray         # (E,)
    w_text: np.ndarray      # (E, F)
    w_sal: np.ndarray       # (E, F)
    h1: np.ndarray          # (E, 6E)
    hb1: np.ndarray         # (E,)
    h2: np.ndarray          # (E, E)
    hb2: np.ndarray         # (E,)
    h3: np.ndarray          # (n_outputs, E)
    hb3: np.ndarray         # (n_outputs,)

    def arrays(self) -> dict[str, np.ndarray]:
        """Live references to every parameter array, for optimizers and checks."""
        return {name: getattr(self, name) for name in PARAM_NAMES}


def init_user_model(config: UserModelConfig | None = None) -> UserModelParams:
    config = config or UserModelConfig()
    e, f = config.embed_dim, config.feature_dim
    rng = np.random.default_rng(config.seed)

    def uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        limit = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=shape)

    return UserModelParams(
        config=config,
        day_embed=uniform((config.n_days, e), e),
        class_embed=uniform((3, e), e),
        w_p=uniform((e, 3), 3),
        w_r=uniform((e,), 1),
        w_d=uniform((e,), 1),
        w_text=uniform((e, f), f),
        w_sal=uniform((e, f), f),
        h1=uniform((e, 6 * e), 6 * e),
        hb1=np.zeros(e),
        h2=uniform((e, e), e),
        hb2=np.zeros(e),
        h3=uniform((config.n_outputs, e), e),
        hb3=np.zeros(config.n_outputs),
    )


@dataclass(frozen=True)
class CandidateEncoding:
    """Per-item gated projections for one day, reusable across combinations."""

    contributions: tuple[np.ndarray, ...]
    modalities: tuple[Modality, ...]


def _item_contribution(params: UserModelParams, item) -> np.ndarray:
    w = params.w_sal if item.modality is Modality.SALIENCY else params.w_text
    return (w @ item.feature) * params.class_embed[CLASS_INDEX[item.price_class]]


def encode_candidates(params: UserModelParams, candidates: DayCandidates) -> CandidateEncoding:
    return CandidateEncoding(
        contributions=tuple(_item_contribution(params, it) for it in candidates.items),
        modalities=tuple(it.modality for it in candidates.items),
    )


def aggregate_explanations(
    params: UserModelParams,
    candidates: DayCandidates,
    combination: Combination,
    encoding: CandidateEncoding | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sum of gated projections over the flagged items, per modality.

    Unflagged items are skipped outright, so their payloads can never leak
    into the output. Returns (h_saliency, h_text).
    """
    if combination.size != len(candidates):
        raise ValueError(
            f"combination over {combination.size} items does not match "
            f"{len(candidates)} candidates"
        )
    e = params.config.embed_dim
    h_sal = np.zeros(e)
    h_text = np.zeros(e)
    for j, item in enumerate(candidates.items):
        if not combination.flag(j):
            continue
        u = encoding.contributions[j] if encoding is not None else _item_contribution(params, item)
        if item.modality is Modality.SALIENCY:
            h_sal += u
        else:
            h_text += u
    return h_sal, h_text


def _head_forward(params: UserModelParams, z: np.ndarray) -> np.ndarray:
    a1 = np.tanh(params.h1 @ z + params.hb1)
    a2 = np.tanh(params.h2 @ a1 + params.hb2)
    return params.h3 @ a2 + params.hb3


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _prediction_from_outputs(config: UserModelConfig, out: np.ndarray) -> DecisionPrediction:
    if config.head == "regression":
        return DecisionPrediction(predicted_delta=float(out[0]))
    probs = _softmax(out)
    values = config.bin_values()
    return DecisionPrediction(
        predicted_delta=float(probs @ values), bin_values=values, probabilities=probs
    )


def predict_decision(
    params: UserModelParams,
    context: DecisionContext,
    candidates: DayCandidates,
    combination: Combination,
    encoding: CandidateEncoding | None = None,
) -> DecisionPrediction:
    """Predict the user's decision shift for one context and combination."""
    cfg = params.config
    if not 0 <= context.day_index < cfg.n_days:
        raise IndexError(
            f"day index {context.day_index} outside embedding table of {cfg.n_days}"
        )
    h_sal, h_text = aggregate_explanations(params, candidates, combination, encoding)
    z = np.concatenate(
        [
            params.day_embed[context.day_index],
            params.w_p @ context.p.as_array(),
            params.w_r * context.total_rate,
            params.w_d * (context.initial_order / cfg.max_lots),
            h_sal,
            h_text,
        ]
    )
    return _prediction_from_outputs(cfg, _head_forward(params, z))


# ---------------------------------------------------------------------------
# Batched training path
# ---------------------------------------------------------------------------

@dataclass
class TrainingBatch:
    """Records flattened into arrays; explanation features are pre-summed per
    class and modality over the flagged items (the gating makes per-class sums
    sufficient statistics for the aggregation)."""

    days: np.ndarray     # (B,) int
    p: np.ndarray        # (B, 3)
    rates: np.ndarray    # (B,)
    dprime: np.ndarray   # (B,)
    s_text: np.ndarray   # (B, 3, F)
    s_sal: np.ndarray    # (B, 3, F)
    targets: np.ndarray  # (B,) delta in lots

    def __len__(self) -> int:
        return self.days.shape[0]


def build_batch(
    records: Sequence[InteractionRecord],
    candidates_by_day: Mapping[int, DayCandidates],
    config: UserModelConfig,
) -> TrainingBatch:
    b, f = len(records), config.feature_dim
    days = np.empty(b, dtype=int)
    p = np.empty((b, 3))
    rates = np.empty(b)
    dprime = np.empty(b)
    s_text = np.zeros((b, 3, f))
    s_sal = np.zeros((b, 3, f))
    targets = np.empty(b)
    for i, rec in enumerate(records):
        ctx = rec.context
        if not 0 <= ctx.day_index < config.n_days:
            raise IndexError(f"record day index {ctx.day_index} outside table")
        candidates = candidates_by_day[ctx.day_index]
        if rec.combination.size != len(candidates):
            raise ValueError(
                f"record combination size {rec.combination.size} does not match "
                f"day {ctx.day_index} candidates ({len(candidates)})"
            )
        days[i] = ctx.day_index
        p[i] = ctx.p.as_array()
        rates[i] = ctx.total_rate
        dprime[i] = ctx.initial_order
        targets[i] = rec.final_order - ctx.initial_order
        for j, item in enumerate(candidates.items):
            if not rec.combination.flag(j):
                continue
            c = CLASS_INDEX[item.price_class]
            if item.modality is Modality.TEXT:
                s_text[i, c] += item.feature
            else:
                s_sal[i, c] += item.feature
    return TrainingBatch(days, p, rates, dprime, s_text, s_sal, targets)


def batch_outputs(params: UserModelParams, batch: TrainingBatch) -> np.ndarray:
    """Raw head outputs (B, n_outputs) for a batch; used by prediction helpers."""
    out, _ = _batch_forward(params, batch)
    return out


def batch_deltas(params: UserModelParams, batch: TrainingBatch) -> np.ndarray:
    out = batch_outputs(params, batch)
    if params.config.head == "regression":
        return out[:, 0]
    return _softmax(out) @ params.config.bin_values()


def _batch_forward(params: UserModelParams, batch: TrainingBatch):
    cfg = params.config
    h_i = params.day_embed[batch.days]
    h_p = batch.p @ params.w_p.T
    h_r = batch.rates[:, None] * params.w_r[None, :]
    h_d = (batch.dprime / cfg.max_lots)[:, None] * params.w_d[None, :]
    t_text = np.einsum("bcf,ef->bce", batch.s_text, params.w_text)
    t_sal = np.einsum("bcf,ef->bce", batch.s_sal, params.w_sal)
    h_text = (t_text * params.class_embed[None]).sum(axis=1)
    h_sal = (t_sal * params.class_embed[None]).sum(axis=1)
    z = np.concatenate([h_i, h_p, h_r, h_d, h_sal, h_text], axis=1)
    a1 = np.tanh(z @ params.h1.T + params.hb1)
    a2 = np.tanh(a1 @ params.h2.T + params.hb2)
    out = a2 @ params.h3.T + params.hb3
    cache = (h_i, t_text, t_sal, z, a1, a2)
    return out, cache


def loss_and_grads(
    params: UserModelParams, batch: TrainingBatch
) -> tuple[float, dict[str, np.ndarray]]:
    """Training loss and analytic gradients for every parameter array.

    Regression head: mean squared error of the predicted delta. Categorical
    head: mean cross-entropy against the clipped integer delta bin.
    """
    cfg = params.config
    b = len(batch)
    out, (h_i, t_text, t_sal, z, a1, a2) = _batch_forward(params, batch)

    if cfg.head == "regression":
        deltas = out[:, 0]
        err = deltas - batch.targets
        loss = float(np.mean(err**2))
        dout = np.zeros_like(out)
        dout[:, 0] = 2.0 * err / b
    else:
        bins = np.clip(np.rint(batch.targets), -cfg.bin_range, cfg.bin_range).astype(int)
        idx = bins + cfg.bin_range
        probs = _softmax(out)
        loss = float(-np.mean(np.log(probs[np.arange(b), idx] + 1e-300)))
        dout = probs.copy()
        dout[np.arange(b), idx] -= 1.0
        dout /= b

    grads: dict[str, np.ndarray] = {}
    grads["h3"] = dout.T @ a2
    grads["hb3"] = dout.sum(axis=0)
    da2 = dout @ params.h3
    dpre2 = da2 * (1.0 - a2**2)
    grads["h2"] = dpre2.T @ a1
    grads["hb2"] = dpre2.sum(axis=0)
    da1 = dpre2 @ params.h2
    dpre1 = da1 * (1.0 - a1**2)
    grads["h1"] = dpre1.T @ z
    grads["hb1"] = dpre1.sum(axis=0)
    dz = dpre1 @ params.h1

    e = cfg.embed_dim
    d_hi, d_hp, d_hr, d_hd, d_hsal, d_htext = (
        dz[:, k * e : (k + 1) * e] for k in range(6)
    )

    grads["day_embed"] = np.zeros_like(params.day_embed)
    np.add.at(grads["day_embed"], batch.days, d_hi)
    grads["w_p"] = d_hp.T @ batch.p
    grads["w_r"] = (d_hr * batch.rates[:, None]).sum(axis=0)
    grads["w_d"] = (d_hd * (batch.dprime / cfg.max_lots)[:, None]).sum(axis=0)

    dt_text = d_htext[:, None, :] * params.class_embed[None]
    dt_sal = d_hsal[:, None, :] * params.class_embed[None]
    grads["w_text"] = np.einsum("bce,bcf->ef", dt_text, batch.s_text)
    grads["w_sal"] = np.einsum("bce,bcf->ef", dt_sal, batch.s_sal)
    grads["class_embed"] = np.einsum("bce,be->ce", t_text, d_htext) + np.einsum(
        "bce,be->ce", t_sal, d_hsal
    )
    return loss, grads


def trivial_predictor_loss(params: UserModelParams, batch: TrainingBatch) -> float:
    """Loss of the do-nothing baseline: zero delta (regression) or the uniform
    bin distribution (categorical)."""
    if params.config.head == "regression":
        return float(np.mean(batch.targets**2))
    return float(np.log(params.config.n_outputs))


def train_user_model(
    records: Sequence[InteractionRecord],
    candidates_by_day: Mapping[int, DayCandidates],
    config: UserModelConfig | None = None,
) -> UserModelParams:
    """Fit the decision-shift model on interaction logs.

    Full-batch gradient descent with momentum and a fixed step size;
    deterministic for a fixed seed. Fails loudly if training ends worse than
    the trivial predictor.
    """
    if len(records) == 0:
        raise ValueError("no interaction records to train on")
    config = config or UserModelConfig()
    batch = build_batch(records, candidates_by_day, config)
    if not np.all(np.isfinite(batch.targets)):
        raise ValueError("non-finite training targets")

    params = init_user_model(config)
    velocity = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    for _ in range(config.epochs):
        _, grads = loss_and_grads(params, batch)
        for name, grad in grads.items():
            velocity[name] = config.momentum * velocity[name] - config.learning_rate * grad
            getattr(params, name)[...] += velocity[name]

    final_loss, _ = loss_and_grads(params, batch)
    # Small absolute slack: with degenerate targets (e.g. all-zero deltas) the
    # trivial baseline is exactly optimal and training can only approach it.
    if final_loss > trivial_predictor_loss(params, batch) + 1e-3:
        raise TrainingError(
            f"training loss {final_loss:.4f} worse than the trivial predictor"
        )
    return params


# ---------------------------------------------------------------------------
# Cross validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossValidationResult:
    fold_correlations: tuple[float, ...]
    fold_sizes: tuple[int, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_correlations))

    @property
    def sd(self) -> float:
        return float(np.std(self.fold_correlations))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; 0.0 when either side is constant."""
    if np.std(x) < 1e-12 or np.std(y) < 1e-12:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


def cross_validate(
    records: Sequence[InteractionRecord],
    candidates_by_day: Mapping[int, DayCandidates],
    k: int = 4,
    config: UserModelConfig | None = None,
) -> CrossValidationResult:
    """K-fold evaluation with folds assigned by session id, so one session's
    days never straddle a train/test split. Reports the Pearson correlation
    between predicted and actual decision shifts on each held-out fold."""
    config = config or UserModelConfig()
    sessions = sorted({rec.session_id for rec in records})
    if len(sessions) < k:
        raise ValueError(f"need at least {k} sessions for {k}-fold CV, have {len(sessions)}")
    fold_of = {sid: i % k for i, sid in enumerate(sessions)}

    correlations = []
    sizes = []
    for fold in range(k):
        train = [r for r in records if fold_of[r.session_id] != fold]
        test = [r for r in records if fold_of[r.session_id] == fold]
        params = train_user_model(train, candidates_by_day, config)
        test_batch = build_batch(test, candidates_by_day, config)
        predicted = batch_deltas(params, test_batch)
        correlations.append(pearson(predicted, test_batch.targets))
        sizes.append(len(test))
    return CrossValidationResult(tuple(correlations), tuple(sizes))


# ---------------------------------------------------------------------------
# Interaction-log serialization (JSONL, one record per line)
# ---------------------------------------------------------------------------

def record_to_json(record: InteractionRecord) -> dict:
    ctx = record.context
    return {
        "session_id": record.session_id,
        "timestamp": record.timestamp,
        "context": {
            "day_index": ctx.day_index,
            "p": [ctx.p.p_bull, ctx.p.p_neutral, ctx.p.p_bear],
            "total_rate": ctx.total_rate,
            "initial_order": ctx.initial_order,
        },
        "combination": record.combination.to_json(),
        "final_order": record.final_order,
    }


def record_from_json(obj: Mapping) -> InteractionRecord:
    ctx = obj["context"]
    return InteractionRecord(
        context=DecisionContext(
            day_index=int(ctx["day_index"]),
            p=PredictionDistribution.from_array(ctx["p"]),
            total_rate=float(ctx["total_rate"]),
            initial_order=int(ctx["initial_order"]),
        ),
        combination=Combination.from_json(obj["combination"]),
        final_order=int(obj["final_order"]),
        session_id=str(obj.get("session_id", "")),
        timestamp=str(obj.get("timestamp", "")),
    )


def save_records(path: str | Path, records: Iterable[InteractionRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec)) + "\n")


def load_records(path: str | Path) -> list[InteractionRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_USER_MODEL_KIND = "user-model"


def save_user_model(path: str | Path, params: UserModelParams) -> None:
    cfg = params.config
    config = {
        "embed_dim": cfg.embed_dim,
        "feature_dim": cfg.feature_dim,
        "n_days": cfg.n_days,
        "max_lots": cfg.max_lots,
        "head": cfg.head,
        "bin_range": cfg.bin_range,
        "learning_rate": cfg.learning_rate,
        "momentum": cfg.momentum,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
    }
    save_weights(path, _USER_MODEL_KIND, config, params.arrays())


def load_user_model(path: str | Path) -> UserModelParams:
    config, arrays = load_weights(path, _USER_MODEL_KIND)
    return UserModelParams(config=UserModelConfig(**config), **arrays)

"""Multi-head student/teacher clustering heads trained on precomputed features.

Two objectives over (anchor, mined-neighbor) pairs are supported:

* ``temi``: a pointwise-mutual-information-style loss. Each head minimizes
  ``-w * log sum_c (q_s(c|x) q_t(c|x'))**beta / prior(c)`` where the prior is
  an exponential moving average of the teacher's marginal cluster
  distribution and ``w`` is an instance weight, the teacher-teacher agreement
  of the pair averaged over heads. ``beta`` in (0.5, 1] tempers the joint
  probability and prevents the all-pairs-in-one-cluster solution.
* ``scan``: a consistency term ``-log <q_t(x), q_s(x')>`` plus an entropy
  regularizer on the mini-batch mean of the student distribution, weighted
  by ``entropy_weight`` (the regularizer rewards spreading mass across
  clusters, so it enters the minimized loss as ``+ sum_c m(c) log m(c)``).

Both losses are symmetrized by averaging the two pair directions. Gradients
are analytic and flow through the student only; the teacher is an
exponential moving average of the student, and the prior and instance
weights are treated as constants within a step. All math runs in float64
and a fixed order, so a fixed seed reproduces training logs bit for bit.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assignment import ClusterAssignment, topk_from_scores
from .feature_store import FeatureMatrix, LabelVector
from .neighbors import NeighborTable

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class HeadsError(Exception):
    pass


class DimensionMismatch(HeadsError):
    pass


class NeighborMisaligned(HeadsError):
    pass


class NonFiniteLoss(HeadsError):
    pass


class KTooLarge(HeadsError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters for the self-distillation trainer."""

    n_clusters: int
    objective: str = "temi"            # "temi" | "scan"
    n_heads: int = 8
    beta: float = 0.6                  # agreement sharpening exponent, (0.5, 1]
    entropy_weight: float = 5.0        # scan regularizer scale
    prior_momentum: float = 0.99       # EMA momentum of the teacher cluster prior
    teacher_momentum: float = 0.996    # EMA momentum of the teacher parameters
    student_temp: float = 0.1
    teacher_temp: float = 0.04
    batch_size: int = 256
    epochs: int = 50
    lr: float = 0.5
    weight_decay: float = 0.0
    sgd_momentum: float = 0.9
    hidden_dim: int = 0                # 0 = single linear layer; >0 adds a ReLU layer
    seed: int = 0

    def validate(self) -> None:
        if self.objective not in ("temi", "scan"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not (0.5 < self.beta <= 1.0):
            raise ValueError("beta must lie in (0.5, 1]")
        if not (0.0 < self.prior_momentum < 1.0):
            raise ValueError("prior_momentum must lie in (0, 1)")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")
        if self.n_heads < 1:
            raise ValueError("need at least one head")
        if self.objective == "scan" and self.batch_size <= self.n_clusters:
            logger.warning(
                "scan objective with batch_size=%d <= n_clusters=%d: the batch "
                "estimate of the cluster distribution will be unreliable",
                self.batch_size, self.n_clusters,
            )


def _init_params(rng: np.random.Generator, h: int, d: int, c: int, hidden: int) -> dict:
    if hidden > 0:
        return {
            "w1": rng.normal(0.0, 0.02, size=(h, d, hidden)),
            "b1": np.zeros((h, hidden)),
            "w2": rng.normal(0.0, 0.02, size=(h, hidden, c)),
            "b2": np.zeros((h, c)),
        }
    return {
        "w": rng.normal(0.0, 0.02, size=(h, d, c)),
        "b": np.zeros((h, c)),
    }


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params: dict, z: np.ndarray, temp: float) -> tuple[np.ndarray, dict]:
    """Probabilities (H, B, C) plus the cache needed for backprop."""
    if "w1" in params:
        pre = np.einsum("bd,hdw->hbw", z, params["w1"]) + params["b1"][:, None, :]
        hid = np.maximum(pre, 0.0)
        logits = np.einsum("hbw,hwc->hbc", hid, params["w2"]) + params["b2"][:, None, :]
        cache = {"z": z, "pre": pre, "hid": hid}
    else:
        logits = np.einsum("bd,hdc->hbc", z, params["w"]) + params["b"][:, None, :]
        cache = {"z": z}
    return _softmax(logits / temp), cache


def _backprop(params: dict, cache: dict, g_logits: np.ndarray, grads: dict) -> None:
    """Accumulate parameter gradients for d(loss)/d(logits) = g_logits."""
    if "w1" in params:
        grads["w2"] += np.einsum("hbw,hbc->hwc", cache["hid"], g_logits)
        grads["b2"] += g_logits.sum(axis=1)
        g_hid = np.einsum("hbc,hwc->hbw", g_logits, params["w2"]) * (cache["pre"] > 0)
        grads["w1"] += np.einsum("bd,hbw->hdw", cache["z"], g_hid)
        grads["b1"] += g_hid.sum(axis=1)
    else:
        grads["w"] += np.einsum("bd,hbc->hdc", cache["z"], g_logits)
        grads["b"] += g_logits.sum(axis=1)


@dataclass
class HeadBank:
    """H independent student/teacher heads plus the running teacher cluster prior."""

    student: dict
    teacher: dict
    prior: np.ndarray                  # (H, C), rows sum to 1
    config: TrainConfig
    final_losses: np.ndarray | None = None

    @property
    def n_heads(self) -> int:
        return self.prior.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.prior.shape[1]

    @property
    def n_features(self) -> int:
        key = "w1" if "w1" in self.student else "w"
        return self.student[key].shape[1]


def new_head_bank(config: TrainConfig, n_features: int) -> HeadBank:
    config.validate()
    rng = np.random.default_rng(config.seed)
    student = _init_params(rng, config.n_heads, n_features, config.n_clusters, config.hidden_dim)
    teacher = {k: v.copy() for k, v in student.items()}
    prior = np.full((config.n_heads, config.n_clusters), 1.0 / config.n_clusters)
    return HeadBank(student=student, teacher=teacher, prior=prior, config=config)


def forward(bank: HeadBank, role: str, head_index: int, z: np.ndarray) -> np.ndarray:
    """Softmax class probabilities of one head for a batch of feature rows."""
    params = {"student": bank.student, "teacher": bank.teacher}[role]
    temp = bank.config.student_temp if role == "student" else bank.config.teacher_temp
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != bank.n_features:
        raise DimensionMismatch(f"expected {bank.n_features} columns, got {z.shape[1]}")
    probs, _ = _forward(params, z, temp)
    return probs[head_index]


# ---------------------------------------------------------------------------
# Losses (probability space)
# ---------------------------------------------------------------------------

def instance_weight(qt_x: np.ndarray, qt_xp: np.ndarray) -> np.ndarray:
    """Teacher-teacher agreement of a pair, averaged over heads: (B,) in (0, 1]."""
    return np.einsum("hbc,hbc->b", qt_x, qt_xp) / qt_x.shape[0]

def temi_loss_from_probs(
    qs_x: np.ndarray,
    qt_x: np.ndarray,
    qs_xp: np.ndarray,
    qt_xp: np.ndarray,
    prior: np.ndarray,
    beta: float,
    symmetrize: bool = True,
    weight: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-head, per-pair loss (H, B) and the shared instance weight (B,).

    All inputs are (H, B, C) probability rows except ``prior`` at (H, C).
    """
    if weight is None:
        weight = instance_weight(qt_x, qt_xp)
    prior = np.maximum(prior, PROB_FLOOR)[:, None, :]
    s1 = np.sum(
        np.power(np.maximum(qs_x * qt_xp, PROB_FLOOR * PROB_FLOOR), beta) / prior, axis=-1
    )
    loss = -weight[None, :] * np.log(s1)
    if symmetrize:
        s2 = np.sum(
            np.power(np.maximum(qs_xp * qt_x, PROB_FLOOR * PROB_FLOOR), beta) / prior, axis=-1
        )
        loss = 0.5 * (loss - weight[None, :] * np.log(s2))
    return loss, weight


def scan_loss_from_probs(
    qs_x: np.ndarray,
    qt_x: np.ndarray,
    qs_xp: np.ndarray,
    qt_xp: np.ndarray,
    entropy_weight: float,
    batch_mean: np.ndarray | None = None,
    symmetrize: bool = True,
) -> np.ndarray:
    """Per-head, per-pair consistency loss plus the batch entropy term (H, B).

    ``batch_mean`` is the mini-batch mean of the student distribution (H, C);
    by default it is estimated from the student rows passed in.
    """
    if batch_mean is None:
        batch_mean = 0.5 * (qs_x.mean(axis=1) + qs_xp.mean(axis=1))
    inner1 = np.maximum(np.einsum("hbc,hbc->hb", qt_x, qs_xp), PROB_FLOOR)
    loss = -np.log(inner1)
    if symmetrize:
        inner2 = np.maximum(np.einsum("hbc,hbc->hb", qt_xp, qs_x), PROB_FLOOR)
        loss = 0.5 * (loss - np.log(inner2))
    m = np.maximum(batch_mean, PROB_FLOOR)
    ent = np.sum(m * np.log(m), axis=-1)  # negative entropy; spreads mass when minimized
    return loss + entropy_weight * ent[:, None]


def update_prior(prior: np.ndarray, teacher_probs: np.ndarray, momentum: float) -> np.ndarray:
    """EMA of the teacher's marginal cluster distribution over mini-batches."""
    if not (0.0 < momentum < 1.0):
        raise ValueError("momentum must lie in (0, 1)")
    batch_mean = teacher_probs.mean(axis=1) if teacher_probs.ndim == 3 else teacher_probs
    new = momentum * prior + (1.0 - momentum) * batch_mean
    new = np.maximum(new, PROB_FLOOR)
    return new / new.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Losses (feature space, via a bank)
# ---------------------------------------------------------------------------

def _pair_probs(bank: HeadBank, x: np.ndarray, xp: np.ndarray):
    cfg = bank.config
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xp = np.atleast_2d(np.asarray(xp, dtype=np.float64))
    qs_x, cache_x = _forward(bank.student, x, cfg.student_temp)
    qs_xp, cache_xp = _forward(bank.student, xp, cfg.student_temp)
    qt_x, _ = _forward(bank.teacher, x, cfg.teacher_temp)
    qt_xp, _ = _forward(bank.teacher, xp, cfg.teacher_temp)
    return qs_x, qt_x, qs_xp, qt_xp, cache_x, cache_xp


def temi_loss(
    bank: HeadBank, x: np.ndarray, xp: np.ndarray, beta: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized per-head batch loss (H,) and instance weights (B,)."""
    beta = bank.config.beta if beta is None else beta
    qs_x, qt_x, qs_xp, qt_xp, _, _ = _pair_probs(bank, x, xp)
    loss, weight = temi_loss_from_probs(qs_x, qt_x, qs_xp, qt_xp, bank.prior, beta)
    return loss.mean(axis=1), weight


def scan_loss(
    bank: HeadBank,
    x: np.ndarray,
    xp: np.ndarray,
    entropy_weight: float | None = None,
    batch_mean: np.ndarray | None = None,
) -> np.ndarray:
    """Symmetrized per-head batch loss (H,)."""
    alpha = bank.config.entropy_weight if entropy_weight is None else entropy_weight
    qs_x, qt_x, qs_xp, qt_xp, _, _ = _pair_probs(bank, x, xp)
    loss = scan_loss_from_probs(qs_x, qt_x, qs_xp, qt_xp, alpha, batch_mean)
    return loss.mean(axis=1)


# ---------------------------------------------------------------------------
# Analytic gradients
# ---------------------------------------------------------------------------

def _temi_logit_grad(qs: np.ndarray, qt: np.ndarray, prior: np.ndarray, beta: float) -> np.ndarray:
    """d(-log S)/d(student logits) up to the beta/tau scale, exact under flooring.

    Floored coordinates of the sharpened joint term carry no gradient, so
    only the live part of the sum propagates.
    """
    raw = qs * qt
    live = raw > PROB_FLOOR * PROB_FLOOR
    a = np.power(np.maximum(raw, PROB_FLOOR * PROB_FLOOR), beta) / np.maximum(prior, PROB_FLOOR)[:, None, :]
    s = a.sum(axis=-1, keepdims=True)
    live_mass = (a * live).sum(axis=-1, keepdims=True)
    return qs * (live_mass / s) - a * live / s


def step_losses_and_grads(
    bank: HeadBank, x: np.ndarray, xp: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Per-head batch losses (H,) and student parameter gradients for one step.

    Teacher probabilities, the prior, and the instance weights are constants
    here; only the student carries gradients.
    """
    cfg = bank.config
    qs_x, qt_x, qs_xp, qt_xp, cache_x, cache_xp = _pair_probs(bank, x, xp)
    h, b, c = qs_x.shape
    tau = cfg.student_temp
    grads = {k: np.zeros_like(v) for k, v in bank.student.items()}

    if cfg.objective == "temi":
        loss_hb, weight = temi_loss_from_probs(
            qs_x, qt_x, qs_xp, qt_xp, bank.prior, cfg.beta
        )
        scale = cfg.beta * weight[None, :, None] / (2.0 * b * tau)
        g_x = scale * _temi_logit_grad(qs_x, qt_xp, bank.prior, cfg.beta)
        g_xp = scale * _temi_logit_grad(qs_xp, qt_x, bank.prior, cfg.beta)
    elif cfg.objective == "scan":
        loss_hb = scan_loss_from_probs(qs_x, qt_x, qs_xp, qt_xp, cfg.entropy_weight)
        inner1 = np.einsum("hbc,hbc->hb", qt_x, qs_xp)
        live1 = (inner1 > PROB_FLOOR)[:, :, None]
        u1 = qt_x * qs_xp / np.maximum(inner1, PROB_FLOOR)[:, :, None]
        inner2 = np.einsum("hbc,hbc->hb", qt_xp, qs_x)
        live2 = (inner2 > PROB_FLOOR)[:, :, None]
        u2 = qt_xp * qs_x / np.maximum(inner2, PROB_FLOOR)[:, :, None]
        g_xp = live1 * (qs_xp - u1) / (2.0 * b * tau)
        g_x = live2 * (qs_x - u2) / (2.0 * b * tau)
        # Entropy regularizer on the batch mean of all 2B student rows; the
        # flooring makes the term constant in floored coordinates.
        mean = 0.5 * (qs_x.mean(axis=1) + qs_xp.mean(axis=1))
        v = (np.log(np.maximum(mean, PROB_FLOOR)) + 1.0) * (mean > PROB_FLOOR)
        v = v[:, None, :]
        coef = cfg.entropy_weight / (2.0 * b * tau)
        g_x = g_x + coef * qs_x * (v - np.sum(qs_x * v, axis=-1, keepdims=True))
        g_xp = g_xp + coef * qs_xp * (v - np.sum(qs_xp * v, axis=-1, keepdims=True))
    else:
        raise ValueError(f"unknown objective {cfg.objective!r}")

    _backprop(bank.student, cache_x, g_x, grads)
    _backprop(bank.student, cache_xp, g_xp, grads)
    return loss_hb.mean(axis=1), grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    """Per-epoch mean loss per head, plus the smallest prior entry per epoch."""

    epoch_losses: np.ndarray           # (epochs, H)
    min_prior: np.ndarray              # (epochs,)

    def to_csv(self) -> str:
        lines = ["epoch,head,loss,min_prior"]
        for e in range(self.epoch_losses.shape[0]):
            for h in range(self.epoch_losses.shape[1]):
                lines.append(f"{e + 1},{h},{self.epoch_losses[e, h]!r},{self.min_prior[e]!r}")
        return "\n".join(lines) + "\n"


def train(
    features: FeatureMatrix, table: NeighborTable, config: TrainConfig
) -> tuple[HeadBank, TrainingLog]:
    """Train a head bank on (anchor, random-mined-neighbor) pairs.

    Per step: analytic student update (SGD with momentum), then the teacher
    EMA update and the prior EMA update from the anchors' teacher rows.
    """
    config.validate()
    if table.n_rows != features.n_rows:
        raise NeighborMisaligned(
            f"neighbor table has {table.n_rows} rows, features {features.n_rows}"
        )
    bank = new_head_bank(config, features.n_cols)
    x = features.values.astype(np.float64)
    rng = np.random.default_rng(config.seed)
    n = features.n_rows
    bsz = min(config.batch_size, n)
    velocity = {k: np.zeros_like(v) for k, v in bank.student.items()}
    epoch_losses = np.zeros((config.epochs, config.n_heads))
    min_prior = np.zeros(config.epochs)
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        n_steps = 0
        sums = np.zeros(config.n_heads)
        for start in range(0, n - bsz + 1, bsz):
            anchors = perm[start : start + bsz]
            nbr_slot = rng.integers(0, table.k, size=anchors.shape[0])
            partners = table.ids[anchors, nbr_slot]
            losses, grads = step_losses_and_grads(bank, x[anchors], x[partners])
            if not np.all(np.isfinite(losses)):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch + 1}, step {n_steps + 1}: {losses}"
                )
            for key, g in grads.items():
                if config.weight_decay and key.startswith("w"):
                    g = g + config.weight_decay * bank.student[key]
                velocity[key] = config.sgd_momentum * velocity[key] + g
                bank.student[key] -= config.lr * velocity[key]
            m = config.teacher_momentum
            for key in bank.teacher:
                bank.teacher[key] = m * bank.teacher[key] + (1.0 - m) * bank.student[key]
            qt_anchor, _ = _forward(bank.teacher, x[anchors], config.teacher_temp)
            bank.prior = update_prior(bank.prior, qt_anchor, config.prior_momentum)
            sums += losses
            n_steps += 1
        epoch_losses[epoch] = sums / max(n_steps, 1)
        min_prior[epoch] = float(bank.prior.min())
    bank.final_losses = epoch_losses[-1].copy()
    return bank, TrainingLog(epoch_losses=epoch_losses, min_prior=min_prior)


def select_head(bank: HeadBank, log: TrainingLog) -> int:
    """The head with the lowest final-epoch mean loss (lowest index on ties)."""
    if log.epoch_losses.size == 0:
        raise ValueError("empty training log")
    return int(np.argmin(log.epoch_losses[-1]))


def predict_topk(
    bank: HeadBank, head_index: int, features: FeatureMatrix, k: int
) -> ClusterAssignment:
    """Top-k clusters from the selected head's teacher probabilities."""
    if k > bank.n_clusters:
        raise KTooLarge(f"k={k} exceeds C={bank.n_clusters}")
    probs = forward(bank, "teacher", head_index, features.values)
    return topk_from_scores(probs, k, confidences=probs, confidence_source="head_softmax")


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------

@dataclass
class ProbeResult:
    accuracy: float
    per_class_accuracy: dict[int, float]
    best_lr: float
    best_weight_decay: float

    def per_class_csv(self) -> str:
        lines = ["class_id,accuracy"]
        for cls in sorted(self.per_class_accuracy):
            lines.append(f"{cls},{self.per_class_accuracy[cls]!r}")
        return "\n".join(lines) + "\n"


DEFAULT_PROBE_LRS = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3)
DEFAULT_PROBE_WDS = (0.0, 1e-3, 1e-5)


def _train_logistic(
    x: np.ndarray, y: np.ndarray, c: int, lr: float, wd: float,
    epochs: int, batch: int, seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    n, d = x.shape
    w = np.zeros((d, c))
    bias = np.zeros(c)
    vel_w = np.zeros_like(w)
    vel_b = np.zeros_like(bias)
    bsz = min(batch, n)
    onehot_rows = np.eye(c)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n - bsz + 1, bsz):
            idx = perm[start : start + bsz]
            probs = _softmax(x[idx] @ w + bias)
            g = (probs - onehot_rows[y[idx]]) / idx.shape[0]
            gw = x[idx].T @ g + wd * w
            gb = g.sum(axis=0)
            vel_w = 0.9 * vel_w + gw
            vel_b = 0.9 * vel_b + gb
            w -= lr * vel_w
            bias -= lr * vel_b
    return w, bias


def linear_probe(
    train_features: FeatureMatrix,
    train_labels: LabelVector,
    val_features: FeatureMatrix,
    val_labels: LabelVector,
    lrs=DEFAULT_PROBE_LRS,
    wds=DEFAULT_PROBE_WDS,
    epochs: int = 100,
    batch: int = 256,
    seed: int = 0,
) -> ProbeResult:
    """Grid-searched multinomial-logistic probe; returns the best validation accuracy.

    The per-class accuracy table of the winning grid point feeds the
    model-based benchmark subsets.
    """
    from .seeding import derive_seed

    c = max(train_labels.n_classes, val_labels.n_classes)
    xt = train_features.values.astype(np.float64)
    xv = val_features.values.astype(np.float64)
    best = None
    for lr in lrs:
        for wd in wds:
            child = derive_seed(seed, f"probe:lr={lr!r}:wd={wd!r}")
            w, bias = _train_logistic(
                xt, train_labels.labels, c, lr, wd, epochs, batch, child
            )
            pred = np.argmax(xv @ w + bias, axis=1)
            acc = float(np.mean(pred == val_labels.labels))
            if best is None or acc > best[0]:
                best = (acc, lr, wd, pred)
    acc, lr, wd, pred = best
    per_class = {}
    for cls in range(c):
        mask = val_labels.labels == cls
        if mask.any():
            per_class[cls] = float(np.mean(pred[mask] == cls))
    return ProbeResult(accuracy=acc, per_class_accuracy=per_class, best_lr=lr, best_weight_decay=wd)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"CBHB"


def save_head_bank(path: str | Path, bank: HeadBank) -> None:
    """Single-file checkpoint: JSON header, then raw float32 parameter blobs."""
    arrays: dict[str, np.ndarray] = {}
    for role, params in (("student", bank.student), ("teacher", bank.teacher)):
        for key, value in params.items():
            arrays[f"{role}.{key}"] = value
    arrays["prior"] = bank.prior
    if bank.final_losses is not None:
        arrays["final_losses"] = bank.final_losses
    manifest = {
        "config": {k: getattr(bank.config, k) for k in bank.config.__dataclass_fields__},
        "arrays": {name: list(a.shape) for name, a in sorted(arrays.items())},
    }
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name in sorted(arrays):
            fh.write(arrays[name].astype("<f4").tobytes())


def load_head_bank(path: str | Path) -> HeadBank:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise HeadsError(f"{path}: not a head-bank checkpoint")
        (length,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(length).decode())
        arrays = {}
        for name, shape in sorted(manifest["arrays"].items()):
            count = int(np.prod(shape))
            buf = np.frombuffer(fh.read(count * 4), dtype="<f4")
            arrays[name] = buf.reshape(shape).astype(np.float64)
    config = TrainConfig(**manifest["config"])
    student = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("student.")}
    teacher = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("teacher.")}
    bank = HeadBank(
        student=student, teacher=teacher, prior=arrays["prior"], config=config,
        final_losses=arrays.get("final_losses"),
    )
    return bank

"""Training orchestration: binary-NCE / pairwise-ranking losses, Adam, and the
epoch loop with negative sampling, curriculum and early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tz
from .data import Splits, Vocab, make_batches
from .encoder import EncoderConfig, EncoderParams, encode, init_params
from .evaluation import evaluate
from .samplers import Forbidden, SamplerSpec, beta_schedule, curriculum_step, sample_negatives
from .tensor import NumericError, Tensor, UsageError

METRICS_HEADER = "epoch,loss,alpha,beta,hr5,hr10,ndcg5,ndcg10,seconds"
SIGMOID_CLAMP = 1e-7


@dataclass
class TrainConfig:
    objective: str = "nce"  # nce | bpr
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 40
    seed: int = 0
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    encoder: EncoderConfig | None = None  # n_items filled in from the vocab

    def __post_init__(self):
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if self.patience < 1:
            raise UsageError("patience must be >= 1")
        if self.objective not in ("nce", "bpr"):
            raise UsageError(f"unknown objective: {self.objective}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    alpha: float
    beta: float
    hr5: float
    hr10: float
    ndcg5: float
    ndcg10: float
    seconds: float

    def csv(self, seconds: float | None = None) -> str:
        s = self.seconds if seconds is None else seconds
        return ",".join([
            str(self.epoch),
            repr(self.loss), repr(self.alpha), repr(self.beta),
            repr(self.hr5), repr(self.hr10), repr(self.ndcg5), repr(self.ndcg10),
            repr(float(s)),
        ])


@dataclass
class RunMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def csv_lines(self, seconds_override=None) -> list[str]:
        """Rows under the fixed header. seconds_override (a list) substitutes
        recorded timings, e.g. when regenerating outputs from a manifest."""
        lines = [METRICS_HEADER]
        for i, rec in enumerate(self.epochs):
            s = None if seconds_override is None else seconds_override[i]
            lines.append(rec.csv(seconds=s))
        return lines


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _gather_valid(h: Tensor, emb: Tensor, targets: np.ndarray,
                  negatives: np.ndarray, mask: np.ndarray):
    """Flatten the masked grid into per-position score tensors.

    negatives may be [B, T, k] (grid) or [N, k] already aligned with the
    mask's True positions, which is how the trainer calls it.
    """
    B, T, d = h.shape
    vi = np.flatnonzero(np.asarray(mask).ravel())
    if vi.size == 0:
        raise UsageError("loss needs at least one unmasked position")
    t_flat = np.asarray(targets).ravel()[vi]
    neg = np.asarray(negatives)
    if neg.ndim == 3:
        neg = neg.reshape(B * T, -1)[vi]
    if neg.shape[0] != vi.size:
        raise UsageError("negatives do not align with the mask")
    k = neg.shape[1]
    hv = tz.rows(tz.reshape(h, (B * T, d)), vi)
    pos_emb = tz.rows(emb, t_flat)
    pos_score = tz.tsum(tz.mul(hv, pos_emb), axis=-1)
    neg_emb = tz.reshape(tz.rows(emb, neg.ravel()), (vi.size, k, d))
    neg_score = tz.tsum(tz.mul(tz.reshape(hv, (vi.size, 1, d)), neg_emb), axis=-1)
    return pos_score, neg_score, vi.size, k


def _log_sigmoid_clamped(x: Tensor) -> Tensor:
    return tz.log(tz.clip(tz.sigmoid(x), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP))


def nce_loss(h: Tensor, emb: Tensor, targets, negatives, mask) -> Tensor:
    """Binary-classification loss: -log sigma(h.s+) - sum_j log(1 - sigma(h.s-_j)),
    averaged over unmasked positions. Sigmoids are clamped before the log."""
    pos_score, neg_score, n, _ = _gather_valid(h, emb, targets, negatives, mask)
    one_minus = tz.clip(1.0 - tz.sigmoid(neg_score), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    total = tz.add(tz.tsum(-_log_sigmoid_clamped(pos_score)), tz.tsum(-tz.log(one_minus)))
    return tz.mul(total, 1.0 / n)


def bpr_loss(h: Tensor, emb: Tensor, targets, negatives, mask) -> Tensor:
    """Pairwise ranking loss -log sigma(h.s+ - h.s-_j), averaged over unmasked
    positions and negatives."""
    pos_score, neg_score, n, k = _gather_valid(h, emb, targets, negatives, mask)
    margin = tz.add(tz.reshape(pos_score, (n, 1)), tz.mul(neg_score, -1.0))
    return tz.mul(tz.tsum(-_log_sigmoid_clamped(margin)), 1.0 / (n * k))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              m: list[np.ndarray], v: list[np.ndarray],
              lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """One bias-corrected Adam update, in place. t is 1-based."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        if g is None:
            continue
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


class AdamState:
    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, params: list[Tensor], lr: float, beta1: float, beta2: float, eps: float) -> None:
        self.t += 1
        adam_step([p.data for p in params], [p.grad for p in params],
                  self.m, self.v, lr, beta1, beta2, eps, self.t)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


class TrainingDiverged(NumericError):
    """Raised on a non-finite loss; carries the offending batch for dumping."""

    def __init__(self, message: str, batch_dump: dict):
        super().__init__(message)
        self.batch_dump = batch_dump


def train(config: TrainConfig, splits: Splits, vocab: Vocab,
          epoch_callback=None) -> tuple[EncoderParams, RunMetrics]:
    """Run the full optimization and return (best-validation params, metrics).

    Per epoch: schedule beta, iterate deterministic batches, encode, sample
    negatives with the start-of-batch parameters, take an Adam step, and
    optionally curriculum-adjust alpha per batch from the smoothed loss trend.
    Early-stops when validation NDCG@10 has not improved for `patience` epochs.
    """
    spec = config.sampler
    enc_cfg = config.encoder or EncoderConfig(n_items=vocab.n_items)
    if enc_cfg.n_items != vocab.n_items:
        enc_cfg = replace(enc_cfg, n_items=vocab.n_items)
    params = init_params(enc_cfg, config.seed)
    tensors = params.parameters()
    adam = AdamState(tensors)
    loss_fn = nce_loss if config.objective == "nce" else bpr_loss
    metrics = RunMetrics()
    best = params.copy()
    best_ndcg = -np.inf
    epochs_since_best = 0
    alpha = spec.alpha
    smoothed: float | None = None

    for epoch in range(config.max_epochs):
        tic = time.perf_counter()
        beta = beta_schedule(spec.beta_mode, spec.beta, spec.m, epoch)
        batch_losses: list[float] = []
        for bi, batch in enumerate(make_batches(splits.train, config.batch_size,
                                                enc_cfg.max_len, config.seed, epoch)):
            drop_rng = np.random.Generator(np.random.SFC64((config.seed, 3, epoch, bi)))
            samp_rng = np.random.Generator(np.random.SFC64((config.seed, 4, epoch, bi)))
            # cropping leading all-padding columns is exact (right-aligned
            # positional indexing) and skips most of the padded compute
            lead = int(np.argmax((batch.inputs != 0).any(axis=0)))
            inputs, targets, mask = (batch.inputs[:, lead:], batch.targets[:, lead:],
                                     batch.mask[:, lead:])
            h = encode(params, inputs, train=True, rng=drop_rng)
            vi = np.flatnonzero(mask.ravel())
            flat_targets = targets.ravel()[vi]
            h_flat = h.data.reshape(-1, enc_cfg.d)[vi]
            forbidden = None
            if spec.exclude_history:
                B, T = inputs.shape
                hist = np.zeros((B, vocab.n_items + 1), dtype=bool)
                rows_idx = np.repeat(np.arange(B), T)
                hist[rows_idx, inputs.ravel()] = True
                hist[rows_idx, targets.ravel()] = True
                hist[:, 0] = False
                forbidden = Forbidden(hist, rows_idx[vi])
            draw = sample_negatives(
                spec, flat_targets, spec.k, samp_rng,
                h=h_flat, embeddings=params.item_embeddings,
                popularity=vocab.popularity, beta=beta, alpha=alpha,
                forbidden=forbidden,
            )
            loss = loss_fn(h, params["item_emb"], targets, draw.indices, mask)
            raw = float(loss.data)
            if not np.isfinite(raw):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {bi}",
                    {"epoch": epoch, "batch": bi, "inputs": batch.inputs,
                     "targets": batch.targets, "negatives": draw.indices},
                )
            tz.zero_grads(tensors)
            tz.backward(loss)
            adam.step(tensors, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            batch_losses.append(raw)
            if spec.curriculum.enabled:
                cur = spec.curriculum
                s = raw if smoothed is None else cur.smoothing * smoothed + (1.0 - cur.smoothing) * raw
                if smoothed is not None:
                    alpha = curriculum_step(alpha, smoothed, s, cur.delta, cur.alpha_min, cur.alpha_max)
                smoothed = s

        val = evaluate(params, splits.valid_contexts, splits.valid_targets, k_list=(5, 10))
        rec = EpochRecord(
            epoch=epoch, loss=float(np.mean(batch_losses)), alpha=float(alpha), beta=float(beta),
            hr5=val.hr[5], hr10=val.hr[10], ndcg5=val.ndcg[5], ndcg10=val.ndcg[10],
            seconds=time.perf_counter() - tic,
        )
        metrics.epochs.append(rec)
        if epoch_callback is not None:
            epoch_callback(rec)
        if val.ndcg[10] > best_ndcg:
            best_ndcg = val.ndcg[10]
            best = params.copy()
            metrics.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break
    return best, metrics

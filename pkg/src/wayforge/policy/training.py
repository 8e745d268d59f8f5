"""Training for the waypoint predictor: masked MSE over normalized
positions, Adam, seeded 70/15/15 splits, early stopping on validation loss,
and balanced-batch fine-tuning against a corrections dataset.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..dataset import Dataset
from ..geometry import Pose, quat_slerp
from ..trajectory import Arm, Gripper, Trajectory, Waypoint
from .encoding import QUERY_DIM
from .networks import build_network

TICK_DT = 0.05


class EmptyDataset(ValueError):
    pass


class EmptyCorrections(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    architecture: str = "lstm"  # gru | lstm | attention
    hidden_size: int = 50
    layers: int = 2
    d_model: int = 128
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    batch_size: int = 32
    learning_rate: float = 0.001
    max_epochs: int = 100
    early_stop_patience: int = 10
    horizon: int = 100
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    target_val_loss: float | None = None  # optional: stop once validation reaches this

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "hidden_size": self.hidden_size,
            "layers": self.layers,
            "d_model": self.d_model,
            "heads": self.heads,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "horizon": self.horizon,
            "split": list(self.split),
            "seed": self.seed,
            "target_val_loss": self.target_val_loss,
        }

    @staticmethod
    def from_dict(d: dict) -> "PolicyConfig":
        d = dict(d)
        d["split"] = tuple(d.get("split", (0.70, 0.15, 0.15)))
        return PolicyConfig(**d)


@dataclass
class NormStats:
    q_mean: np.ndarray
    q_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    def to_dict(self) -> dict:
        return {
            "q_mean": [float(v) for v in self.q_mean],
            "q_scale": [float(v) for v in self.q_scale],
            "y_mean": [float(v) for v in self.y_mean],
            "y_scale": [float(v) for v in self.y_scale],
        }

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(*(np.array(d[k], dtype=float) for k in ("q_mean", "q_scale", "y_mean", "y_scale")))


@dataclass
class WaypointPolicy:
    config: PolicyConfig
    params: dict
    norm: NormStats

    @property
    def network(self):
        c = self.config
        return build_network(
            c.architecture, horizon=c.horizon, hidden=c.hidden_size, layers=c.layers,
            d_model=c.d_model, heads=c.heads, enc_layers=c.enc_layers, dec_layers=c.dec_layers,
        )


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    stop_epoch: int = -1
    test_loss: float = float("nan")
    wall_time: float = 0.0
    batch_tallies: list = field(default_factory=list)  # (from_primary, from_corrections)

    def to_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
            "test_loss": self.test_loss,
            "wall_time": self.wall_time,
        }


def dataset_arrays(dataset: Dataset, horizon: int):
    """Queries (N, 15), padded positions (N, H, 3), and validity masks (N, H)."""
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("dataset holds no entries")
    Q = np.zeros((n, QUERY_DIM))
    Y = np.zeros((n, horizon, 3))
    M = np.zeros((n, horizon))
    for i, e in enumerate(dataset.entries):
        Q[i] = e.query
        pos = e.trajectory.positions()
        if len(pos) > horizon:
            raise ValueError(
                f"entry {i} has {len(pos)} waypoints, beyond the {horizon}-step horizon"
            )
        Y[i, : len(pos)] = pos
        M[i, : len(pos)] = 1.0
    return Q, Y, M


def masked_mse(pred, target, mask):
    d = (pred - target) * mask[..., None]
    denom = mask.sum() * pred.shape[-1]
    return float((d * d).sum() / denom)


def loss_and_grads(net, params, Qn, Yn, mask, loss_scale: float = 1.0):
    """Masked-MSE loss and parameter gradients for one (normalized) batch."""
    pred, cache = net.forward(params, Qn)
    d = (pred - Yn) * mask[..., None]
    denom = mask.sum() * pred.shape[-1]
    loss = loss_scale * float((d * d).sum() / denom)
    dpred = loss_scale * 2.0 * d / denom
    grads = net.backward(params, cache, dpred)
    return loss, grads


class AdamState:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def update(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            params[k] -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _relative_targets(Q, Y):
    """Positions relative to the query's end position: the approach tail
    becomes a nearly query-independent shape, which is what execution
    accuracy depends on."""
    return Y - Q[:, 8:11][:, None, :]


def _normalizers(Q, Yrel, M):
    q_mean = Q.mean(axis=0)
    q_std = Q.std(axis=0)
    q_scale = np.where(q_std > 1e-9, q_std, 1.0)
    valid = M.astype(bool)
    pts = Yrel[valid]
    y_mean = pts.mean(axis=0)
    y_std = pts.std(axis=0)
    y_scale = np.where(y_std > 1e-9, y_std, 1.0)
    return NormStats(q_mean, q_scale, y_mean, y_scale)


def _split_indices(n, split, rng):
    idx = rng.permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :]


def _epoch_loss(net, params, Q, Y, M, batch: int) -> float:
    if len(Q) == 0:
        return float("nan")
    total, count = 0.0, 0.0
    for s in range(0, len(Q), batch):
        q, y, m = Q[s : s + batch], Y[s : s + batch], M[s : s + batch]
        pred, _ = net.forward(params, q)
        d = (pred - y) * m[..., None]
        total += float((d * d).sum())
        count += m.sum() * 3
    return total / count


class Trainer:
    """Single-threaded deterministic trainer shared by train and fine_tune."""

    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg
        self.net = build_network(
            cfg.architecture, horizon=cfg.horizon, hidden=cfg.hidden_size, layers=cfg.layers,
            d_model=cfg.d_model, heads=cfg.heads, enc_layers=cfg.enc_layers, dec_layers=cfg.dec_layers,
        )

    def _validation_loss(self, params, Qv, Yv, Mv) -> float:
        return _epoch_loss(self.net, params, Qv, Yv, Mv, self.cfg.batch_size)

    def run(self, params, batches, val_data, test_data, report: TrainReport):
        """batches: callable(epoch) -> iterable of (Qb, Yb, Mb [, tally])."""
        cfg = self.cfg
        adam = AdamState(params, cfg.learning_rate)
        best_val = np.inf
        best_params = {k: v.copy() for k, v in params.items()}
        t0 = time.time()
        for epoch in range(cfg.max_epochs):
            epoch_total, epoch_count = 0.0, 0
            for batch in batches(epoch):
                if len(batch) == 4:
                    qb, yb, mb, tally = batch
                    report.batch_tallies.append(tally)
                else:
                    qb, yb, mb = batch
                loss, grads = loss_and_grads(self.net, params, qb, yb, mb)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch} after {adam.t} updates"
                    )
                adam.update(params, grads)
                epoch_total += loss
                epoch_count += 1
            report.train_losses.append(epoch_total / max(epoch_count, 1))
            val = self._validation_loss(params, *val_data)
            report.val_losses.append(val)
            if val < best_val:
                best_val = val
                best_params = {k: v.copy() for k, v in params.items()}
                report.best_epoch = epoch
            elif epoch - report.best_epoch >= cfg.early_stop_patience:
                break
            if cfg.target_val_loss is not None and val <= cfg.target_val_loss:
                break
        report.stop_epoch = len(report.val_losses) - 1
        report.test_loss = _epoch_loss(self.net, best_params, *test_data, cfg.batch_size)
        report.wall_time = time.time() - t0
        return best_params


def train(dataset: Dataset, cfg: PolicyConfig):
    """Train a waypoint policy from scratch. Returns (policy, report)."""
    Q, Y, M = dataset_arrays(dataset, cfg.horizon)
    root = np.random.SeedSequence([cfg.seed & (2**63 - 1), 211])
    split_rng, init_rng, order_rng = (np.random.default_rng(s) for s in root.spawn(3))
    tr, va, te = _split_indices(len(Q), cfg.split, split_rng)
    Yrel = _relative_targets(Q, Y)
    norm = _normalizers(Q[tr], Yrel[tr], M[tr])
    Qn = (Q - norm.q_mean) / norm.q_scale
    Yn = (Yrel - norm.y_mean) / norm.y_scale
    Yn *= M[..., None]

    trainer = Trainer(cfg)
    params = trainer.net.init(init_rng)

    def batches(epoch):
        order = order_rng.permutation(tr)
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s : s + cfg.batch_size]
            yield Qn[sel], Yn[sel], M[sel]

    report = TrainReport()
    best = trainer.run(
        params, batches, (Qn[va], Yn[va], M[va]), (Qn[te], Yn[te], M[te]), report
    )
    return WaypointPolicy(config=cfg, params=best, norm=norm), report


def fine_tune(policy: WaypointPolicy, d: Dataset, d_prime: Dataset, cfg: PolicyConfig | None = None):
    """Continue training with batches drawn half from the original data and
    half from corrections (resampled with replacement when smaller).

    Normalization is inherited from the base policy so its parameters stay
    meaningful at the start of fine-tuning.
    """
    if len(d_prime) == 0:
        raise EmptyCorrections("corrections dataset is empty")
    cfg = cfg or policy.config
    if cfg.architecture != policy.config.architecture or cfg.horizon != policy.config.horizon:
        raise ValueError("fine-tune config must match the base policy architecture")
    norm = policy.norm
    Qd, Yd, Md = dataset_arrays(d, cfg.horizon)
    Qp, Yp, Mp = dataset_arrays(d_prime, cfg.horizon)
    Yd = _relative_targets(Qd, Yd)
    Yp = _relative_targets(Qp, Yp)
    Qd = (Qd - norm.q_mean) / norm.q_scale
    Yd = ((Yd - norm.y_mean) / norm.y_scale) * Md[..., None]
    Qp = (Qp - norm.q_mean) / norm.q_scale
    Yp = ((Yp - norm.y_mean) / norm.y_scale) * Mp[..., None]

    root = np.random.SeedSequence([cfg.seed & (2**63 - 1), 223])
    split_rng, order_rng = (np.random.default_rng(s) for s in root.spawn(2))
    tr_d, va_d, te_d = _split_indices(len(Qd), cfg.split, split_rng)
    tr_p, va_p, te_p = _split_indices(len(Qp), cfg.split, split_rng)
    if len(tr_p) == 0:
        tr_p = np.arange(len(Qp))

    n_half = int(np.ceil(cfg.batch_size / 2))
    n_rest = cfg.batch_size - n_half

    def batches(epoch):
        order = order_rng.permutation(tr_d)
        for s in range(0, len(order) - n_half + 1, n_half):
            sel_d = order[s : s + n_half]
            sel_p = tr_p[order_rng.integers(0, len(tr_p), n_rest)]
            qb = np.concatenate([Qd[sel_d], Qp[sel_p]])
            yb = np.concatenate([Yd[sel_d], Yp[sel_p]])
            mb = np.concatenate([Md[sel_d], Mp[sel_p]])
            yield qb, yb, mb, (len(sel_d), len(sel_p))

    val = (
        np.concatenate([Qd[va_d], Qp[va_p]]) if len(va_p) else Qd[va_d],
        np.concatenate([Yd[va_d], Yp[va_p]]) if len(va_p) else Yd[va_d],
        np.concatenate([Md[va_d], Mp[va_p]]) if len(va_p) else Md[va_d],
    )
    test = (
        np.concatenate([Qd[te_d], Qp[te_p]]) if len(te_p) else Qd[te_d],
        np.concatenate([Yd[te_d], Yp[te_p]]) if len(te_p) else Yd[te_d],
        np.concatenate([Md[te_d], Mp[te_p]]) if len(te_p) else Md[te_d],
    )
    trainer = Trainer(cfg)
    params = {k: v.copy() for k, v in policy.params.items()}
    report = TrainReport()
    best = trainer.run(params, batches, val, test, report)
    return WaypointPolicy(config=cfg, params=best, norm=norm), report


def predict_trajectory(policy: WaypointPolicy, query: np.ndarray, arm: Arm = Arm.LEFT) -> Trajectory:
    """Horizon-length trajectory for a query: predicted intermediate
    positions with the first/last positions clamped to the query endpoints
    and orientations spherically interpolated between them."""
    query = np.asarray(query, dtype=float)
    qn = (query - policy.norm.q_mean) / policy.norm.q_scale
    pred, _ = policy.network.forward(policy.params, qn[None])
    pos = pred[0] * policy.norm.y_scale + policy.norm.y_mean + query[8:11]
    H = policy.config.horizon
    p_s, q_s = query[1:4], query[4:8]
    p_e, q_e = query[8:11], query[11:15]
    q_s = q_s / np.linalg.norm(q_s)
    q_e = q_e / np.linalg.norm(q_e)
    pos[0] = p_s
    pos[-1] = p_e
    wps = []
    for i in range(H):
        q = quat_slerp(q_s, q_e, i / (H - 1))
        wps.append(Waypoint(Pose(pos[i], q), Gripper.OPEN, i * TICK_DT))
    return Trajectory(waypoints=tuple(wps), arm=arm)


class PolicyLowLevel:
    """Adapter exposing a trained policy as the rollout's low-level source."""

    def __init__(self, policy: WaypointPolicy):
        self.policy = policy

    def __call__(self, sub, obs) -> Trajectory:
        from .encoding import encode_query

        return predict_trajectory(self.policy, encode_query(sub), arm=sub.arm)

"""Adversarial Schrodinger-bridge training on point clouds.

A time-conditional generator predicts the target endpoint from an
intermediate bridge state. Each step samples a grid index, rolls the current
generator forward along the bridge chain (no gradient through earlier steps),
and updates discriminator, entropy critic and generator in that order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .bridge import TimeGrid, simulate_chain
from .distributions import IsotropicGaussian, SampleSet, SphereShell, sample_gaussian, sample_shell
from .errors import DegenerateVectorError, InsufficientSamplesError, NumericalAbort, ParameterError, ShapeError
from .nn import (
    AdamState,
    ConditionalNet,
    Generator,
    TimeEmbedding,
    adam_step,
    dumps_nets,
    generator_backward,
    generator_forward,
    loads_nets,
)
from .numerics import Rng


@dataclass
class TrainerConfig:
    lambda_sb: float = 1.0
    lambda_reg: float = 1.0
    tau: float = 0.01
    n_steps: int = 5
    regularizer: str = "negative-cosine"
    disc_feature: str = "raw"
    iters: int = 20_000
    batch: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    decay_start: float = 0.5
    seed: int = 0
    gen_hidden: list[int] = field(default_factory=lambda: [256, 256, 256])
    disc_hidden: list[int] = field(default_factory=lambda: [128, 128, 128])
    mine_hidden: list[int] = field(default_factory=lambda: [128, 128, 128])
    z_dim: int | None = None
    embed_dim: int = 16
    entropy_grad: bool = True
    residual: bool = True

    def __post_init__(self):
        if self.lambda_sb < 0 or self.lambda_reg < 0:
            raise ParameterError("lambda_sb and lambda_reg must be non-negative")
        if not self.tau >= 0:
            raise ParameterError("tau must be non-negative")
        if self.n_steps < 1 or self.iters < 1 or self.batch < 1:
            raise ParameterError("n_steps, iters and batch must be >= 1")
        if self.regularizer not in ("none", "negative-cosine"):
            raise ParameterError(f"unknown regularizer {self.regularizer!r}")
        if self.disc_feature not in ("raw", "norm"):
            raise ParameterError(f"unknown disc_feature {self.disc_feature!r}")
        if not 0.0 <= self.decay_start <= 1.0:
            raise ParameterError("decay_start must lie in [0, 1]")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.n_steps)


# ---------------------------------------------------------------- losses


def entropy_weight(t_i: float, tau: float) -> float:
    return 2.0 * tau * (1.0 - t_i)


def loss_sb(x_ti, x1_pred, t_i: float, tau: float, entropy_est: float) -> float:
    """Transport cost minus the weighted entropy estimate, averaged over the batch."""
    diff = np.atleast_2d(x_ti) - np.atleast_2d(x1_pred)
    return float(np.mean(np.sum(diff * diff, axis=1)) - entropy_weight(t_i, tau) * entropy_est)


def _softplus(x):
    # -log(sigmoid(-x)) without clamping, so saturated logits keep their gradient
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Regularizer:
    """Similarity penalty ``R(x0, x1)``.

    ``kind`` is ``"none"``, ``"negative-cosine"`` or ``"custom"``; a custom
    regularizer supplies ``fn(x0, x1) -> (values, grad_x1)`` for batches.
    """

    def __init__(self, kind: str = "negative-cosine", fn: Callable | None = None):
        if kind not in ("none", "negative-cosine", "custom"):
            raise ParameterError(f"unknown regularizer kind {kind!r}")
        if kind == "custom" and fn is None:
            raise ParameterError("custom regularizer needs fn")
        self.kind = kind
        self.fn = fn

    def value_and_grad(self, x0, x1) -> tuple[np.ndarray, np.ndarray]:
        x0 = np.atleast_2d(x0)
        x1 = np.atleast_2d(x1)
        if self.kind == "none":
            return np.zeros(x1.shape[0]), np.zeros_like(x1)
        if self.kind == "custom":
            vals, grad = self.fn(x0, x1)
            return np.asarray(vals, dtype=np.float64), np.asarray(grad, dtype=np.float64)
        n0 = np.linalg.norm(x0, axis=1, keepdims=True)
        n1 = np.linalg.norm(x1, axis=1, keepdims=True)
        if np.any(n0 == 0) or np.any(n1 == 0):
            raise DegenerateVectorError("negative-cosine regularizer on a zero vector")
        cos = np.sum(x0 * x1, axis=1, keepdims=True) / (n0 * n1)
        grad = -(x0 / (n0 * n1) - cos * x1 / (n1 * n1))
        return -cos[:, 0], grad


def loss_reg(reg: Regularizer, x0, x1_pred) -> float:
    vals, _ = reg.value_and_grad(x0, x1_pred)
    return float(np.mean(vals))


def disc_features(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "norm":
        return np.linalg.norm(x, axis=1, keepdims=True)
    return x


def disc_features_backward(kind: str, x: np.ndarray, grad_feat: np.ndarray) -> np.ndarray:
    if kind == "norm":
        n = np.linalg.norm(x, axis=1, keepdims=True)
        return grad_feat * x / np.where(n > 0, n, 1.0)
    return grad_feat


def loss_adv(disc: ConditionalNet, real_x1, fake_x1, t_i: float, feature: str = "raw"):
    """Non-saturating logistic losses ``(d_loss, g_loss)``, batch means."""
    real = disc_features(feature, np.atleast_2d(real_x1))
    fake = disc_features(feature, np.atleast_2d(fake_x1))
    lr, _ = disc.forward([real], t_i)
    lf, _ = disc.forward([fake], t_i)
    lr, lf = lr[:, 0], lf[:, 0]
    d_loss = float(np.mean(_softplus(-lr) + _softplus(lf)))
    g_loss = float(np.mean(_softplus(-lf)))
    return d_loss, g_loss


def g_loss_and_input_grad(disc: ConditionalNet, fake_x1: np.ndarray, t_i: float, feature: str):
    """Generator adversarial loss and its gradient w.r.t. the fake samples."""
    feat = disc_features(feature, fake_x1)
    logits, tape = disc.forward([feat], t_i)
    lf = logits[:, 0]
    b = fake_x1.shape[0]
    dlogit = -_sigmoid(-lf) / b
    _, (gfeat,) = disc.backward(tape, dlogit[:, None])
    return float(np.mean(_softplus(-lf))), disc_features_backward(feature, fake_x1, gfeat)


# ---------------------------------------------------------------- entropy critic


def dv_estimate(t_joint: np.ndarray, t_marg: np.ndarray) -> float:
    """Donsker-Varadhan bound ``E_joint T - log E_marginal exp T`` (log-sum-exp shifted)."""
    b = t_marg.shape[0]
    mx = t_marg.max()
    return float(t_joint.mean() - (mx + np.log(np.exp(t_marg - mx).sum()) - np.log(b)))


def _dv_forward(mine: ConditionalNet, v: np.ndarray, perm: np.ndarray, t_i: float):
    tj, tape_j = mine.forward([v, v], t_i)
    tm, tape_m = mine.forward([v, v[perm]], t_i)
    tj, tm = tj[:, 0], tm[:, 0]
    b = v.shape[0]
    w = np.exp(tm - tm.max())
    w /= w.sum()
    return dv_estimate(tj, tm), (tape_j, np.full(b, 1.0 / b)), (tape_m, -w)


def mine_value_and_grads(mine: ConditionalNet, v: np.ndarray, perm: np.ndarray, t_i: float):
    """DV estimate, its parameter gradient and its gradient w.r.t. ``v``."""
    est, (tape_j, gj), (tape_m, gm) = _dv_forward(mine, v, perm, t_i)
    pj, (a_j, b_j) = mine.backward(tape_j, gj[:, None])
    pm, (a_m, b_m) = mine.backward(tape_m, gm[:, None])
    pgrad = [x + y for x, y in zip(pj, pm)]
    gv = a_j + b_j + a_m
    np.add.at(gv, perm, b_m)
    return est, pgrad, gv


def mine_entropy_step(mine: ConditionalNet, state: AdamState, x_ti, x1_pred, t_i: float, rng: Rng,
                      lr: float | None = None, perm: np.ndarray | None = None):
    """One ascent step of the critic on ``v = [x_ti, x1_pred]``.

    Returns ``(estimate_before_update, perm)``; ``perm`` is the shuffle used
    for the product-of-marginals term.
    """
    v = np.concatenate([np.atleast_2d(x_ti), np.atleast_2d(x1_pred)], axis=1)
    if v.shape[0] < 2:
        raise InsufficientSamplesError("entropy estimate needs a batch of at least 2")
    if perm is None:
        perm = rng.permutation(v.shape[0])
    est, pgrad, _ = mine_value_and_grads(mine, v, perm, t_i)
    adam_step(state, mine.params, [-g for g in pgrad], lr)
    mine.mlp.bump()
    return est, perm


# ---------------------------------------------------------------- model


@dataclass
class StepReport:
    iter: int
    t_index: int
    t: float
    d_loss: float
    g_loss: float
    sb_loss: float
    reg_loss: float
    entropy_est: float
    total_g: float


HISTORY_FIELDS = ["iter", "t_i", "d_loss", "g_loss", "sb_loss", "reg_loss", "entropy_est"]


class UnsbModel:
    def __init__(self, dim: int, config: TrainerConfig, regularizer: Regularizer | None = None):
        self.dim = dim
        self.config = config
        self.grid = config.grid
        self.z_dim = config.z_dim if config.z_dim is not None else min(dim, 16)
        init = Rng(config.seed).spawn(0x1A17)
        emb = TimeEmbedding(config.embed_dim)
        feat = 1 if config.disc_feature == "norm" else dim
        self.generator = Generator(dim, self.z_dim, config.gen_hidden, emb, init, config.residual)
        self.discriminator = ConditionalNet([feat], config.disc_hidden, 1, emb, init)
        self.mine_net = ConditionalNet([2 * dim, 2 * dim], config.mine_hidden, 1, emb, init)
        self.regularizer = regularizer or Regularizer(config.regularizer)
        kw = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.opt_g = AdamState(**kw)
        self.opt_d = AdamState(**kw)
        self.opt_mine = AdamState(**kw)
        self.rng = Rng(config.seed)
        self.step_count = 0

    # -- inference
    def predict(self, x_t, t: float, rng: Rng) -> np.ndarray:
        x_t = np.atleast_2d(x_t)
        z = rng.normal((x_t.shape[0], self.z_dim))
        out, _ = generator_forward(self.generator, x_t, t, z)
        return out

    def predictor(self) -> Callable:
        def _pred(x_t, t, rng):
            x = np.asarray(x_t)
            out = self.predict(x, t, rng)
            return out[0] if x.ndim == 1 else out
        return _pred

    # -- persistence
    def save(self, path) -> None:
        header = {"dim": self.dim, "z_dim": self.z_dim, "embed_dim": self.config.embed_dim,
                  "seed": self.config.seed, "step": self.step_count, "config": asdict(self.config)}
        nets = {"generator": self.generator, "discriminator": self.discriminator, "mine": self.mine_net}
        with open(path, "w") as fh:
            fh.write(dumps_nets(nets, header))

    @classmethod
    def load(cls, path) -> "UnsbModel":
        with open(path) as fh:
            header, nets = loads_nets(fh.read())
        model = cls(header["dim"], TrainerConfig(**header["config"]))
        model.generator = nets["generator"]
        model.discriminator = nets["discriminator"]
        model.mine_net = nets["mine"]
        model.step_count = header["step"]
        return model


def _draw(source, b: int, rng: Rng) -> np.ndarray:
    if isinstance(source, SampleSet):
        return source.points[rng.integers(source.n, size=b)]
    if isinstance(source, SphereShell):
        return sample_shell(source, b, rng).points
    if isinstance(source, IsotropicGaussian):
        return sample_gaussian(source, b, rng).points
    if callable(source):
        return np.asarray(source(b, rng), dtype=np.float64)
    raise TypeError(f"cannot sample from {type(source).__name__}")


def _check_finite(report: StepReport) -> None:
    vals = asdict(report)
    bad = {k: v for k, v in vals.items() if isinstance(v, float) and not math.isfinite(v)}
    if bad:
        raise NumericalAbort(f"non-finite loss at step {report.iter}: {sorted(bad)}", vals)


def generator_objective(model: UnsbModel, x0, x_ti, fake, t_i: float, entropy_est: float, perm):
    """Generator loss ``g_loss + lambda_sb * sb + lambda_reg * reg`` and its gradient w.r.t. ``fake``.

    Returns ``(g_loss, sb_loss, reg_loss, total, grad_fake)``. The entropy term
    is differentiated through the critic at its current parameters.
    """
    cfg = model.config
    b = fake.shape[0]
    g_loss, grad_fake = g_loss_and_input_grad(model.discriminator, fake, t_i, cfg.disc_feature)
    diff = fake - x_ti
    cost = float(np.mean(np.sum(diff * diff, axis=1)))
    sb_val = cost - entropy_weight(t_i, cfg.tau) * entropy_est
    reg_vals, reg_grad = model.regularizer.value_and_grad(x0, fake)
    reg_val = float(np.mean(reg_vals))
    total = g_loss + cfg.lambda_sb * sb_val + cfg.lambda_reg * reg_val

    if cfg.lambda_sb > 0:
        grad_fake = grad_fake + cfg.lambda_sb * 2.0 * diff / b
        if cfg.entropy_grad and t_i < 1.0:
            v = np.concatenate([x_ti, fake], axis=1)
            _, _, gv = mine_value_and_grads(model.mine_net, v, perm, t_i)
            grad_fake = grad_fake - cfg.lambda_sb * entropy_weight(t_i, cfg.tau) * gv[:, model.dim:]
    if cfg.lambda_reg > 0 and model.regularizer.kind != "none":
        grad_fake = grad_fake + cfg.lambda_reg * reg_grad / b
    return g_loss, sb_val, reg_val, total, grad_fake


def train_step(model: UnsbModel, src, tgt, rng: Rng | None = None, lr_scale: float = 1.0) -> StepReport:
    """Discriminator ascent, critic ascent, then generator descent at a random grid time."""
    rng = model.rng if rng is None else rng
    cfg = model.config
    grid = model.grid
    b = cfg.batch
    i = int(rng.integers(grid.n_steps)) if grid.n_steps > 1 else 0
    t_i = grid[i]

    x0 = _draw(src, b, rng)
    if x0.shape[1] != model.dim:
        raise ShapeError(f"source dimension {x0.shape[1]} != model dimension {model.dim}")
    traj, _ = simulate_chain(x0, model.predictor(), grid, cfg.tau, i, rng)
    x_ti = traj[-1]
    real = _draw(tgt, b, rng)
    z = rng.normal((b, model.z_dim))
    fake, g_tape = generator_forward(model.generator, x_ti, t_i, z)

    lr_d = cfg.lr * lr_scale
    # discriminator
    disc, feat = model.discriminator, cfg.disc_feature
    lr_logit, tape_r = disc.forward([disc_features(feat, real)], t_i)
    lf_logit, tape_f = disc.forward([disc_features(feat, fake)], t_i)
    lr_c, lf_c = lr_logit[:, 0], lf_logit[:, 0]
    d_loss = float(np.mean(_softplus(-lr_c) + _softplus(lf_c)))
    gr, _ = disc.backward(tape_r, (-_sigmoid(-lr_c) / b)[:, None])
    gf, _ = disc.backward(tape_f, (_sigmoid(lf_c) / b)[:, None])
    adam_step(model.opt_d, disc.params, [x + y for x, y in zip(gr, gf)], lr_d)
    disc.mlp.bump()

    # entropy critic
    entropy_est = 0.0
    perm = None
    if cfg.lambda_sb > 0:
        entropy_est, perm = mine_entropy_step(model.mine_net, model.opt_mine, x_ti, fake, t_i, rng, lr_d)

    # generator
    g_loss, sb_val, reg_val, total, grad_fake = generator_objective(model, x0, x_ti, fake, t_i, entropy_est, perm)
    ggrads, _, _ = generator_backward(model.generator, g_tape, grad_fake)
    adam_step(model.opt_g, model.generator.params, ggrads, lr_d)
    model.generator.mlp.bump()

    model.step_count += 1
    report = StepReport(model.step_count, i, t_i, d_loss, g_loss, sb_val, reg_val, entropy_est, total)
    _check_finite(report)
    return report


def lr_schedule(it: int, iters: int, decay_start: float) -> float:
    """1 until ``decay_start * iters``, then linear to 0 at ``iters``."""
    start = int(round(decay_start * iters))
    if it < start or iters == start:
        return 1.0
    return max(0.0, (iters - it) / (iters - start))


def train(model: UnsbModel, src, tgt, iters: int | None = None, callback: Callable | None = None):
    iters = model.config.iters if iters is None else iters
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    history = []
    for it in range(iters):
        rep = train_step(model, src, tgt, model.rng, lr_schedule(it, iters, model.config.decay_start))
        history.append(rep)
        if callback is not None:
            callback(rep)
    return model, history


def translate(model: UnsbModel, x0, nfe: int, rng: Rng):
    """Refine a target prediction for ``x0`` using ``nfe`` generator calls.

    Returns the final prediction and the list of all ``nfe`` predictions.
    """
    if not 1 <= nfe <= model.grid.n_steps:
        raise ParameterError(f"nfe must lie in [1, {model.grid.n_steps}]")
    pred = model.predictor()
    traj, preds = simulate_chain(x0, pred, model.grid, model.config.tau, nfe - 1, rng)
    final = pred(traj[-1], model.grid[nfe - 1], rng)
    return final, preds + [final]


def history_to_csv(path, history: list[StepReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.iter, repr(r.t), repr(r.d_loss), repr(r.g_loss), repr(r.sb_loss),
                        repr(r.reg_loss), repr(r.entropy_est)])

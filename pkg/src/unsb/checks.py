"""Self-checks: central finite-difference gradients and the cheap invariants run by ``validate``."""
import numpy as np

from . import nn
from .numerics import Rng


def pick_coords(arrays: list[np.ndarray], n: int, rng: Rng) -> list[tuple[int, tuple]]:
    """``n`` random (array index, element index) pairs, arrays weighted by size."""
    sizes = np.array([a.size for a in arrays], dtype=float)
    which = rng.choice(len(arrays), size=n, p=sizes / sizes.sum())
    out = []
    for k in which:
        flat = int(rng.integers(arrays[k].size))
        out.append((int(k), np.unravel_index(flat, arrays[k].shape)))
    return out


class _ActivationRecorder:
    """Records hidden-layer sign patterns of every MLP forward pass while active."""

    def __init__(self):
        self.patterns: list[np.ndarray] = []

    def __enter__(self):
        self._orig = nn.mlp_forward

        def recording(net, x):
            out, tape = self._orig(net, x)
            self.patterns.extend(p > 0 for p in tape.pre[:-1])
            return out, tape

        nn.mlp_forward = recording
        return self

    def __exit__(self, *exc):
        nn.mlp_forward = self._orig

    def take(self) -> list[np.ndarray]:
        out, self.patterns = self.patterns, []
        return out


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def max_rel_error(loss, arrays: list[np.ndarray], grads: list[np.ndarray], n: int, rng: Rng,
                  h: float = 1e-4, floor: float = 1e-7) -> float:
    """Largest relative error between ``grads`` and central differences of ``loss()``
    over ``n`` coordinates of ``arrays`` (perturbed in place, then restored).

    A central difference is only meaningful where the loss is smooth on
    ``[x - h, x + h]``; coordinates whose perturbation flips a leaky-ReLU
    activation are replaced by fresh draws until ``n`` smooth ones are checked.
    """
    worst = 0.0
    checked = 0
    with _ActivationRecorder() as rec:
        loss()
        base = rec.take()
        while checked < n:
            for k, idx in pick_coords(arrays, n - checked, rng):
                a = arrays[k]
                old = a[idx]
                a[idx] = old + h
                fp = loss()
                up = rec.take()
                a[idx] = old - h
                fm = loss()
                down = rec.take()
                a[idx] = old
                if not (_same(base, up) and _same(base, down)):
                    continue
                checked += 1
                fd = (fp - fm) / (2 * h)
                an = float(grads[k][idx])
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst


def network_gradient_errors(dim: int, config, n: int = 100, batch: int = 4, seed: int = 0) -> dict[str, float]:
    """Worst relative gradient error per network of a fresh model built from ``config``."""
    from .nn import generator_backward, generator_forward
    from .trainer import (UnsbModel, _dv_forward, _sigmoid, _softplus, disc_features,
                              disc_features_backward, generator_objective, mine_value_and_grads)

    model = UnsbModel(dim, config)
    rng = Rng(seed)
    x0 = rng.normal((batch, dim)) + 0.5
    x_t = rng.normal((batch, dim))
    z = rng.normal((batch, model.z_dim))
    t = 0.4
    out = {}

    gen = model.generator
    weights = rng.normal((batch, dim))

    def gen_loss():
        return float(np.sum(generator_forward(gen, x_t, t, z)[0] * weights))

    _, tape = generator_forward(gen, x_t, t, z)
    pg, gx, gz = generator_backward(gen, tape, weights)
    out["generator"] = max_rel_error(gen_loss, gen.params + [x_t, z], pg + [gx, gz], n, rng)

    disc, feat = model.discriminator, config.disc_feature
    real = rng.normal((batch, dim)) * 2
    fake = rng.normal((batch, dim))

    def d_loss():
        lr_ = disc.forward([disc_features(feat, real)], t)[0][:, 0]
        lf_ = disc.forward([disc_features(feat, fake)], t)[0][:, 0]
        return float(np.mean(_softplus(-lr_) + _softplus(lf_)))

    lr_, tr = disc.forward([disc_features(feat, real)], t)
    lf_, tf = disc.forward([disc_features(feat, fake)], t)
    gr, (gin_r,) = disc.backward(tr, (-_sigmoid(-lr_[:, 0]) / batch)[:, None])
    gf, (gin_f,) = disc.backward(tf, (_sigmoid(lf_[:, 0]) / batch)[:, None])
    dgrads = [a + b for a, b in zip(gr, gf)]
    out["discriminator"] = max_rel_error(
        d_loss, disc.params + [real, fake],
        dgrads + [disc_features_backward(feat, real, gin_r), disc_features_backward(feat, fake, gin_f)], n, rng)

    mine = model.mine_net
    v = rng.normal((batch, 2 * dim))
    perm = np.roll(np.arange(batch), 1)

    def dv():
        return _dv_forward(mine, v, perm, t)[0]

    _, pgrad, gv = mine_value_and_grads(mine, v, perm, t)
    out["mine"] = max_rel_error(dv, mine.params + [v], pgrad + [gv], n, rng)

    x1 = rng.normal((batch, dim)) + 0.5

    def reg():
        return float(np.sum(model.regularizer.value_and_grad(x0, x1)[0]))

    out["regularizer"] = max_rel_error(reg, [x1], [model.regularizer.value_and_grad(x0, x1)[1]],
                                       min(n, x1.size), rng)

    # full generator objective: adversarial + transport/entropy + regularizer through the generator
    fk, tape = generator_forward(gen, x_t, t, z)
    est = _dv_forward(mine, np.concatenate([x_t, fk], axis=1), perm, t)[0]

    def objective():
        fk = generator_forward(gen, x_t, t, z)[0]
        # without entropy_grad the estimate enters as a constant
        e = _dv_forward(mine, np.concatenate([x_t, fk], axis=1), perm, t)[0] if config.entropy_grad else est
        return generator_objective(model, x0, x_t, fk, t, e, perm)[3]

    grad_fake = generator_objective(model, x0, x_t, fk, t, est, perm)[4]
    pg, _, gz = generator_backward(gen, tape, grad_fake)
    out["generator_objective"] = max_rel_error(objective, gen.params + [z], pg + [gz], n, rng)
    return out

import math

import numpy as np
import pytest

from unsb.bridge import simulate_chain
from unsb.distributions import IsotropicGaussian, SphereShell, sample_gaussian, sample_shell
from unsb.errors import DegenerateVectorError, InsufficientSamplesError, ParameterError
from unsb.gaussian_oracle import conditional_predictor, solve_gaussian_sb
from unsb.nn import AdamState, ConditionalNet, TimeEmbedding, adam_step, generator_backward, generator_forward, mlp_backward
from unsb.numerics import Rng, moments
from unsb.trainer import (
    HISTORY_FIELDS,
    Regularizer,
    TrainerConfig,
    UnsbModel,
    _dv_forward,
    dv_estimate,
    entropy_weight,
    generator_objective,
    history_to_csv,
    loss_adv,
    loss_reg,
    loss_sb,
    lr_schedule,
    mine_entropy_step,
    train,
    train_step,
    translate,
)

SMALL = dict(gen_hidden=[32, 32], disc_hidden=[16, 16], mine_hidden=[16, 16], batch=8)


class TestLosses:
    def test_sb_zero(self):
        x = np.array([[0.3, -1.0]])
        assert loss_sb(x, x, 0.2, 0.01, 0.0) == 0.0

    def test_sb_at_t_one_ignores_entropy(self):
        assert loss_sb(np.zeros((1, 2)), np.ones((1, 2)), 1.0, 0.5, 123.0) == 2.0

    def test_sb_arithmetic(self):
        assert math.isclose(loss_sb(np.zeros((1, 2)), np.ones((1, 2)), 0.0, 0.01, 2.0), 1.96, rel_tol=1e-15)

    @pytest.mark.parametrize("i", range(5))
    def test_entropy_weight_per_grid_index(self, i):
        t = TrainerConfig().grid[i]
        assert entropy_weight(t, 0.01) == 2 * 0.01 * (1 - t)

    def test_adv_uninformative_discriminator(self, rng):
        disc = ConditionalNet([3], [8], 1, TimeEmbedding(4), None)
        d, g = loss_adv(disc, rng.normal((5, 3)), rng.normal((5, 3)), 0.4)
        assert math.isclose(d, 2 * math.log(2), rel_tol=1e-15)
        assert math.isclose(g, math.log(2), rel_tol=1e-15)

    def test_adv_confident_discriminator(self, rng):
        # logit = 50 * ||x|| - 75: strongly positive on radius 2, negative on radius 1
        disc = ConditionalNet([1], [1], 1, TimeEmbedding(2), None)
        disc.mlp.weights[0][0, 0] = 1.0
        disc.mlp.weights[1][0, 0] = 50.0
        disc.mlp.biases[1][0] = -75.0
        real = sample_shell(SphereShell(3, 2.0), 10, rng).points
        fake = sample_shell(SphereShell(3, 1.0), 10, rng).points
        d, g = loss_adv(disc, real, fake, 0.0, feature="norm")
        assert d < 1e-10 and g > 20

    def test_reg_parallel_orthogonal(self):
        reg = Regularizer("negative-cosine")
        assert math.isclose(loss_reg(reg, np.array([[1.0, 2.0]]), np.array([[2.0, 4.0]])), -1.0)
        assert loss_reg(reg, np.array([[1.0, 0.0]]), np.array([[0.0, 3.0]])) == 0.0

    def test_reg_none(self, rng):
        assert loss_reg(Regularizer("none"), rng.normal((3, 2)), rng.normal((3, 2))) == 0.0

    def test_reg_zero_vector(self):
        with pytest.raises(DegenerateVectorError):
            loss_reg(Regularizer(), np.zeros((1, 2)), np.ones((1, 2)))

    def test_reg_custom(self, rng):
        reg = Regularizer("custom", fn=lambda a, b: (np.sum((a - b) ** 2, axis=1), 2 * (b - a)))
        assert loss_reg(reg, np.zeros((2, 2)), np.ones((2, 2))) == 2.0

    def test_bad_regularizer(self):
        with pytest.raises(ParameterError):
            Regularizer("l7")


class TestMine:
    def test_zero_critic(self, rng):
        mine = ConditionalNet([4, 4], [8], 1, TimeEmbedding(4), None)
        est, _ = mine_entropy_step(mine, AdamState(), rng.normal((6, 2)), rng.normal((6, 2)), 0.2, rng)
        assert est == 0.0

    def test_constant_input(self, rng):
        mine = ConditionalNet([4, 4], [8], 1, TimeEmbedding(4), rng)
        v = np.ones((6, 2))
        est, _ = mine_entropy_step(mine, AdamState(), v, v, 0.2, rng)
        assert abs(est) < 1e-12

    def test_batch_of_one(self, rng):
        mine = ConditionalNet([4, 4], [8], 1, TimeEmbedding(4), rng)
        with pytest.raises(InsufficientSamplesError):
            mine_entropy_step(mine, AdamState(), np.ones((1, 2)), np.ones((1, 2)), 0.0, rng)

    def test_ascent_increases_estimate(self, rng):
        mine = ConditionalNet([2, 2], [32, 32], 1, TimeEmbedding(4), rng)
        v = rng.normal((64, 1))
        state = AdamState(lr=1e-3)
        perm = rng.permutation(64)
        first, _ = mine_entropy_step(mine, state, v, v, 0.0, rng, perm=perm)
        for _ in range(200):
            last, _ = mine_entropy_step(mine, state, v, v, 0.0, rng, perm=perm)
        assert math.isfinite(last) and last > first + 0.5

    def test_dv_shift_invariant(self, rng):
        tj, tm = rng.normal(8), rng.normal(8)
        assert math.isclose(dv_estimate(tj + 700, tm + 700), dv_estimate(tj, tm), abs_tol=1e-9)

    def test_dv_large_logits_finite(self):
        assert math.isfinite(dv_estimate(np.full(4, 1e4), np.array([1e4, 0.0, -1e4, 5.0])))


def reference_gan_step(gen, disc, opt_g, opt_d, x0, real, z, t, lr):
    """A plain time-conditional GAN update written directly against the nn primitives."""
    b = x0.shape[0]
    fake, tape_g = generator_forward(gen, x0, t, z)
    lr_, tape_r = disc.forward([real], t)
    lf_, tape_f = disc.forward([fake], t)
    lr_, lf_ = lr_[:, 0], lf_[:, 0]
    d_loss = float(np.mean(np.logaddexp(0.0, -lr_) + np.logaddexp(0.0, lf_)))
    # d/dl softplus(-l) = -sigmoid(-l), d/dl softplus(l) = sigmoid(l)
    sig = lambda x: 0.5 * (1.0 + np.tanh(0.5 * x))  # noqa: E731
    gr, _ = mlp_backward(disc.mlp, tape_r, (-sig(-lr_) / b)[:, None])
    gf, _ = mlp_backward(disc.mlp, tape_f, (sig(lf_) / b)[:, None])
    adam_step(opt_d, disc.params, [x + y for x, y in zip(gr, gf)], lr)
    disc.mlp.bump()
    lf2, tape_f2 = disc.forward([fake], t)
    lf2 = lf2[:, 0]
    g_loss = float(np.mean(np.logaddexp(0.0, -lf2)))
    _, gin = mlp_backward(disc.mlp, tape_f2, (-sig(-lf2) / b)[:, None])
    ggrads, _, _ = generator_backward(gen, tape_g, gin[:, : x0.shape[1]])
    adam_step(opt_g, gen.params, ggrads, lr)
    gen.mlp.bump()
    return d_loss, g_loss


class TestTrainStep:
    def _pools(self, d=3, n=50):
        r = Rng(3)
        return (sample_gaussian(IsotropicGaussian(d, -1.0), n, r),
                sample_gaussian(IsotropicGaussian(d, 1.0), n, r))

    def test_reduces_to_gan_step(self):
        src, tgt = self._pools()
        cfg = TrainerConfig(n_steps=1, lambda_sb=0.0, lambda_reg=0.0, seed=11, **SMALL)
        model = UnsbModel(3, cfg)
        ref = UnsbModel(3, cfg)
        for _ in range(3):
            rng_a, rng_b = Rng(99 + model.step_count), Rng(99 + model.step_count)
            rep = train_step(model, src, tgt, rng_a)
            x0 = src.points[rng_b.integers(src.n, size=cfg.batch)]
            real = tgt.points[rng_b.integers(tgt.n, size=cfg.batch)]
            z = rng_b.normal((cfg.batch, ref.z_dim))
            d_loss, g_loss = reference_gan_step(ref.generator, ref.discriminator, ref.opt_g, ref.opt_d,
                                                x0, real, z, 0.0, cfg.lr)
            assert rep.t_index == 0 and rep.d_loss == d_loss and rep.g_loss == g_loss
            for a, b in zip(model.generator.params + model.discriminator.params,
                            ref.generator.params + ref.discriminator.params):
                assert np.array_equal(a, b)

    def test_mine_untouched_without_sb(self):
        src, tgt = self._pools()
        model = UnsbModel(3, TrainerConfig(lambda_sb=0.0, **SMALL))
        before = [p.copy() for p in model.mine_net.params]
        train_step(model, src, tgt)
        assert all(np.array_equal(a, b) for a, b in zip(before, model.mine_net.params))

    def test_deterministic(self):
        src, tgt = self._pools()
        cfg = TrainerConfig(iters=20, **SMALL)
        _, h1 = train(UnsbModel(3, cfg), src, tgt)
        _, h2 = train(UnsbModel(3, cfg), src, tgt)
        assert h1 == h2

    def test_single_iteration(self):
        src, tgt = self._pools()
        _, hist = train(UnsbModel(3, TrainerConfig(**SMALL)), src, tgt, iters=1)
        assert len(hist) == 1 and hist[0].iter == 1

    def test_iters_validated(self):
        src, tgt = self._pools()
        with pytest.raises(ParameterError):
            train(UnsbModel(3, TrainerConfig(**SMALL)), src, tgt, iters=0)

    def test_accepts_distributions(self):
        model = UnsbModel(4, TrainerConfig(disc_feature="norm", **SMALL))
        rep = train_step(model, SphereShell(4, 1.0), SphereShell(4, 2.0))
        assert 0 <= rep.t_index < 5

    def test_stop_gradient(self):
        # gradients at step i equal those computed with x_{t_i} frozen, although x_{t_i} depends on the generator
        d = 2
        cfg = TrainerConfig(tau=0.1, **SMALL)
        model = UnsbModel(d, cfg)
        grid = model.grid
        i = 3
        x0 = Rng(1).normal((cfg.batch, d))
        z = Rng(2).normal((cfg.batch, model.z_dim))
        perm = np.roll(np.arange(cfg.batch), 1)

        def chain_state():
            traj, _ = simulate_chain(x0, model.predictor(), grid, cfg.tau, i, Rng(5))
            return traj[-1]

        def objective(x_ti):
            fake, _ = generator_forward(model.generator, x_ti, grid[i], z)
            est = _dv_forward(model.mine_net, np.concatenate([x_ti, fake], axis=1), perm, grid[i])[0]
            return generator_objective(model, x0, x_ti, fake, grid[i], est, perm)[3]

        x_ti = chain_state()
        fake, tape = generator_forward(model.generator, x_ti, grid[i], z)
        est = _dv_forward(model.mine_net, np.concatenate([x_ti, fake], axis=1), perm, grid[i])[0]
        grad_fake = generator_objective(model, x0, x_ti, fake, grid[i], est, perm)[4]
        ggrads, _, _ = generator_backward(model.generator, tape, grad_fake)

        w = model.generator.params[-1]
        h = 1e-5
        detached, full = [], []
        for j in range(d):
            old = w[j]
            w[j] = old + h
            xp = chain_state()
            fp_det, fp_full = objective(x_ti), objective(xp)
            w[j] = old - h
            xm = chain_state()
            fm_det, fm_full = objective(x_ti), objective(xm)
            w[j] = old
            assert not np.array_equal(xp, xm)  # the chain does depend on the generator
            detached.append((fp_det - fm_det) / (2 * h))
            full.append((fp_full - fm_full) / (2 * h))
        assert np.allclose(ggrads[-1], detached, rtol=1e-6, atol=1e-9)
        assert not np.allclose(ggrads[-1], full, rtol=1e-3, atol=1e-6)

    def test_lr_schedule(self):
        assert lr_schedule(0, 100, 0.5) == 1.0
        assert lr_schedule(49, 100, 0.5) == 1.0
        assert lr_schedule(75, 100, 0.5) == 0.5
        assert lr_schedule(99, 100, 0.5) == pytest.approx(0.02)
        assert lr_schedule(5, 10, 1.0) == 1.0


class TestTranslate:
    def _model(self, d=2, **kw):
        return UnsbModel(d, TrainerConfig(**{**SMALL, **kw}))

    def test_nfe_one_is_single_call(self, rng):
        model = self._model()
        x0 = rng.normal((4, 2))
        out, preds = translate(model, x0, 1, Rng(7))
        assert len(preds) == 1
        assert np.array_equal(out, model.predict(x0, 0.0, Rng(7)))

    def test_nfe_range(self, rng):
        model = self._model()
        for nfe in (0, 6):
            with pytest.raises(ParameterError):
                translate(model, rng.normal((1, 2)), nfe, rng)

    def test_deterministic(self, rng):
        model = self._model()
        x0 = rng.normal((4, 2))
        a, _ = translate(model, x0, 5, Rng(3))
        b, _ = translate(model, x0, 5, Rng(3))
        assert np.array_equal(a, b)

    def test_oracle_generator_hits_target_moments(self):
        d = 3
        sb = solve_gaussian_sb(IsotropicGaussian(d, -1.0), IsotropicGaussian(d, 1.0, 1.5), 0.1, validate=False)
        model = self._model(d, tau=0.1)
        oracle = conditional_predictor(sb)
        model.predictor = lambda: oracle
        n = 20_000
        x0 = sample_gaussian(IsotropicGaussian(d, -1.0), n, Rng(1)).points
        out, _ = translate(model, x0, 5, Rng(2))
        m = moments(out)
        assert np.all(np.abs(m.mean - 1.0) < 4 * 1.5 / np.sqrt(n))
        assert np.allclose(np.diag(m.cov), 2.25, rtol=0.05)

    def test_stochastic_output(self, rng):
        model = self._model()
        x0 = np.repeat(rng.normal((1, 2)), 100, axis=0)
        out, _ = translate(model, x0, 5, Rng(4))
        assert out.std(axis=0).mean() > 1e-4


class TestPersistence:
    def test_save_load(self, tmp_path, rng):
        model = UnsbModel(3, TrainerConfig(**SMALL))
        src = sample_gaussian(IsotropicGaussian(3, 0.0), 20, rng)
        train(model, src, src, iters=2)
        model.save(tmp_path / "m.json")
        back = UnsbModel.load(tmp_path / "m.json")
        assert back.step_count == 2 and back.config == model.config
        x = rng.normal((5, 3))
        assert np.array_equal(model.predict(x, 0.2, Rng(1)), back.predict(x, 0.2, Rng(1)))

    def test_history_csv(self, tmp_path, rng):
        src = sample_gaussian(IsotropicGaussian(2, 0.0), 20, rng)
        _, hist = train(UnsbModel(2, TrainerConfig(**SMALL)), src, src, iters=3)
        history_to_csv(tmp_path / "h.csv", hist)
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0].split(",") == HISTORY_FIELDS and len(lines) == 4
        assert float(lines[2].split(",")[2]) == hist[1].d_loss


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(lambda_sb=-1), dict(tau=-0.1), dict(n_steps=0), dict(batch=0),
                                    dict(regularizer="x"), dict(disc_feature="x"), dict(decay_start=2.0)])
    def test_rejects(self, kw):
        with pytest.raises(ParameterError):
            TrainerConfig(**kw)

    def test_defaults(self):
        c = TrainerConfig()
        assert (c.lambda_sb, c.lambda_reg, c.tau, c.n_steps) == (1.0, 1.0, 0.01, 5)
        assert (c.lr, c.beta1, c.beta2) == (2e-4, 0.5, 0.999)

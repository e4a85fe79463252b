"""Experiment harness.

Each ``run_*`` function turns an :class:`ExperimentConfig` into a
:class:`BenchReport` of per-dimension metric rows. Every random quantity is
derived from the config seed, so equal configs give byte-identical reports
(wall-clock time is only recorded on request).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import __version__
from .bridge import simulate_chain
from .checks import network_gradient_errors
from .distributions import IsotropicGaussian, SampleSet, SphereShell, sample_gaussian, sample_shell
from .entropic_ot import conditional_pairs, cost_matrix, coupling_pairs, eps_from_tau, sinkhorn
from .errors import ConfigError, NumericalAbort, ParameterError
from .gaussian_oracle import (
    conditional_predictor,
    gaussian_sb_from_moments,
    marginal_at,
    restrict,
    sample_joint,
    solve_gaussian_sb,
    validate_convention,
)
from .nn import TimeEmbedding
from .numerics import Rng, moments, rowwise_cosine
from .trainer import TrainerConfig, UnsbModel, train, translate

EXPERIMENTS = ("cod_sweep", "shells_unsb", "gaussians", "transport_cost", "validate")


@dataclass
class ExperimentConfig:
    experiment: str
    dims: list[int]
    n_samples: int = 1000
    tau: float = 0.01
    sinkhorn_eps: list[float] | None = None  # None: eps = 2 tau
    sinkhorn_tol: float = 1e-6
    sinkhorn_iters: int = 100_000
    sk_blocks: int = 1
    eval_samples: int = 10_000
    n_seeds: int = 1
    data: str = "shells"
    generator: str = "trained"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = 0
    out: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not self.dims:
            raise ConfigError("dims must be non-empty")
        counts = dict(n_samples=self.n_samples, sinkhorn_iters=self.sinkhorn_iters, sk_blocks=self.sk_blocks,
                      eval_samples=self.eval_samples, n_seeds=self.n_seeds)
        bad = [k for k, v in counts.items() if int(v) < 1] + (["dims"] if min(self.dims) < 1 else [])
        if bad:
            raise ConfigError(f"counts must be >= 1: {bad}")
        if self.experiment == "cod_sweep" and list(self.dims) != sorted(set(self.dims)):
            raise ConfigError("cod_sweep dims must be strictly ascending")
        if self.data not in ("shells", "gaussians"):
            raise ConfigError(f"unknown data {self.data!r}")
        if self.generator not in ("trained", "oracle"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.generator == "oracle" and self.data != "gaussians":
            raise ConfigError("the oracle generator exists only for gaussian data")
        if not self.tau >= 0 or not self.sinkhorn_tol > 0:
            raise ConfigError("tau must be >= 0 and sinkhorn_tol > 0")
        if self.sinkhorn_eps is not None and (not self.sinkhorn_eps or min(self.sinkhorn_eps) <= 0):
            raise ConfigError("sinkhorn_eps must be a non-empty list of positive values")

    @property
    def eps_list(self) -> list[float]:
        return list(self.sinkhorn_eps) if self.sinkhorn_eps else [eps_from_tau(self.tau)]

    def to_dict(self) -> dict:
        """Config echo; ``out`` is a run location, not an experiment parameter, and is left out."""
        d = asdict(self)
        d.pop("out")
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Build from a mapping, rejecting unknown keys; missing keys come from ``base``."""
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        merged = {} if base is None else {f.name: getattr(base, f.name) for f in fields(cls)}
        merged.update({k: v for k, v in d.items() if k != "trainer"})
        trainer = base.trainer if base is not None else TrainerConfig()
        if "trainer" in d:
            t = d["trainer"] or {}
            if not isinstance(t, dict):
                raise ConfigError("trainer section must be a mapping")
            tknown = {f.name for f in fields(TrainerConfig)}
            tunknown = sorted(set(t) - tknown)
            if tunknown:
                raise ConfigError(f"unknown trainer keys: {tunknown}")
            try:
                trainer = replace(trainer, **t)
            except (ParameterError, TypeError) as e:
                raise ConfigError(f"bad trainer config: {e}") from e
        merged["trainer"] = trainer
        if "experiment" not in merged or "dims" not in merged:
            raise ConfigError("config needs at least 'experiment' and 'dims'")
        try:
            merged["dims"] = [int(x) for x in merged["dims"]]
            return cls(**merged)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad config value: {e}") from e

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def preset(experiment: str) -> ExperimentConfig:
    """Default configuration of each experiment."""
    shells_trainer = TrainerConfig(disc_feature="norm", regularizer="negative-cosine", lambda_reg=30.0, iters=3000)
    gauss_trainer = TrainerConfig(disc_feature="raw", regularizer="none", lambda_reg=0.0, lambda_sb=0.1,
                                  batch=128, iters=16_000, entropy_grad=False, disc_hidden=[256, 256, 256])
    table = {
        "cod_sweep": ExperimentConfig("cod_sweep", [2, 16, 64, 256], sinkhorn_eps=[0.02, 0.1, 1.0]),
        "shells_unsb": ExperimentConfig("shells_unsb", [4, 16, 64], n_seeds=3, trainer=shells_trainer),
        "gaussians": ExperimentConfig("gaussians", [50], sinkhorn_tol=1e-5, sk_blocks=25, eval_samples=100_000,
                                      n_seeds=3, trainer=gauss_trainer),
        "transport_cost": ExperimentConfig("transport_cost", [16], trainer=shells_trainer),
        "validate": ExperimentConfig("validate", [1, 8], n_samples=2000, eval_samples=10_000,
                                     trainer=TrainerConfig(tau=0.5)),
    }
    if experiment not in table:
        raise ConfigError(f"unknown experiment {experiment!r}")
    return table[experiment]


def cell_seed(seed: int, dim: int, replicate: int = 0) -> int:
    """Seed of one (dimension, replicate) cell: ``(seed + replicate) XOR dim``."""
    return (int(seed) + int(replicate)) ^ int(dim)


# ---------------------------------------------------------------- reports


@dataclass
class MetricRow:
    dim: int
    metric_name: str
    value: float
    seed: int
    config_hash: str


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class BenchReport:
    experiment: str
    config: ExperimentConfig
    rows: list[MetricRow] = field(default_factory=list)
    seed: int = 0
    version: str = __version__
    wall_clock_s: float | None = None

    def add(self, dim: int, name: str, value: float, seed: int) -> None:
        value = float(value)
        if not np.isfinite(value):
            raise NumericalAbort(f"metric {name} at dim {dim} is not finite", {"dim": dim, "metric": name})
        self.rows.append(MetricRow(int(dim), name, value, int(seed), self.config.hash()))

    def value(self, dim: int, name: str, seed: int | None = None) -> float:
        for r in self.rows:
            if r.dim == dim and r.metric_name == name and (seed is None or r.seed == seed):
                return r.value
        raise KeyError((dim, name, seed))

    def seeds(self, dim: int, name: str) -> list[int]:
        return [r.seed for r in self.rows if r.dim == dim and r.metric_name == name]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config.to_dict(),
            "rows": [asdict(r) for r in self.rows],
            "seed": self.seed,
            "version": self.version,
            "wall_clock_s": self.wall_clock_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        d = json.loads(text)
        cfg = ExperimentConfig.from_dict(d["config"])
        rows = [MetricRow(**r) for r in d["rows"]]
        return cls(d["experiment"], cfg, rows, d["seed"], d["version"], d["wall_clock_s"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dim", "metric_name", "value", "seed", "config_hash"])
        for r in self.rows:
            w.writerow([r.dim, r.metric_name, repr(r.value), r.seed, r.config_hash])
        return buf.getvalue()

    def check(self) -> list[CheckResult]:
        return CHECKS[self.experiment](self)


class ExperimentAbort(NumericalAbort):
    """Numerical abort carrying the report assembled before the failure."""

    def __init__(self, cause: NumericalAbort, partial: BenchReport):
        super().__init__(str(cause), cause.diagnostics)
        self.partial = partial


def _guard(report: BenchReport, fn: Callable[[], None]) -> BenchReport:
    try:
        fn()
    except ExperimentAbort:
        raise
    except NumericalAbort as e:
        raise ExperimentAbort(e, report) from e
    return report


# ---------------------------------------------------------------- metrics


def mean_mse(samples: np.ndarray, mean: np.ndarray) -> float:
    """Mean over coordinates of the squared error of the sample mean."""
    return float(np.mean((samples.mean(axis=0) - mean) ** 2))


def cov_mse(samples: np.ndarray, cov: np.ndarray) -> float:
    """Mean over entries of the squared error of the sample covariance."""
    return float(np.mean((moments(samples).cov - cov) ** 2))


def _eps_tag(eps: float) -> str:
    return f"eps={eps:g}"


def _shell_pools(cfg: ExperimentConfig, d: int) -> tuple[SampleSet, SampleSet]:
    r = Rng(cell_seed(cfg.seed, d))
    if d == 1:
        # the 1-d shell is the two points +-r; use equal counts of each so pools are balanced
        n = cfg.n_samples
        signs = np.where(np.arange(n) < (n + 1) // 2, 1.0, -1.0)
        return (SampleSet(r.permutation(signs)[:, None], "source", "shell r=1 (balanced)"),
                SampleSet(2.0 * r.permutation(signs)[:, None], "target", "shell r=2 (balanced)"))
    return (sample_shell(SphereShell(d, 1.0), cfg.n_samples, r, "source"),
            sample_shell(SphereShell(d, 2.0), cfg.n_samples, r, "target"))


def _gaussian_ends(d: int) -> tuple[IsotropicGaussian, IsotropicGaussian]:
    return IsotropicGaussian(d, -1.0), IsotropicGaussian(d, 1.0)


def chain_translate(predictor, x0: np.ndarray, trainer: TrainerConfig, nfe: int, rng: Rng) -> np.ndarray:
    """``translate`` for any predictor (trained or exact)."""
    grid = trainer.grid
    traj, _ = simulate_chain(x0, predictor, grid, trainer.tau, nfe - 1, rng)
    return predictor(traj[-1], grid[nfe - 1], rng)


def _train(cfg: ExperimentConfig, d: int, k: int, src, tgt) -> tuple[UnsbModel, int]:
    s = cell_seed(cfg.seed, d, k)
    model = UnsbModel(d, replace(cfg.trainer, seed=s))
    train(model, src, tgt)
    return model, s


def _save(cfg: ExperimentConfig, model: UnsbModel, name: str) -> None:
    if cfg.out:
        from pathlib import Path

        path = Path(cfg.out)
        path.mkdir(parents=True, exist_ok=True)
        model.save(path / name)


# ---------------------------------------------------------------- experiments


def run_cod_sweep(cfg: ExperimentConfig) -> BenchReport:
    """Mean cosine similarity of Sinkhorn pairs between shells of radius 1 and 2, per dimension."""
    report = BenchReport("cod_sweep", cfg, seed=cfg.seed)

    def body():
        for d in cfg.dims:
            src, tgt = _shell_pools(cfg, d)
            c = cost_matrix(src, tgt)
            unit0 = src.points / np.linalg.norm(src.points, axis=1, keepdims=True)
            unit1 = tgt.points / np.linalg.norm(tgt.points, axis=1, keepdims=True)
            cos = unit0 @ unit1.T
            s = cell_seed(cfg.seed, d)
            for k, eps in enumerate(cfg.eps_list):
                cp = sinkhorn(c, eps, max_iters=cfg.sinkhorn_iters, tol=cfg.sinkhorn_tol)
                x0, x1, _ = coupling_pairs(cp, src, tgt, Rng(s).spawn(k), cfg.n_samples)
                tag = _eps_tag(eps)
                report.add(d, f"mean_cos@{tag}", rowwise_cosine(x0, x1).mean(), s)
                report.add(d, f"expected_cos@{tag}", float((cp.gamma * cos).sum() / cp.gamma.sum()), s)
                report.add(d, f"converged@{tag}", float(cp.converged), s)
                report.add(d, f"marginal_err@{tag}", cp.marginal_err, s)

    return _guard(report, body)


def _shell_metrics(report: BenchReport, model: UnsbModel, src: SampleSet, d: int, s: int) -> None:
    n_steps = model.grid.n_steps
    for nfe in range(1, n_steps + 1):
        out, _ = translate(model, src.points, nfe, Rng(s).spawn(100 + nfe))
        report.add(d, f"norm@nfe={nfe}", np.linalg.norm(out, axis=1).mean(), s)
        report.add(d, f"cos@nfe={nfe}", rowwise_cosine(src.points, out).mean(), s)
        report.add(d, f"dist@nfe={nfe}", np.linalg.norm(out - src.points, axis=1).mean(), s)
    # spread over latent draws for fixed inputs
    x = np.repeat(src.points[:10], 100, axis=0)
    out, _ = translate(model, x, n_steps, Rng(s).spawn(99))
    report.add(d, "output_std", out.reshape(10, 100, d).std(axis=1).mean(), s)


def run_shells_unsb(cfg: ExperimentConfig) -> BenchReport:
    """Train on shells (radius 1 to 2) per dimension and replicate; norm, cosine and distance per nfe."""
    t = cfg.trainer
    if t.disc_feature != "norm" or t.regularizer != "negative-cosine":
        raise ConfigError("shells_unsb needs disc_feature=norm and regularizer=negative-cosine")
    report = BenchReport("shells_unsb", cfg, seed=cfg.seed)

    def body():
        for d in cfg.dims:
            src, tgt = _shell_pools(cfg, d)
            for k in range(cfg.n_seeds):
                model, s = _train(cfg, d, k, src, tgt)
                _save(cfg, model, f"shells_d{d}_seed{s}.json")
                _shell_metrics(report, model, src, d, s)

    return _guard(report, body)


def run_gaussians(cfg: ExperimentConfig) -> BenchReport:
    """N(-1, I) to N(1, I): moment errors of exact, Sinkhorn and trained samples at the target end."""
    report = BenchReport("gaussians", cfg, seed=cfg.seed)

    def body():
        for d in cfg.dims:
            g0, g1 = _gaussian_ends(d)
            sb = solve_gaussian_sb(g0, g1, cfg.tau, validate=True)
            mu1, sigma1 = marginal_at(sb, 1.0)
            s = cell_seed(cfg.seed, d)
            root = Rng(s)

            _, x1 = sample_joint(sb, cfg.eval_samples, root.spawn(1))
            report.add(d, "oracle_mu_mse", mean_mse(x1, mu1), s)
            report.add(d, "oracle_sigma_mse", cov_mse(x1, sigma1), s)

            pushed, worst_err, all_conv = [], 0.0, True
            for b in range(cfg.sk_blocks):
                rb = root.spawn(10 + b)
                xs = sample_gaussian(g0, cfg.n_samples, rb)
                xt = sample_gaussian(g1, cfg.n_samples, rb, "target")
                cp = sinkhorn(cost_matrix(xs, xt), cfg.eps_list[0], max_iters=cfg.sinkhorn_iters, tol=cfg.sinkhorn_tol)
                _, y, _ = conditional_pairs(cp, xs, xt, rb)
                pushed.append(y)
                worst_err = max(worst_err, cp.marginal_err)
                all_conv = all_conv and cp.converged
            y = np.concatenate(pushed)
            report.add(d, "sk_mu_mse", mean_mse(y, mu1), s)
            report.add(d, "sk_sigma_mse", cov_mse(y, sigma1), s)
            report.add(d, "sk_converged", float(all_conv), s)
            report.add(d, "sk_marginal_err", worst_err, s)

            for k in range(cfg.n_seeds):
                model, sk = _train(cfg, d, k, g0, g1)
                _save(cfg, model, f"gaussians_d{d}_seed{sk}.json")
                x0 = sample_gaussian(g0, cfg.eval_samples, Rng(sk).spawn(7)).points
                for nfe in sorted({1, model.grid.n_steps}):
                    out, _ = translate(model, x0, nfe, Rng(sk).spawn(8 + nfe))
                    report.add(d, f"unsb_mu_mse@nfe={nfe}", mean_mse(out, mu1), sk)
                    report.add(d, f"unsb_sigma_mse@nfe={nfe}", cov_mse(out, sigma1), sk)

    return _guard(report, body)


def _histogram_rows(report, d, s, name, values, edges) -> None:
    counts, _ = np.histogram(values, bins=edges)
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        report.add(d, f"{name}_hist[{lo:.4g},{hi:.4g})", c, s)


def run_transport_cost(cfg: ExperimentConfig) -> BenchReport:
    """Input-output distance of chain translation vs Sinkhorn pairs on one fixed pool."""
    report = BenchReport("transport_cost", cfg, seed=cfg.seed)
    n_bins = 20

    def body():
        for d in cfg.dims:
            s = cell_seed(cfg.seed, d)
            if cfg.data == "shells":
                src, tgt = _shell_pools(cfg, d)
            else:
                g0, g1 = _gaussian_ends(d)
                r = Rng(s)
                src, tgt = sample_gaussian(g0, cfg.n_samples, r), sample_gaussian(g1, cfg.n_samples, r, "target")
            cp = sinkhorn(cost_matrix(src, tgt), cfg.eps_list[0], max_iters=cfg.sinkhorn_iters, tol=cfg.sinkhorn_tol)
            x0, x1, _ = coupling_pairs(cp, src, tgt, Rng(s).spawn(1), cfg.n_samples)
            sk_dist = np.linalg.norm(x1 - x0, axis=1)

            if cfg.generator == "oracle":
                sb = solve_gaussian_sb(*_gaussian_ends(d), cfg.tau, validate=True)
                runs = [(s, conditional_predictor(sb))]
                a, b = sample_joint(sb, cfg.eval_samples, Rng(s).spawn(2))
                report.add(d, "true_coupling_dist_mean", np.linalg.norm(b - a, axis=1).mean(), s)
            else:
                runs = []
                for k in range(cfg.n_seeds):
                    model, sk = _train(cfg, d, k, src, tgt)
                    _save(cfg, model, f"{cfg.data}_d{d}_seed{sk}.json")
                    runs.append((sk, model.predictor()))

            for sk, pred in runs:
                out = chain_translate(pred, src.points, cfg.trainer, cfg.trainer.n_steps, Rng(sk).spawn(3))
                unsb_dist = np.linalg.norm(out - src.points, axis=1)
                report.add(d, "unsb_dist_mean", unsb_dist.mean(), sk)
                report.add(d, "sk_dist_mean", sk_dist.mean(), sk)
                edges = np.linspace(0.0, max(unsb_dist.max(), sk_dist.max()), n_bins + 1)
                _histogram_rows(report, d, sk, "unsb", unsb_dist, edges)
                _histogram_rows(report, d, sk, "sk", sk_dist, edges)

    return _guard(report, body)


# ---------------------------------------------------------------- validate


def sinkhorn_two_by_two_error(eps_values=(0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)) -> float:
    """Largest deviation of the diagonal mass from ``0.5 e^(1/eps) / (1 + e^(1/eps))`` on cost [[0, 1], [1, 0]]."""
    from .entropic_ot import CostMatrix

    c = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    worst = 0.0
    for eps in eps_values:
        gamma = sinkhorn(c, eps, tol=1e-12).gamma
        p = 0.5 / (1.0 + np.exp(-1.0 / eps))
        worst = max(worst, abs(gamma[0, 0] - p), abs(gamma[1, 1] - p))
    return float(worst)


def chain_oracle_errors(d: int, tau: float, n_steps: int, n: int, rng: Rng) -> tuple[float, float]:
    """Run the chain with the exact conditional predictor; return the largest
    mean z-score and the largest relative variance error over grid times."""
    g0, g1 = IsotropicGaussian(d, -1.0), IsotropicGaussian(d, 1.0, 1.5)
    sb = solve_gaussian_sb(g0, g1, tau, validate=False)
    grid = TrainerConfig(tau=tau, n_steps=n_steps).grid
    x0 = sample_gaussian(g0, n, rng).points
    traj, _ = simulate_chain(x0, conditional_predictor(sb), grid, tau, n_steps - 1, rng)
    z_worst, var_worst = 0.0, 0.0
    for i, x in enumerate(traj):
        mean, cov = marginal_at(sb, grid[i])
        sd = np.sqrt(np.diag(cov))
        z_worst = max(z_worst, float(np.max(np.abs(x.mean(axis=0) - mean) / (sd / np.sqrt(n)))))
        var_worst = max(var_worst, float(np.max(np.abs(x.var(axis=0, ddof=1) / np.diag(cov) - 1.0))))
    return z_worst, var_worst


def self_similarity_gap(d: int, tau: float, ta: float = 0.25, tb: float = 0.75) -> float:
    sb = solve_gaussian_sb(IsotropicGaussian(d, -1.0), IsotropicGaussian(d, 1.0, 0.5), tau, validate=False)
    r = restrict(sb, ta, tb)
    direct = gaussian_sb_from_moments(r.mu0, r.sigma0[0, 0], r.mu1, r.sigma1[0, 0], tau * (tb - ta))
    return float(np.abs(r.cross - direct.cross).max())


def run_validate(cfg: ExperimentConfig) -> BenchReport:
    """Oracle convention check plus the cheap invariants: Sinkhorn closed form,
    chain consistency, self-similarity, gradients and time-embedding injectivity."""
    report = BenchReport("validate", cfg, seed=cfg.seed)
    t = cfg.trainer

    def body():
        conv = validate_convention(1.0, 1.0, cfg.tau, n=cfg.n_samples, seed=cfg.seed)
        report.add(1, "convention_z", conv["z"], cfg.seed)
        report.add(1, "convention_passed", float(conv["passed"]), cfg.seed)
        report.add(2, "sinkhorn_2x2_max_err", sinkhorn_two_by_two_error(), cfg.seed)
        emb = TimeEmbedding(t.embed_dim)(np.asarray(t.grid.times))
        dist = np.linalg.norm(emb[:, None] - emb[None, :], axis=2)
        report.add(t.n_steps, "embedding_min_dist", dist[~np.eye(len(dist), dtype=bool)].min(), cfg.seed)
        for d in cfg.dims:
            s = cell_seed(cfg.seed, d)
            z, v = chain_oracle_errors(d, t.tau, t.n_steps, cfg.eval_samples, Rng(s))
            report.add(d, "chain_mean_max_z", z, s)
            report.add(d, "chain_var_max_rel_err", v, s)
            report.add(d, "self_similarity_gap", self_similarity_gap(d, t.tau), s)
            for feature in ("raw", "norm"):
                errs = network_gradient_errors(d, replace(t, disc_feature=feature), n=100, seed=s)
                for name, e in errs.items():
                    report.add(d, f"grad_rel_err[{feature}]:{name}", e, s)

    return _guard(report, body)


RUNNERS: dict[str, Callable[[ExperimentConfig], BenchReport]] = {
    "cod_sweep": run_cod_sweep,
    "shells_unsb": run_shells_unsb,
    "gaussians": run_gaussians,
    "transport_cost": run_transport_cost,
    "validate": run_validate,
}


def run(cfg: ExperimentConfig, timing: bool = False) -> BenchReport:
    start = time.perf_counter()
    report = RUNNERS[cfg.experiment](cfg)
    if timing:
        report.wall_clock_s = round(time.perf_counter() - start, 3)
    return report


# ---------------------------------------------------------------- threshold checks


def _check_cod(rep: BenchReport) -> list[CheckResult]:
    out = []
    dims = rep.config.dims
    for eps in rep.config.eps_list:
        vals = [rep.value(d, f"mean_cos@{_eps_tag(eps)}") for d in dims]
        dec = all(a > b for a, b in zip(vals, vals[1:]))
        out.append(CheckResult(f"cos strictly decreasing @{_eps_tag(eps)}", dec,
                               ", ".join(f"d={d}:{v:.4f}" for d, v in zip(dims, vals))))
        if 256 in dims:
            v = rep.value(256, f"mean_cos@{_eps_tag(eps)}")
            out.append(CheckResult(f"cos < 0.5 at d=256 @{_eps_tag(eps)}", v < 0.5, f"{v:.4f}"))
    return out


def _best_seed(rep: BenchReport, d: int, ok: Callable[[int], bool]) -> tuple[bool, list[int]]:
    seeds = sorted({r.seed for r in rep.rows if r.dim == d})
    return any(ok(s) for s in seeds), seeds


def _check_shells(rep: BenchReport) -> list[CheckResult]:
    n = rep.config.trainer.n_steps
    out = []
    for d in rep.config.dims:
        def ok(s, d=d):
            return 1.8 <= rep.value(d, f"norm@nfe={n}", s) <= 2.2 and rep.value(d, f"cos@nfe={n}", s) >= 0.9
        passed, seeds = _best_seed(rep, d, ok)
        detail = "; ".join(f"seed {s}: norm {rep.value(d, f'norm@nfe={n}', s):.3f} cos {rep.value(d, f'cos@nfe={n}', s):.3f}"
                           for s in seeds)
        out.append(CheckResult(f"shells d={d} norm in [1.8, 2.2] and cos >= 0.9 (best seed)", passed, detail))
    return out


def _check_gaussians(rep: BenchReport) -> list[CheckResult]:
    n = rep.config.trainer.n_steps
    out = []
    for d in rep.config.dims:
        mu, sig = rep.value(d, "sk_mu_mse"), rep.value(d, "sk_sigma_mse")
        out.append(CheckResult(f"gaussians d={d} Sinkhorn mu MSE <= 1e-3, Sigma MSE <= 1e-4",
                               mu <= 1e-3 and sig <= 1e-4, f"mu {mu:.3e} Sigma {sig:.3e}"))

        def ok(s, d=d):
            return rep.value(d, f"unsb_mu_mse@nfe={n}", s) <= 0.05 and rep.value(d, f"unsb_sigma_mse@nfe={n}", s) <= 1e-4
        seeds = rep.seeds(d, f"unsb_mu_mse@nfe={n}")
        detail = "; ".join(f"seed {s}: mu {rep.value(d, f'unsb_mu_mse@nfe={n}', s):.3e} "
                           f"Sigma {rep.value(d, f'unsb_sigma_mse@nfe={n}', s):.3e}" for s in seeds)
        out.append(CheckResult(f"gaussians d={d} UNSB mu MSE <= 0.05, Sigma MSE <= 1e-4 (best seed)",
                               any(ok(s) for s in seeds), detail))
    return out


def _check_transport(rep: BenchReport) -> list[CheckResult]:
    out = []
    for d in rep.config.dims:
        for s in rep.seeds(d, "unsb_dist_mean"):
            u, k = rep.value(d, "unsb_dist_mean", s), rep.value(d, "sk_dist_mean", s)
            out.append(CheckResult(f"transport d={d} seed {s}: chain distance <= Sinkhorn distance", u <= k,
                                   f"{u:.4f} vs {k:.4f}"))
    return out


def _check_validate(rep: BenchReport) -> list[CheckResult]:
    out = [
        CheckResult("oracle convention", rep.value(1, "convention_passed") == 1.0, f"z = {rep.value(1, 'convention_z'):.2f}"),
        CheckResult("sinkhorn 2x2 closed form within 1e-6", rep.value(2, "sinkhorn_2x2_max_err") <= 1e-6,
                    f"{rep.value(2, 'sinkhorn_2x2_max_err'):.2e}"),
        CheckResult("time embedding injective on grid", rep.value(rep.config.trainer.n_steps, "embedding_min_dist") > 0,
                    f"{rep.value(rep.config.trainer.n_steps, 'embedding_min_dist'):.3e}"),
    ]
    for d in rep.config.dims:
        z, v = rep.value(d, "chain_mean_max_z"), rep.value(d, "chain_var_max_rel_err")
        out.append(CheckResult(f"chain consistency d={d}", z <= 3.0 and v <= 0.05,
                               f"max z {z:.2f}, max var err {v:.3f}"))
        g = rep.value(d, "self_similarity_gap")
        out.append(CheckResult(f"self-similarity d={d}", g <= 1e-6, f"{g:.2e}"))
        grads = {r.metric_name: r.value for r in rep.rows if r.dim == d and r.metric_name.startswith("grad_rel_err")}
        worst = max(grads.values())
        out.append(CheckResult(f"gradients d={d} within 1e-4", worst < 1e-4, f"worst {worst:.2e}"))
    return out


CHECKS = {
    "cod_sweep": _check_cod,
    "shells_unsb": _check_shells,
    "gaussians": _check_gaussians,
    "transport_cost": _check_transport,
    "validate": _check_validate,
}

"""Training loops: the adversarial joint-matching game, its ablations, and the baselines.

Each run draws from four independent child streams of ``config.seed``:
``init`` (weights), ``batch`` (mini-batch indices), ``noise`` (latent and
reparameterisation draws) and ``probe`` (draws used only for logging). The
encoder is built from the same ``init`` child in every mode and batches come
from the same ``batch`` stream, so a proposed run with ``lam = 0`` and
``no_decoder`` retraces the noisy baseline exactly.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .autodiff import Adam, Tensor
from .datagen import Dataset
from .models import ModelShapes, Models, TaskSpec, build_models, frozen
from .noise import TransitionMatrix, majority_vote, uniform_flip_matrix
from . import kernels

logger = logging.getLogger(__name__)

MODES = ("proposed", "clean_baseline", "noisy_baseline", "majority_vote_baseline", "forward_correction_baseline")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, breakdown: dict):
        self.iteration = iteration
        self.breakdown = breakdown
        super().__init__(f"non-finite loss at iteration {iteration}: {breakdown}")


@dataclass
class ExperimentConfig:
    dataset: str = ""
    mode: str = "proposed"
    lam: float = 0.8
    gamma: float = 1.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    iterations: int = 2000
    d_steps_per_g_step: int = 2
    log_interval: int = 100
    seed: int = 0
    no_joint: bool = False
    no_marginal: bool = False
    no_decoder: bool = False
    sim_loss: str = "ccc"
    use_discrete: bool = True
    use_continuous: bool = True
    latent_dim: int = 8
    enc_hidden: list[int] = field(default_factory=lambda: [64, 64])
    dec_hidden: list[int] = field(default_factory=lambda: [64, 64])
    stream_hidden: list[int] = field(default_factory=lambda: [64, 64])
    joint_hidden: list[int] = field(default_factory=lambda: [64])

    @property
    def flags(self) -> obj.AblationFlags:
        return obj.AblationFlags(self.no_joint, self.no_marginal, self.no_decoder)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0:
            raise ConfigError("lam", "must be >= 0")
        if self.no_joint and self.no_marginal:
            raise ConfigError("no_marginal", "no_joint and no_marginal together remove every adversarial score")
        if self.batch_size < 2:
            raise ConfigError("batch_size", "must be >= 2 (CCC needs two samples)")
        for key in ("iterations", "log_interval", "latent_dim"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.d_steps_per_g_step < 0:
            raise ConfigError("d_steps_per_g_step", "must be >= 0")
        if self.iterations % self.log_interval:
            raise ConfigError("log_interval", "must divide iterations")
        if self.sim_loss not in ("ccc", "mse"):
            raise ConfigError("sim_loss", "must be 'ccc' or 'mse'")
        if not (self.use_discrete or self.use_continuous):
            raise ConfigError("use_discrete", "at least one task family must be used")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")

    def replace(self, **kw) -> "ExperimentConfig":
        d = asdict(self)
        d.update(kw)
        return ExperimentConfig(**d)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


# ------------------------------------------------------------------- tasks

@dataclass
class Task:
    spec: TaskSpec
    train: np.ndarray  # one-hot (n, K) or values (n, d)
    test: np.ndarray   # clean class indices (n,) or values (n, d)
    transition: TransitionMatrix | None = None

    @property
    def discrete(self) -> bool:
        return self.spec.kind == "discrete"


def _onehot(y: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((y.shape[0], K))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def build_tasks(cfg: ExperimentConfig, ds: Dataset) -> list[Task]:
    """Model tasks for a mode: one head per noisy set, or a single collapsed/clean head."""
    K, d = ds.spec.n_classes, ds.spec.continuous_dim
    tasks: list[Task] = []
    if cfg.use_discrete:
        if cfg.mode == "clean_baseline" or not ds.noisy_discrete:
            tasks.append(Task(TaskSpec("discrete", K, "class"), _onehot(ds.y_train, K), ds.y_test))
        elif cfg.mode == "majority_vote_baseline":
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
            voted = majority_vote(ds.noisy_discrete, rng, n_classes=K)
            tasks.append(Task(TaskSpec("discrete", K, "class_vote"), _onehot(voted, K), ds.y_test))
        else:
            for i, (labels, rate) in enumerate(zip(ds.noisy_discrete, ds.noise.discrete_rates)):
                T = uniform_flip_matrix(K, rate) if cfg.mode == "forward_correction_baseline" else None
                tasks.append(Task(TaskSpec("discrete", K, f"class_set{i + 1}"), _onehot(labels, K), ds.y_test, T))
    if cfg.use_continuous:
        if cfg.mode == "clean_baseline" or not ds.noisy_continuous:
            tasks.append(Task(TaskSpec("continuous", d, "cont"), ds.c_train, ds.c_test))
        else:
            for i, values in enumerate(ds.noisy_continuous):
                tasks.append(Task(TaskSpec("continuous", d, f"cont_set{i + 1}"), values, ds.c_test))
    return tasks


def model_shapes(cfg: ExperimentConfig, ds: Dataset, tasks: list[Task]) -> ModelShapes:
    if ds.spec.generator == "patterns":
        lo, hi = np.zeros(ds.x_train.shape[1]), np.ones(ds.x_train.shape[1])
    else:
        lo, hi = ds.x_train.min(axis=0), ds.x_train.max(axis=0)
        pad = 0.05 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    return ModelShapes(
        input_dim=ds.x_train.shape[1], tasks=[t.spec for t in tasks], latent_dim=cfg.latent_dim,
        enc_hidden=list(cfg.enc_hidden), dec_hidden=list(cfg.dec_hidden),
        stream_hidden=list(cfg.stream_hidden), joint_hidden=list(cfg.joint_hidden),
        x_low=[float(v) for v in lo], x_high=[float(v) for v in hi])


# ------------------------------------------------------------- evaluation

def predictions_for(models: Models, x: np.ndarray) -> list[np.ndarray]:
    return models.encoder.predict(x)


def metrics_from_predictions(preds: list[np.ndarray], tasks: list[Task]) -> dict:
    """Accuracy and confusion per discrete task; CCC per dimension and MSE per continuous task."""
    if not tasks or tasks[0].test.shape[0] == 0:
        raise ValueError("empty test set")
    out = {"tasks": []}
    accs, cccs, mses = [], [], []
    with ad.no_grad():
        for p, task in zip(preds, tasks):
            if task.discrete:
                pred = np.argmax(p, axis=1)
                conf = kernels.confusion(task.test, pred, task.spec.size)
                acc = float(np.trace(conf) / conf.sum())
                accs.append(acc)
                out["tasks"].append({"name": task.spec.name, "kind": "discrete", "accuracy": acc,
                                     "confusion": conf.tolist()})
            else:
                per_dim = [obj.ccc(p[:, j], task.test[:, j]).item() for j in range(p.shape[1])]
                m = obj.mse(p, task.test).item()
                cccs.append(float(np.mean(per_dim)))
                mses.append(m)
                out["tasks"].append({"name": task.spec.name, "kind": "continuous", "ccc": per_dim,
                                     "ccc_mean": float(np.mean(per_dim)), "mse": m})
    out["accuracy"] = float(np.mean(accs)) if accs else None
    out["ccc"] = float(np.mean(cccs)) if cccs else None
    out["mse"] = float(np.mean(mses)) if mses else None
    return out


def evaluate(models: Models, ds: Dataset, tasks: list[Task]) -> dict:
    return metrics_from_predictions(predictions_for(models, ds.x_test), tasks)


# ------------------------------------------------------------------ runs

@dataclass
class RunResult:
    config: ExperimentConfig
    models: Models
    tasks: list[Task]
    runlog: list[dict]
    metrics: dict
    g_updates: int = 0
    d_updates: int = 0

    def runlog_csv(self) -> str:
        return runlog_to_csv(self.runlog)

    def curve(self, key: str = "test_acc") -> np.ndarray:
        return np.array([row[key] for row in self.runlog], dtype=np.float64)


def runlog_columns(tasks: list[Task], score_names: list[str]) -> list[str]:
    cols = ["iteration", "f_total"]
    cols += [f"ce_{t.spec.name}" for t in tasks if t.discrete]
    cols += [f"sim_{t.spec.name}" for t in tasks if not t.discrete]
    cols += ["adv_generator", "adv_discriminator"]
    cols += [f"score_{n}" for n in score_names]
    cols += ["g_joint_loss", "d_joint_loss", "train_ce_mean"]
    cols += [f"test_acc_{t.spec.name}" for t in tasks if t.discrete]
    cols += [f"test_ccc_{t.spec.name}" for t in tasks if not t.discrete]
    cols += [f"test_mse_{t.spec.name}" for t in tasks if not t.discrete]
    cols += ["test_acc", "test_ccc"]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def runlog_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def _supervised(models: Models, tasks: list[Task], x: Tensor, idx, cfg: ExperimentConfig,
                rng: np.random.Generator | None):
    enc = models.encoder(x, rng)
    preds = enc.predictions
    if cfg.mode == "forward_correction_baseline":
        # noisy-label posterior: p(noisy = j | x) = sum_i t[j, i] p(y = i | x)
        preds = [ad.matmul(p, Tensor(t.transition.t.T)) if t.transition is not None else p
                 for p, t in zip(preds, tasks)]
    targets = [t.train if idx is None else t.train[idx] for t in tasks]
    f, ce, sim = obj.multitask_loss(preds, targets, [t.spec.kind for t in tasks], cfg.gamma, cfg.sim_loss)
    return enc, f, ce, sim


def _decoder_labels(tasks: list[Task], idx) -> list[Tensor]:
    return [Tensor(t.train if idx is None else t.train[idx]) for t in tasks]


def _paired_scores(disc, enc_tuple, dec_tuple):
    """Score both tuple families in one discriminator pass over the stacked batch."""
    m = enc_tuple[0].shape[0]
    stacked = [ad.concat_first_axis([a, b]) for a, b in zip(enc_tuple, dec_tuple)]
    s = disc(stacked[0], stacked[1], stacked[2:])
    return s.rows(0, m), s.rows(m, 2 * m)


def _scores(models: Models, cfg: ExperimentConfig, x: Tensor, enc, y0_tilde: np.ndarray, labels):
    x_dec = x if cfg.no_decoder else models.decoder(y0_tilde, labels)
    return _paired_scores(models.discriminator, [x, enc.y0_sample, *enc.predictions],
                          [x_dec, Tensor(y0_tilde), *labels])


class Trainer:
    """Runs one configured experiment and records its curve."""

    def __init__(self, cfg: ExperimentConfig, ds: Dataset):
        cfg.validate()
        self.cfg = cfg
        self.ds = ds
        self.tasks = build_tasks(cfg, ds)
        self.shapes = model_shapes(cfg, ds, self.tasks)
        init_ss, batch_ss, noise_ss, probe_ss = np.random.SeedSequence(cfg.seed).spawn(4)
        self.adversarial = cfg.mode == "proposed"
        self.models = build_models(self.shapes, init_ss, adversarial=self.adversarial)
        self.batch_rng = np.random.default_rng(batch_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.probe_seed = probe_ss
        g_params = self.models.encoder.parameters()
        if self.adversarial and not cfg.no_decoder:
            g_params = g_params + self.models.decoder.parameters()
        adam = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        self.opt_g = Adam(g_params, **adam)
        self.opt_d = Adam(self.models.discriminator.parameters(), **adam) if self.adversarial else None
        self.g_updates = 0
        self.d_updates = 0
        if self.adversarial:
            dummy = obj.Scores(Tensor(np.zeros((1, len(self.tasks) + 3))))
            self.score_names = [dummy.names[i] for i in dummy.active_indices(cfg.flags)]
        else:
            self.score_names = []
        self.columns = runlog_columns(self.tasks, self.score_names)

    # ---------------------------------------------------------------- steps
    def generator_step(self, idx: np.ndarray) -> None:
        cfg, m = self.cfg, self.models
        x = Tensor(self.ds.x_train[idx])
        if not self.adversarial:
            _, f, ce, sim = _supervised(m, self.tasks, x, idx, cfg, None)
            self._check(f, ce, sim)
            self._backward(f)
            self.opt_g.step()
            self.g_updates += 1
            return
        y0_tilde = self.noise_rng.standard_normal((len(idx), self.shapes.latent_dim))
        labels = _decoder_labels(self.tasks, idx)
        with frozen(m.discriminator):
            enc, f, ce, sim = _supervised(m, self.tasks, x, idx, cfg, self.noise_rng)
            s_enc, s_dec = _scores(m, cfg, x, enc, y0_tilde, labels)
            total = obj.generator_objective(f, s_enc, s_dec, cfg.lam, cfg.flags)
            self._check(total, ce, sim)
            self._backward(total)
        self.opt_g.step()
        self.g_updates += 1

    def discriminator_step(self, idx: np.ndarray) -> None:
        cfg, m = self.cfg, self.models
        x = Tensor(self.ds.x_train[idx])
        y0_tilde = self.noise_rng.standard_normal((len(idx), self.shapes.latent_dim))
        labels = _decoder_labels(self.tasks, idx)
        with ad.no_grad():
            enc = m.encoder(x, self.noise_rng)
            x_dec = x if cfg.no_decoder else m.decoder(y0_tilde, labels)
        s_enc, s_dec = _paired_scores(m.discriminator, [x, enc.y0_sample, *enc.predictions],
                                      [x_dec, Tensor(y0_tilde), *labels])
        value = obj.discriminator_objective(s_enc, s_dec, cfg.flags)
        if not math.isfinite(value.item()):
            raise TrainingDiverged(self.g_updates, {"adv_discriminator": value.item()})
        self._backward(-value)
        self.opt_d.step()
        self.d_updates += 1

    def _backward(self, loss: Tensor) -> None:
        try:
            ad.backward(loss)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(self.g_updates + 1, {"gradient": str(exc)}) from None

    def _check(self, total: Tensor, ce, sim) -> None:
        if not math.isfinite(total.item()):
            raise TrainingDiverged(self.g_updates + 1, {
                "total": total.item(), "ce": [c.item() for c in ce], "sim": [s.item() for s in sim]})

    # -------------------------------------------------------------- logging
    def probe(self) -> dict:
        """Full-train-set losses and test metrics for the current parameters (no updates)."""
        cfg, m = self.cfg, self.models
        rng = np.random.default_rng(self.probe_seed)
        row = dict.fromkeys(self.columns)
        with ad.no_grad():
            x = Tensor(self.ds.x_train)
            enc, f, ce, sim = _supervised(m, self.tasks, x, None, cfg, rng if self.adversarial else None)
            row["f_total"] = f.item()
            d_tasks = [t for t in self.tasks if t.discrete]
            c_tasks = [t for t in self.tasks if not t.discrete]
            for t, c in zip(d_tasks, ce):
                row[f"ce_{t.spec.name}"] = c.item()
            for t, s in zip(c_tasks, sim):
                row[f"sim_{t.spec.name}"] = s.item()
            row["train_ce_mean"] = float(np.mean([c.item() for c in ce])) if ce else None
            if self.adversarial:
                y0_tilde = rng.standard_normal((x.shape[0], self.shapes.latent_dim))
                s_enc, s_dec = _scores(m, cfg, x, enc, y0_tilde, _decoder_labels(self.tasks, None))
                row["adv_generator"] = obj.generator_adversarial(s_enc, s_dec, cfg.flags).item()
                row["adv_discriminator"] = obj.discriminator_objective(s_enc, s_dec, cfg.flags).item()
                names, terms = obj.score_terms(s_enc, s_dec, cfg.flags)
                for name, term in zip(names, terms.data):
                    row[f"score_{name}"] = float(term)
                row["g_joint_loss"] = float(s_enc.matrix.data[:, 0].mean() - s_dec.matrix.data[:, 0].mean())
                all_scores = obj.AblationFlags(no_marginal=True)
                row["d_joint_loss"] = 0.0 - obj.discriminator_objective(s_enc, s_dec, all_scores).item()
        metrics = evaluate(m, self.ds, self.tasks)
        for t, tm in zip(self.tasks, metrics["tasks"]):
            if t.discrete:
                row[f"test_acc_{t.spec.name}"] = tm["accuracy"]
            else:
                row[f"test_ccc_{t.spec.name}"] = tm["ccc_mean"]
                row[f"test_mse_{t.spec.name}"] = tm["mse"]
        row["test_acc"] = metrics["accuracy"]
        row["test_ccc"] = metrics["ccc"]
        return row

    # ----------------------------------------------------------------- run
    def run(self) -> RunResult:
        cfg = self.cfg
        n, m = self.ds.x_train.shape[0], min(cfg.batch_size, self.ds.x_train.shape[0])
        log = []
        row = self.probe()
        row["iteration"] = 0
        log.append(row)
        for it in range(1, cfg.iterations + 1):
            idx = self.batch_rng.choice(n, size=m, replace=False)
            self.generator_step(idx)
            if self.adversarial:
                for _ in range(cfg.d_steps_per_g_step):
                    self.discriminator_step(idx)
            if it % cfg.log_interval == 0:
                row = self.probe()
                row["iteration"] = it
                log.append(row)
                logger.debug("iter %d acc=%s f=%.4f", it, row["test_acc"], row["f_total"])
        metrics = evaluate(self.models, self.ds, self.tasks)
        return RunResult(cfg, self.models, self.tasks, log, metrics, self.g_updates, self.d_updates)


def train(cfg: ExperimentConfig, ds: Dataset) -> RunResult:
    return Trainer(cfg, ds).run()


def train_proposed(cfg: ExperimentConfig, ds: Dataset) -> RunResult:
    if cfg.mode != "proposed":
        raise ConfigError("mode", "train_proposed requires mode = proposed")
    return train(cfg, ds)


def train_baseline(cfg: ExperimentConfig, ds: Dataset) -> RunResult:
    if cfg.mode not in ("clean_baseline", "noisy_baseline", "majority_vote_baseline"):
        raise ConfigError("mode", f"not a plain baseline mode: {cfg.mode!r}")
    return train(cfg, ds)


def train_forward_correction(cfg: ExperimentConfig, ds: Dataset,
                             T: TransitionMatrix | list[TransitionMatrix] | None = None) -> RunResult:
    """Forward-corrected training; ``T`` defaults to the true synthesis matrix of each noisy set."""
    cfg = cfg.replace(mode="forward_correction_baseline")
    trainer = Trainer(cfg, ds)
    if T is not None:
        mats = T if isinstance(T, list) else [T] * sum(t.discrete for t in trainer.tasks)
        it = iter(mats)
        for task in trainer.tasks:
            if task.discrete:
                task.transition = TransitionMatrix(next(it).t)
    return trainer.run()


def _train_star(args):
    return train(*args)


def run_many(configs: list[ExperimentConfig], ds: Dataset, jobs: int = 1) -> list[RunResult]:
    """Train independent configs, in worker processes when ``jobs > 1``; output order follows input."""
    if jobs < 1:
        raise ConfigError("jobs", "must be >= 1")
    for cfg in configs:
        cfg.validate()
    if jobs == 1 or len(configs) < 2:
        return [train(cfg, ds) for cfg in configs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_star, [(cfg, ds) for cfg in configs]))

"""Joint adversarial training of the generator, critic and pair classifier.

One outer iteration runs ``n_dis`` critic updates on seen data, then one
joint step: seen and unseen fakes are generated, pairs are built, the pair
loss and generator objective are differentiated on a single graph, and the
classifier is updated before the generator.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericAbort, PairingError
from .losses import LOG_COLUMNS, LossBreakdown, combined_ci_loss, generator_objective, pair_mse, wgan_critic_loss
from .models import Adam, init_params, save_checkpoint
from .pairing import build_seen_pairs, build_unseen_pairs

logger = logging.getLogger(__name__)

_MAX_RESAMPLE = 100


def sample_seen_batch(dataset, batch_size, rng, d_z, dtype=np.float64):
    """Uniform-with-replacement draw of training rows, their attributes and fresh noise."""
    if dataset.train_idx.size == 0:
        raise DataError("training set is empty")
    idx = dataset.train_idx[rng.integers(dataset.train_idx.size, size=batch_size)]
    labels = dataset.labels[idx]
    x = dataset.features[idx].astype(dtype, copy=False)
    a = dataset.attributes[labels].astype(dtype, copy=False)
    z = rng.standard_normal((batch_size, d_z)).astype(dtype, copy=False)
    return x, a, labels, z


def sample_unseen_attr_batch(attributes, unseen_classes, batch_size, rng, d_z, dtype=np.float64):
    """Uniform draw of unseen class attributes with fresh noise."""
    unseen_classes = np.asarray(unseen_classes)
    if unseen_classes.size < 2:
        raise DataError(f"need at least 2 unseen classes, got {unseen_classes.size}")
    labels = unseen_classes[rng.integers(unseen_classes.size, size=batch_size)]
    a = np.asarray(attributes)[labels].astype(dtype, copy=False)
    z = rng.standard_normal((batch_size, d_z)).astype(dtype, copy=False)
    return a, labels, z


@dataclass
class TrainStats:
    critic_updates: int = 0
    classifier_updates: int = 0
    generator_updates: int = 0
    unseen_attr_reads: int = 0
    resamples: int = 0


@dataclass
class TrainResult:
    model: object
    stats: TrainStats
    log_lines: list
    last: LossBreakdown
    checkpoint_dir: Path | None = None
    checkpoint_fingerprint: str = ""
    manifest: dict = field(default_factory=dict)


class Trainer:
    def __init__(self, config, dataset, model=None):
        self.config = config.check()
        self.dtype = config.dtype
        self.dataset = dataset
        if len(dataset.seen_classes) < 2:
            raise DataError(f"need at least 2 seen classes, got {len(dataset.seen_classes)}")
        if config.gamma > 0 and len(dataset.unseen_classes) < 2:
            raise DataError(f"need at least 2 unseen classes, got {len(dataset.unseen_classes)}")
        self.d_z = config.d_z or dataset.d_a
        if model is None:
            model = init_params(dataset.d_x, dataset.d_a, self.d_z, config.g_hidden, config.d_hidden,
                                config.c_hidden, seed=config.seed, dtype=self.dtype)
        self.model = model
        self.features = dataset.features.astype(self.dtype, copy=False)
        self.attributes = dataset.attributes.astype(self.dtype, copy=False)
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A1]))
        adam = dict(lr=config.lr, b1=config.adam_b1, b2=config.adam_b2, eps=config.adam_eps)
        self.opt_d = Adam(model.critic.net.params, **adam)
        self.opt_c = Adam(model.classifier.net.params, **adam)
        self.opt_g = Adam(model.generator.net.params, **adam)
        self.stats = TrainStats()
        self.iteration = 0
        self.last = LossBreakdown(lam=config.lam, gamma=config.gamma)

    def _seen_batch(self, need_two_classes=False):
        for _ in range(_MAX_RESAMPLE):
            x, a, y, z = sample_seen_batch(self.dataset, self.config.batch_size, self.rng, self.d_z, self.dtype)
            if not need_two_classes or len(np.unique(y)) > 1:
                return x, a, y, z
            self.stats.resamples += 1
        raise PairingError("could not draw a seen batch with two classes")

    def _unseen_batch(self):
        self.stats.unseen_attr_reads += 1
        for _ in range(_MAX_RESAMPLE):
            a, y, z = sample_unseen_attr_batch(self.attributes, self.dataset.unseen_classes,
                                               self.config.batch_size, self.rng, self.d_z, self.dtype)
            if len(np.unique(y)) > 1:
                return a, y, z
            self.stats.resamples += 1
        raise PairingError("could not draw an unseen batch with two classes")

    def critic_step(self):
        g, d = self.model.generator, self.model.critic
        x, a, _, z = self._seen_batch()
        with ad.no_grad():
            fakes = g(z, a).value
        with ad.Tape(higher_order=True):
            loss, w, gp = wgan_critic_loss(d, x, fakes, a, self.config.lam, rng=self.rng)
            names = list(d.net.params)
            grads = ad.grad(loss, [d.net.params[k] for k in names])
        self.opt_d.step(dict(zip(names, grads)))
        self.stats.critic_updates += 1
        return w.item(), gp.item()

    def joint_step(self):
        g, d, c = self.model.generator, self.model.critic, self.model.classifier
        x, a, y, z = self._seen_batch(need_two_classes=True)
        fakes = g(z, a)
        l_s = pair_mse(c, build_seen_pairs(x, y, fakes, y, self.rng))
        l_u = None
        if self.config.gamma > 0:
            ua, uy, uz = self._unseen_batch()
            uz2 = self.rng.standard_normal(uz.shape).astype(self.dtype, copy=False)
            pairs = build_unseen_pairs(g(uz, ua), g(uz2, ua), uy, self.rng)
            l_u = pair_mse(c, pairs)
        l_ci = combined_ci_loss(l_s, l_u, self.config.gamma)
        objective = generator_objective(d, fakes, a, l_ci)

        c_names, g_names = list(c.net.params), list(g.net.params)
        grads = ad.grad(objective, [c.net.params[k] for k in c_names] + [g.net.params[k] for k in g_names])
        # both gradient sets are taken before either update
        self.opt_c.step(dict(zip(c_names, grads[:len(c_names)])))
        self.opt_g.step(dict(zip(g_names, grads[len(c_names):])))
        self.stats.classifier_updates += 1
        self.stats.generator_updates += 1
        return l_s.item(), (l_u.item() if l_u is not None else 0.0), l_ci.item(), objective.item()

    def step(self):
        w = gp = 0.0
        for _ in range(self.config.n_dis):
            w, gp = self.critic_step()
        l_s, l_u, l_ci, obj = self.joint_step()
        self.iteration += 1
        self.last = LossBreakdown(w, gp, l_s, l_u, l_ci, obj, self.config.lam, self.config.gamma)
        if not self.last.is_finite():
            raise NumericAbort(
                f"non-finite loss at iteration {self.iteration}: {self.last}",
                iteration=self.iteration, breakdown=self.last)
        return self.last

    def run(self, iterations=None, on_log=None):
        iterations = self.config.iterations if iterations is None else iterations
        lines = []
        for _ in range(iterations):
            breakdown = self.step()
            if self.iteration % self.config.log_interval == 0:
                line = breakdown.log_line(self.iteration)
                lines.append(line)
                logger.info(line)
                if on_log is not None:
                    on_log(line)
        return lines


def train(config, dataset, out_dir=None, settings_echo=None):
    """Run the full training loop and, when ``out_dir`` is given, write its artifacts.

    ``out_dir`` receives ``checkpoint/``, ``loss_log.tsv`` and ``run_manifest.txt``.
    """
    started = time.time()
    trainer = Trainer(config, dataset)
    lines = trainer.run()
    result = TrainResult(trainer.model, trainer.stats, lines, trainer.last)
    manifest = {f"config.{k}": v for k, v in asdict(config).items()}
    manifest["config.d_z_effective"] = trainer.d_z
    if settings_echo:
        for line in settings_echo:
            k, v = line.split(" = ", 1)
            manifest[f"settings.{k}"] = v
    manifest["dataset_fingerprint"] = dataset.fingerprint or dataset.compute_fingerprint()
    manifest["final_iteration"] = trainer.iteration
    manifest["critic_updates"] = trainer.stats.critic_updates
    manifest["generator_updates"] = trainer.stats.generator_updates
    manifest["classifier_updates"] = trainer.stats.classifier_updates
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint"
        result.checkpoint_fingerprint = save_checkpoint(
            ckpt, trainer.model, config.seed, trainer.iteration,
            extra={"dataset_fingerprint": manifest["dataset_fingerprint"]})
        result.checkpoint_dir = ckpt
        log_path = out_dir / "loss_log.tsv"
        log_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        manifest["checkpoint_path"] = str(ckpt)
        manifest["checkpoint_fingerprint"] = result.checkpoint_fingerprint
        manifest["loss_log_path"] = str(log_path)
        manifest["loss_log_columns"] = ",".join(LOG_COLUMNS)
    manifest["wall_clock_seconds"] = f"{time.time() - started:.3f}"
    if out_dir is not None:
        (out_dir / "run_manifest.txt").write_text(
            "".join(f"{k} = {v}\n" for k, v in manifest.items()), encoding="utf-8")
    result.manifest = manifest
    return result

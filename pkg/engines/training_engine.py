"""
Training Engine — alternating adversarial updates of G and D on pairs
synthesized on the fly.

Every random choice is keyed on (seed, iteration, slot): the epoch
permutation of the dataset, the crop, the per-pair parameters and the
noise. Resuming therefore needs only the checkpointed iteration counter.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from engines.synth_engine import make_training_pair, pair_rng, sample_params
from models.degrade import ManifestEntry, SampleBatch
from models.raster import Raster, split_luma
from models.train_config import Checkpoint, TrainConfig
from nngrad.layers import frozen_stats
from nngrad.losses import LossBundle, loss_adv, loss_disc, loss_generator_total, loss_linf
from nngrad.networks import (
    DiscriminatorNet, GeneratorNet, build_networks, discriminator_forward, generator_forward, restore,
)
from nngrad.optim import Adam
from nngrad.tensor import Tensor
from services import report_service
from services.checkpoint_service import save_checkpoint
from services.image_service import load_image
from utils.errors import EmptyDatasetError, NonFiniteLossError, PatchTooLargeError

logger = logging.getLogger(__name__)

PERMUTATION_STREAM = 1
EMA_ALPHA = 0.1


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def match_channels(r: Raster, channels: int) -> Raster:
    if r.channels == channels:
        return r
    if channels == 1:
        return split_luma(r)[0]
    return Raster(np.repeat(r.data, 3, axis=2))


class DatasetStream:
    """Deterministic source of training batches, addressed by iteration."""

    def __init__(
        self,
        entries: Sequence[ManifestEntry],
        cfg: TrainConfig,
        loader: Callable[[str], Raster] = load_image,
    ):
        if not entries:
            raise EmptyDatasetError("training dataset is empty")
        self.cfg = cfg
        self.entries: List[ManifestEntry] = []
        self.images: Dict[str, Raster] = {}
        ph, pw = cfg.patch
        for entry in entries:
            img = match_channels(loader(entry.path), cfg.channels)
            if img.height < ph or img.width < pw:
                logger.warning(f"Skipping {entry.path}: {img.height}x{img.width} is smaller than the {ph}x{pw} patch")
                continue
            self.images[entry.path] = img
            self.entries.append(entry)
        if not self.entries:
            raise EmptyDatasetError(f"no dataset image is at least {ph}x{pw}")
        self._perms: Dict[int, np.ndarray] = {}
        logger.info(f"Dataset ready: {len(self.entries)} images")

    def __len__(self) -> int:
        return len(self.entries)

    def _permutation(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            perm = pair_rng(self.cfg.seed, epoch, stream=PERMUTATION_STREAM).permutation(len(self.entries))
            self._perms = {epoch: perm}
        return self._perms[epoch]

    def entry_at(self, position: int) -> ManifestEntry:
        """Entry at a global sample position; the dataset reshuffles every pass."""
        epoch, offset = divmod(position, len(self.entries))
        return self.entries[int(self._permutation(epoch)[offset])]

    def batch(self, iteration: int) -> SampleBatch:
        cfg = self.cfg
        samples = []
        for slot in range(cfg.batch_size):
            entry = self.entry_at(iteration * cfg.batch_size + slot)
            rng = pair_rng(cfg.seed, iteration, slot)
            pair_seed = int(rng.integers(0, 2**31 - 1))
            if entry.has_params:
                params = entry.params_or(cfg.degrade)
            elif cfg.param_sampling:
                params = sample_params(cfg.ranges, rng, seed=pair_seed)
            else:
                params = cfg.degrade
            try:
                samples.append(make_training_pair(self.images[entry.path], params, cfg.patch, rng))
            except PatchTooLargeError:
                logger.warning(f"Patch does not fit {entry.path}; skipped")
        return SampleBatch.from_samples(samples)


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------

def _finite(name: str, value: Tensor, iteration: int) -> float:
    v = float(value.data)
    if not math.isfinite(v):
        raise NonFiniteLossError(name, iteration, v)
    return v


def train_step(
    G: GeneratorNet,
    D: DiscriminatorNet,
    batch: SampleBatch,
    opt_g: Adam,
    opt_d: Adam,
    adv_lambda: float,
    iteration: int = 0,
) -> LossBundle:
    """D update on a detached fake, then G update against the updated D."""
    G.train()
    D.train()
    degraded = Tensor(batch.degraded)
    real = Tensor(batch.ground_truth)
    restored = restore(degraded, generator_forward(G, degraded))

    opt_d.zero_grad()
    l_disc = loss_disc(discriminator_forward(D, real), discriminator_forward(D, Tensor(restored.data)))
    disc_value = _finite("l_disc", l_disc, iteration)
    l_disc.backward()
    opt_d.step()

    opt_g.zero_grad()
    with frozen_stats(D):
        d_out = discriminator_forward(D, restored)
    l_inf = loss_linf(restored, batch)
    l_adv = loss_adv(d_out)
    l_gen = loss_generator_total(l_inf, l_adv, adv_lambda)
    inf_value = _finite("l_inf", l_inf, iteration)
    adv_value = _finite("l_adv", l_adv, iteration)
    gen_value = _finite("l_gen", l_gen, iteration)
    l_gen.backward()
    opt_g.step()
    # gradients that reached D through the G loss are not D's to apply
    D.zero_grad()

    return LossBundle(l_inf=inf_value, l_adv=adv_value, l_gen=gen_value, l_disc=disc_value)


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------

def loss_ema(values: Sequence[float], alpha: float = EMA_ALPHA) -> List[float]:
    out: List[float] = []
    for v in values:
        out.append(v if not out else alpha * v + (1.0 - alpha) * out[-1])
    return out


def log_path_for(checkpoint_path: Union[str, Path]) -> Path:
    path = Path(checkpoint_path)
    return path.with_name(path.stem + "_loss.tsv")


def curve_path_for(checkpoint_path: Union[str, Path]) -> Path:
    path = Path(checkpoint_path)
    return path.with_name(path.stem + "_loss.html")


def snapshot(G, D, opt_g: Adam, opt_d: Adam, iteration: int, cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(
        generator=G.state_dict(),
        discriminator=D.state_dict(),
        opt_g=opt_g.state_dict(),
        opt_d=opt_d.state_dict(),
        iteration=iteration,
        config=cfg,
        optimizer_steps={"opt_g": opt_g.step_count, "opt_d": opt_d.step_count},
    )


def init_training(cfg: TrainConfig) -> Tuple[GeneratorNet, DiscriminatorNet, Adam, Adam]:
    G, D = build_networks(
        cfg.channels, cfg.features, cfg.residual_units, cfg.disc_features,
        cfg.disc_units, cfg.patch, cfg.seed,
    )
    opt_g = Adam(G.named_parameters(), lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2))
    opt_d = Adam(D.named_parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2))
    return G, D, opt_g, opt_d


def restore_training(ckpt: Checkpoint, G, D, opt_g: Adam, opt_d: Adam) -> None:
    G.load_state_dict(ckpt.generator)
    D.load_state_dict(ckpt.discriminator)
    if ckpt.opt_g:
        opt_g.load_state_dict(ckpt.opt_g, ckpt.optimizer_steps.get("opt_g", 0))
    if ckpt.opt_d:
        opt_d.load_state_dict(ckpt.opt_d, ckpt.optimizer_steps.get("opt_d", 0))


def _write_reports(history: List[Tuple[int, LossBundle]], checkpoint_path: Path) -> None:
    df = report_service.loss_frame(history)
    report_service.write_loss_log(df, log_path_for(checkpoint_path))
    report_service.write_loss_curve(df, curve_path_for(checkpoint_path), loss_ema(df["l_inf"].tolist()))


def train(
    cfg: TrainConfig,
    entries: Sequence[ManifestEntry],
    checkpoint_path: Optional[Union[str, Path]] = None,
    resume: Optional[Checkpoint] = None,
    loader: Callable[[str], Raster] = load_image,
    history_out: Optional[List[Tuple[int, LossBundle]]] = None,
) -> Checkpoint:
    """
    Run iterations up to cfg.iterations. With a checkpoint path, a checkpoint,
    the loss log and the loss-curve page are written every
    checkpoint_interval iterations and at the end.
    """
    stream = DatasetStream(entries, cfg, loader)
    G, D, opt_g, opt_d = init_training(cfg)
    start = 0
    history: List[Tuple[int, LossBundle]] = []
    if resume is not None:
        restore_training(resume, G, D, opt_g, opt_d)
        start = resume.iteration
        if checkpoint_path is not None:
            previous = report_service.read_loss_log(log_path_for(checkpoint_path))
            previous = previous[previous["iter"] < start]
            history = [
                (int(row["iter"]), LossBundle(
                    l_inf=float(row["l_inf"]), l_adv=float(row["l_adv"]),
                    l_gen=float(row["l_inf"]) + cfg.adv_lambda * float(row["l_adv"]),
                    l_disc=float(row["l_disc"]),
                ))
                for row in previous.to_dict(orient="records")
            ]
        logger.info(f"Resuming at iteration {start}")

    ckpt = snapshot(G, D, opt_g, opt_d, start, cfg)
    for it in range(start, cfg.iterations):
        bundle = train_step(G, D, stream.batch(it), opt_g, opt_d, cfg.adv_lambda, it)
        history.append((it, bundle))
        if history_out is not None:
            history_out.append((it, bundle))
        logger.debug(
            f"iter {it}: l_inf {bundle.l_inf:.5g} l_adv {bundle.l_adv:.5g} l_disc {bundle.l_disc:.5g}"
        )
        done = it + 1
        if done % cfg.checkpoint_interval == 0 or done == cfg.iterations:
            ckpt = snapshot(G, D, opt_g, opt_d, done, cfg)
            if checkpoint_path is not None:
                save_checkpoint(ckpt, checkpoint_path)
                _write_reports(history, Path(checkpoint_path))
            logger.info(f"Iteration {done}/{cfg.iterations}: l_inf {bundle.l_inf:.5g}, l_disc {bundle.l_disc:.5g}")
    return ckpt

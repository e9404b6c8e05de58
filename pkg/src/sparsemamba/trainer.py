"""Collaborative training of the segmentation network and a guide decoder.

Each step runs one shared forward: the network produces the coarse
probability map and its bottleneck embedding; the guide encoder's embedding
is projected (1x1 conv + bilinear resize, owned by the trainer) and summed
with the network's; box prompts extracted from the coarse mask and scribbles
drive the guide decoder, whose refined map supervises the network as a
constant target. Two losses with strictly separated update sets follow:

* network loss: lam * Dice(coarse, refined-detached)
  + (1 - lam) * (pCE(coarse) + pCE(refined-detached)) -> updates network
  (and fusion projection) parameters only;
* guide loss: pCE(refined) -> updates guide decoder parameters only.

Without the guide, training reduces to plain partial cross-entropy on the
supervision labels. Supervision is either the raw scribbles or their
boundary-enriched version, computed once per case and cached.
"""

from __future__ import annotations

import csv
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import augment_case, load_dataset, synth_dataset
from .guide import IdentityGuide, SyntheticOracleGuide
from .losses import dice_coefficient, pce_loss, total_loss
from .network import (Conv2d, Module, SparseMambaNet, load_checkpoint,
                      load_into_module, save_checkpoint)
from .prompts import extract_bboxes
from .spobe import LabelMap, enrich_scribbles, spobe
from .tensor import Tensor


def poly_lr(base_lr, iteration, max_iter, power=0.9):
    """Polynomially decaying rate: base * (1 - iter/max_iter)^power."""
    if max_iter <= 0:
        return base_lr
    return base_lr * (1.0 - iteration / max_iter) ** power


class SGD:
    """Momentum SGD with classic weight decay and global-norm gradient clipping."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0, clip_norm=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self._velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self, lr):
        scale = 1.0
        if self.clip_norm > 0:
            total = 0.0
            for p in self.params:
                if p.grad is not None:
                    total += float((p.grad.astype(np.float64) ** 2).sum())
            norm = np.sqrt(total)
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad * scale + self.weight_decay * p.data
            v = self._velocity[id(p)]
            v *= self.momentum
            v += g
            p.data -= lr * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class FusionProjection(Module):
    """Trainer-owned map from guide embeddings onto the network embedding."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 1, rng, dtype=dtype)

    def __call__(self, embedding, out_h, out_w):
        return T.resize_bilinear(self.conv(embedding), out_h, out_w)


def fuse_embeddings(net_embedding, guide_embedding):
    """Elementwise sum of two aligned embeddings (shapes must already match)."""
    if net_embedding.shape != guide_embedding.shape:
        raise ValueError(f"embedding shapes differ after projection: "
                         f"{net_embedding.shape} vs {guide_embedding.shape}")
    return T.add(net_embedding, guide_embedding)


@dataclass
class StepStats:
    """Diagnostics of one optimisation step, for isolation assertions."""

    loss_net: float
    loss_guide: float | None
    dice_target_tracked: bool = False
    guide_encoder_grads: list = field(default_factory=list)


@dataclass
class TrainResult:
    history: list
    final_val_dice: float
    checkpoint_path: str
    net: object


def mean_foreground_dice(net, cases):
    """Mean Dice over foreground classes and cases, scored on hard argmax."""
    scores = []
    for case in cases:
        pred = LabelMap(net.predict_labels(case.image.astype(np.float32)),
                        case.ground_truth.num_classes)
        for c in range(1, case.ground_truth.num_classes):
            scores.append(dice_coefficient(pred, case.ground_truth, c))
    return float(np.mean(scores)) if scores else 0.0


class Trainer:
    """Owns the network, guide, fusion projection and both optimizers."""

    def __init__(self, config, net=None, guide=None, rng=None):
        config.validate()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.net = net if net is not None else SparseMambaNet(config.network_config(), rng)
        if guide is not None:
            self.guide = guide
        elif config.guide == "identity":
            self.guide = IdentityGuide(config.num_classes)
        else:
            self.guide = SyntheticOracleGuide(config.num_classes, config.widths[-1],
                                              seed=config.seed)
        self.projection = FusionProjection(self._guide_embed_channels(), config.widths[-1], rng)
        net_params = self.net.parameters() + self.projection.parameters()
        self.opt_net = SGD(net_params, config.momentum, config.weight_decay, config.clip_norm)
        decoder_params = self.guide.decoder_parameters()
        self.opt_guide = SGD(decoder_params, config.momentum, config.weight_decay,
                             config.clip_norm) if decoder_params else None
        self.last_step = None

    def _guide_embed_channels(self):
        probe = Tensor(np.zeros((1, self.config.image_size, self.config.image_size),
                                dtype=np.float32))
        with T.no_grad():
            emb = self.guide.encode_image(probe)
        return emb.shape[0]

    # -- single optimisation step ---------------------------------------------

    def step(self, batch, lr):
        """One update from a list of (image, scribbles, supervision) triples.

        Returns the batch-mean losses; the guide loss is None when the guide
        path is disabled or the guide has no trainable decoder.
        """
        cfg = self.config
        net_losses = []
        guide_losses = []
        dice_target_tracked = False
        for image, scribbles, supervision in batch:
            x = Tensor(image[None].astype(np.float32))
            if cfg.use_pcl:
                coarse, net_emb = self.net.forward_with_features(x)
                guide_emb = self.guide.encode_image(x)
                projected = self.projection(guide_emb, net_emb.shape[1], net_emb.shape[2])
                fused = fuse_embeddings(net_emb, projected)
                boxes = extract_bboxes(coarse, scribbles, cfg.bbox_tau)
                prompt = self.guide.encode_prompt(boxes)
                self.guide.set_supervision(supervision)
                refined = self.guide.decode(fused, prompt, coarse=coarse.detach())
                target = refined.detach()
                dice_target_tracked = dice_target_tracked or target.tracked
                net_losses.append(total_loss(coarse, target, supervision, cfg.lam,
                                             squared_dice=True))
                if self.opt_guide is not None:
                    guide_losses.append(pce_loss(refined, supervision))
            else:
                coarse = self.net(x)
                net_losses.append(pce_loss(coarse, supervision))
        loss_net = _mean_loss(net_losses)
        if not np.isfinite(loss_net.data):
            raise RuntimeError(f"network loss diverged to {float(loss_net.data)!r}")
        loss_net.backward()
        self.opt_net.step(lr)
        self.opt_net.zero_grad()
        self.net.constrain()
        loss_guide_value = None
        if guide_losses:
            # clear gradients the guide loss may deposit on network tensors;
            # only decoder parameters take this update
            loss_guide = _mean_loss(guide_losses)
            if not np.isfinite(loss_guide.data):
                raise RuntimeError(f"guide loss diverged to {float(loss_guide.data)!r}")
            loss_guide.backward()
            self.opt_guide.step(lr)
            self.opt_guide.zero_grad()
            self.opt_net.zero_grad()
            loss_guide_value = float(loss_guide.data)
        self.last_step = StepStats(
            loss_net=float(loss_net.data),
            loss_guide=loss_guide_value,
            dice_target_tracked=dice_target_tracked,
            guide_encoder_grads=[p.grad for p in self.guide.encoder_parameters()],
        )
        return self.last_step


def _mean_loss(losses):
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    return total / len(losses)


def prepare_supervision(config, cases):
    """Per-case supervision labels: raw scribbles or boundary-enriched ones."""
    supervision = []
    for case in cases:
        if config.use_spobe:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                boundaries = spobe(case.image, case.scribbles,
                                   edge_method=config.edge_method,
                                   schedule=config.spobe_schedule,
                                   thresholds=config.spobe_thresholds(),
                                   edge_params=config.edge_params())
            supervision.append(enrich_scribbles(case.scribbles, boundaries))
        else:
            supervision.append(case.scribbles.copy())
    return supervision


def load_or_synthesize(config):
    """Train/val case lists per the config's dataset or synthetic spec."""
    if config.dataset_path:
        dataset = load_dataset(config.dataset_path, resize=config.image_size)
        cases = dataset.cases
        if len(cases) < 2:
            raise ValueError("dataset must contain at least two cases")
        n_val = max(1, len(cases) // 5)
        return cases[:-n_val], cases[-n_val:], dataset.num_classes
    total = config.synth_train + config.synth_val
    dataset = synth_dataset(config.synth_seed, total, config.image_size, config.num_classes)
    return (dataset.cases[:config.synth_train], dataset.cases[config.synth_train:],
            dataset.num_classes)


def train(config, quiet=True):
    """Full training run: returns history plus the final checkpoint."""
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    train_cases, val_cases, num_classes = load_or_synthesize(config)
    if num_classes != config.num_classes:
        raise ValueError(f"config says {config.num_classes} classes, dataset has {num_classes}")
    supervision = prepare_supervision(config, train_cases)
    trainer = Trainer(config)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    augment_rng = np.random.default_rng(config.seed + 2)
    order = []
    history = []
    checkpoint_path = os.path.join(config.out_dir, "checkpoint.bin")
    log_path = os.path.join(config.out_dir, "train_log.csv")
    t0 = time.time()
    for iteration in range(1, config.max_iter + 1):
        lr = poly_lr(config.lr, iteration - 1, config.max_iter)
        batch = []
        for _ in range(config.batch_size):
            if not order:
                order = list(shuffle_rng.permutation(len(train_cases)))
            idx = order.pop()
            case = train_cases[idx]
            sup = supervision[idx]
            if config.augment:
                image, (scr, sup_labels) = augment_case(
                    case.image, [case.scribbles.labels, sup.labels],
                    augment_rng, config.noise_sigma)
                batch.append((image,
                              LabelMap(scr, num_classes),
                              LabelMap(sup_labels, num_classes)))
            else:
                batch.append((case.image, case.scribbles, sup))
        stats = trainer.step(batch, lr)
        val_dice = ""
        if iteration % config.eval_interval == 0 or iteration == config.max_iter:
            val_dice = mean_foreground_dice(trainer.net, val_cases)
            if not quiet:
                l2 = "-" if stats.loss_guide is None else f"{stats.loss_guide:.4f}"
                print(f"iter {iteration:6d} lr {lr:.4f} L1 {stats.loss_net:.4f} "
                      f"L2 {l2} val_dice {val_dice:.4f} [{time.time() - t0:.0f}s]")
        history.append({"iter": iteration, "lr": lr, "loss_net": stats.loss_net,
                        "loss_guide": stats.loss_guide, "val_dice": val_dice})
    final_dice = mean_foreground_dice(trainer.net, val_cases) if val_cases else 0.0
    meta = {"num_classes": config.num_classes,
            "widths": ",".join(str(w) for w in config.widths),
            "image_size": config.image_size,
            "state_size": config.state_size,
            "skip_step": config.skip_step,
            "use_sparse": config.use_sparse}
    save_checkpoint(checkpoint_path, trainer.net, meta)
    _write_history(log_path, history)
    return TrainResult(history, final_dice, checkpoint_path, trainer.net)


def _write_history(path, history):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "lr", "L1", "L2", "val_dice"])
        for row in history:
            writer.writerow([row["iter"], f"{row['lr']:.6g}", f"{row['loss_net']:.6g}",
                             "" if row["loss_guide"] is None else f"{row['loss_guide']:.6g}",
                             row["val_dice"] if row["val_dice"] == ""
                             else f"{row['val_dice']:.6g}"])
    os.replace(tmp, path)


def rebuild_net_from_checkpoint(path):
    """Reconstruct a network (architecture from metadata) and load weights."""
    from .network import NetworkConfig
    meta, params = load_checkpoint(path)
    size = int(meta["image_size"])
    config = NetworkConfig(num_classes=int(meta["num_classes"]),
                           widths=tuple(int(w) for w in meta["widths"].split(",")),
                           input_size=(size, size),
                           state_size=int(meta["state_size"]),
                           skip_step=int(meta["skip_step"]),
                           use_sparse=meta["use_sparse"] == "True")
    net = SparseMambaNet(config)
    load_into_module(net, params)
    return net, config

"""Joint optimization loop for supervised, adversarial, MCC and BYOL objectives.

Randomness comes from one root seed split by purpose::

    child(root, purpose) = np.random.SeedSequence([root, PURPOSES[purpose]])

``init`` seeds the network, ``shuffle_source`` the per-epoch source order,
``shuffle_target`` the cyclic target batches, ``augment`` the BYOL views and
``generation`` the synthetic benchmark (CLI only).
"""
from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .data import CyclicBatches, SignalDataset, batch_iterator
from .errors import FormatError, ValidationError
from .losses import (
    LossBundle,
    adversarial_loss,
    byol_loss,
    get_domain_loss,
    mcc_loss,
    task_loss,
    total_loss,
)
from .metrics import metrics_report
from .model import (
    ModelState,
    NetworkSpec,
    byol_forward,
    classify,
    discriminate,
    ema_update,
    feature_extract,
    init_model,
    load_tensors_archive,
    predict,
    save_tensors_archive,
    state_from_tensors,
)
from .signal_processing import augment_batch

__all__ = [
    "METHODS",
    "PURPOSES",
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "AdamState",
    "adam_step",
    "Adam",
    "Trainer",
    "train",
    "checkpoint",
    "resume",
    "load_checkpoint",
    "child_rng",
    "derive_seed",
    "write_manifest",
]

METHODS = {
    "plain": frozenset(),
    "dann": frozenset({"adversarial"}),
    "dann_mcc": frozenset({"adversarial", "mcc"}),
    "byol_only": frozenset({"byol"}),
    "full": frozenset({"adversarial", "mcc", "byol"}),
}

PURPOSES = {"init": 0, "shuffle_source": 1, "shuffle_target": 2, "augment": 3, "generation": 4}


def child_rng(root: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root), PURPOSES[purpose]]))


def derive_seed(root: int, purpose: str) -> int:
    return int(np.random.SeedSequence([int(root), PURPOSES[purpose]]).generate_state(1)[0])


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    lr_main: float = 5e-5
    lr_discriminator: float = 1e-5
    weight_decay: float = 1e-4
    psi: float = 1.0
    temperature_T: float = 2.5
    tau: float = 0.99
    method: str = "full"
    seed: int = 0
    noise_sigma: float = 0.1
    max_shift_frac: float = 0.1
    symmetric_byol: bool = False
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    extra_domain_losses: tuple[str, ...] = ()
    log_target_metrics: bool = True

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.extra_domain_losses = tuple(self.extra_domain_losses)
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_main < 0 or self.lr_discriminator < 0 or self.weight_decay < 0:
            raise ValidationError("learning rates and weight decay must be >= 0")
        if not self.psi > 0 or not self.temperature_T > 0:
            raise ValidationError("psi and temperature_T must be > 0")
        if not 0.0 <= self.tau <= 1.0:
            raise ValidationError("tau must lie in [0, 1]")

    @property
    def active(self) -> frozenset:
        return METHODS[self.method]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["extra_domain_losses"] = list(self.extra_domain_losses)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One in-place Adam update with coupled L2 decay (``g + weight_decay * p``).

    Moments are bias corrected; ``state`` is created lazily on the first call.
    """
    params = list(params)
    if not params:
        return
    grads = [g if g is not None else torch.zeros_like(p) for p, g in zip(params, grads)]
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    b1, b2 = betas
    state.step += 1
    if weight_decay:
        grads = torch._foreach_add(grads, params, alpha=weight_decay)
    torch._foreach_mul_(state.exp_avg, b1)
    torch._foreach_add_(state.exp_avg, grads, alpha=1.0 - b1)
    torch._foreach_mul_(state.exp_avg_sq, b2)
    torch._foreach_addcmul_(state.exp_avg_sq, grads, grads, value=1.0 - b2)
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    denom = torch._foreach_sqrt(state.exp_avg_sq)
    torch._foreach_div_(denom, math.sqrt(bc2))
    torch._foreach_add_(denom, eps)
    torch._foreach_addcdiv_(params, state.exp_avg, denom, value=-lr / bc1)


class Adam:
    """Parameter groups, each with its own learning rate and moment state.

    The parameters of a group are re-homed as views into one contiguous
    buffer so an update is a handful of vectorized ops instead of a few per
    tensor. Gradients are gathered into a matching flat buffer each step.
    """

    def __init__(self, groups: list[tuple[list[torch.nn.Parameter], float]], weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = []
        for ps, lr in groups:
            ps = list(ps)
            flat = _flatten_params(ps)
            self.groups.append({"params": ps, "flat": flat, "lr": lr, "state": AdamState()})
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self):
        for g in self.groups:
            if g["flat"] is None:
                continue
            grad = torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
                              for p in g["params"]])
            adam_step([g["flat"]], [grad], g["state"], g["lr"], self.weight_decay, self.betas, self.eps)

    @property
    def steps(self) -> int:
        return max((g["state"].step for g in self.groups), default=0)


def _flatten_params(params) -> torch.Tensor | None:
    if not params:
        return None
    with torch.no_grad():
        flat = torch.cat([p.detach().reshape(-1) for p in params])
    offset = 0
    for p in params:
        n = p.numel()
        p.data = flat[offset:offset + n].view_as(p)
        offset += n
    return flat


# ---- logging -----------------------------------------------------------------

LOG_COLUMNS = ("epoch", "task", "adv", "mcc", "byol", "total", "target_acc", "target_macro_f1", "seconds")


@dataclass
class EpochRecord:
    epoch: int
    task: float
    adv: float
    mcc: float
    byol: float
    total: float
    target_acc: float
    target_macro_f1: float
    seconds: float

    def without_time(self) -> tuple:
        return tuple(getattr(self, c) for c in LOG_COLUMNS[:-1])


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[LossBundle] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.epochs], dtype=np.float64)

    def same_trajectory(self, other: "TrainLog") -> bool:
        """Equality of every logged value except wall-clock seconds (NaN == NaN)."""
        if len(self) != len(other):
            return False
        a = np.array([r.without_time() for r in self.epochs], dtype=np.float64)
        b = np.array([r.without_time() for r in other.epochs], dtype=np.float64)
        return bool(np.array_equal(a, b, equal_nan=True))

    def to_records(self) -> list[dict]:
        return [asdict(r) for r in self.epochs]

    @classmethod
    def from_records(cls, records) -> "TrainLog":
        return cls([EpochRecord(**r) for r in records])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.epochs:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]])
        return path

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[c]) for c in LOG_COLUMNS[1:])) for r in rows])


# ---- trainer -----------------------------------------------------------------

class Trainer:
    """Stateful training run that can be checkpointed at epoch boundaries.

    Target labels, when present, feed only the per-epoch evaluation log.
    """

    def __init__(self, source: SignalDataset, target: SignalDataset, cfg: TrainConfig,
                 spec: NetworkSpec | None = None, state: ModelState | None = None):
        if source.labels is None:
            raise ValidationError("source dataset must be labeled")
        if source.signal_length != target.signal_length:
            raise ValidationError("source and target signal lengths differ")
        for name in cfg.extra_domain_losses:
            get_domain_loss(name)
        self.cfg = cfg
        self.source = source
        self.target_features = target.features
        self._target_labels = target.labels
        self._in_loss = False
        self.model = state if state is not None else init_model(spec, derive_seed(cfg.seed, "init"))
        self.optimizer = Adam(self._param_groups(), cfg.weight_decay, cfg.betas, cfg.eps)
        self.src_rng = child_rng(cfg.seed, "shuffle_source")
        self.tgt_batches = CyclicBatches(self.target_features, cfg.batch_size, child_rng(cfg.seed, "shuffle_target"))
        self.aug_rng = child_rng(cfg.seed, "augment")
        self.log = TrainLog()
        self.epoch = 0

    def _param_groups(self):
        m, active = self.model, self.cfg.active
        main = list(m.encoder.parameters()) + list(m.classifier.parameters())
        if "byol" in active:
            main += list(m.projector.parameters()) + list(m.predictor.parameters())
        groups = [(main, self.cfg.lr_main)]
        if "adversarial" in active or self.cfg.extra_domain_losses:
            groups.append((list(m.discriminator.parameters()), self.cfg.lr_discriminator))
        return groups

    @property
    def target_labels(self):
        assert not self._in_loss, "target labels must never be read while computing losses"
        return self._target_labels

    def _losses(self, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray) -> LossBundle:
        cfg, m, active = self.cfg, self.model, self.cfg.active
        comps = {}
        ns = xs.shape[0]
        needs_target = bool({"adversarial", "mcc"} & active) or bool(cfg.extra_domain_losses)
        if needs_target:
            feats = feature_extract(m, np.concatenate([xs, xt]))
            fs, ft = feats[:ns], feats[ns:]
        else:
            feats = fs = feature_extract(m, xs)
            ft = None
        logits_s = classify(m, fs)
        comps["task"] = task_loss(logits_s, ys)
        if "adversarial" in active:
            d = discriminate(m, feats, cfg.psi)
            comps["adversarial"] = adversarial_loss(d[:ns], d[ns:])
        logits_t = classify(m, ft) if ft is not None else None
        if "mcc" in active:
            comps["mcc"], _ = mcc_loss(logits_t, cfg.temperature_T)
        if "byol" in active:
            v1 = augment_batch(xt, self.aug_rng, cfg.noise_sigma, cfg.max_shift_frac)
            v2 = augment_batch(xt, self.aug_rng, cfg.noise_sigma, cfg.max_shift_frac)
            pred, proj = byol_forward(m, v1, v2)
            loss = byol_loss(pred, proj)
            if cfg.symmetric_byol:
                pred2, proj2 = byol_forward(m, v2, v1)
                loss = 0.5 * (loss + byol_loss(pred2, proj2))
            comps["byol"] = loss
        if cfg.extra_domain_losses:
            comps["extra"] = sum(get_domain_loss(n)(fs, ft, logits_s, logits_t) for n in cfg.extra_domain_losses)
        return total_loss(**comps)

    def step(self, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray) -> LossBundle:
        if not self.model.training:
            self.model.train()
        self._in_loss = True
        try:
            bundle = self._losses(xs, ys, xt)
        finally:
            self._in_loss = False
        self.optimizer.zero_grad()
        bundle.total.backward()
        self.optimizer.step()
        if "byol" in self.cfg.active:
            ema_update(self.model, self.cfg.tau)
        return bundle.item()

    def _target_metrics(self) -> tuple[float, float]:
        labels = self.target_labels
        if labels is None or not self.cfg.log_target_metrics:
            return float("nan"), float("nan")
        rep = metrics_report(labels, predict(self.model, self.target_features), self.model.spec.num_classes)
        return rep.accuracy, rep.macro_f1

    def run_epoch(self) -> EpochRecord:
        t0 = time.perf_counter()
        bundles = []
        for xs, ys in batch_iterator(self.source, self.cfg.batch_size, shuffle=True, rng=self.src_rng):
            xt = next(self.tgt_batches)
            bundles.append(self.step(xs, ys, xt))
        self.log.steps.extend(bundles)
        acc, f1 = self._target_metrics()
        self.epoch += 1

        def mean(name):
            return float(np.mean([getattr(b, name) for b in bundles]))

        rec = EpochRecord(self.epoch, mean("task"), mean("adversarial"), mean("mcc"), mean("byol"),
                          mean("total"), acc, f1, time.perf_counter() - t0)
        self.log.epochs.append(rec)
        return rec

    def run(self, epochs: int | None = None, callback=None) -> tuple[ModelState, TrainLog]:
        """Train until ``epochs`` total epochs (default ``cfg.epochs``) have completed."""
        stop = self.cfg.epochs if epochs is None else epochs
        while self.epoch < stop:
            rec = self.run_epoch()
            if callback is not None:
                callback(self, rec)
        self.model.eval()
        return self.model, self.log

    # ---- checkpointing -------------------------------------------------------

    def checkpoint(self, path) -> Path:
        tensors = {f"model/{k}": v for k, v in self.model.state_dict().items()}
        opt_meta = []
        for gi, g in enumerate(self.optimizer.groups):
            st = g["state"]
            opt_meta.append({"step": st.step, "lr": g["lr"], "has_moments": bool(st.exp_avg)})
            for pi, (m1, m2) in enumerate(zip(st.exp_avg, st.exp_avg_sq)):
                tensors[f"optim/{gi}/exp_avg/{pi}"] = m1
                tensors[f"optim/{gi}/exp_avg_sq/{pi}"] = m2
        meta = {
            "kind": "training",
            "code_version": __version__,
            "spec": self.model.spec.to_dict(),
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "epoch": self.epoch,
            "step": self.optimizer.steps,
            "optimizer": opt_meta,
            "rng": {
                "source": self.src_rng.bit_generator.state,
                "target": self.tgt_batches.state_dict(),
                "augment": self.aug_rng.bit_generator.state,
            },
            "log": self.log.to_records(),
        }
        return save_tensors_archive(path, meta, tensors)

    @classmethod
    def from_checkpoint(cls, path, source: SignalDataset, target: SignalDataset) -> "Trainer":
        meta, tensors = load_tensors_archive(path)
        if meta.get("kind") != "training":
            raise FormatError(f"{path}: not a training checkpoint")
        try:
            cfg = TrainConfig.from_dict(meta["config"])
            spec = NetworkSpec.from_dict(meta["spec"])
            model_t = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
            state = state_from_tensors(spec, model_t)
            trainer = cls(source, target, cfg, spec=spec, state=state)
            for gi, (g, gm) in enumerate(zip(trainer.optimizer.groups, meta["optimizer"], strict=True)):
                st = g["state"]
                st.step = int(gm["step"])
                if gm["has_moments"]:
                    n = sum(1 for k in tensors if k.startswith(f"optim/{gi}/exp_avg/"))
                    st.exp_avg = [tensors[f"optim/{gi}/exp_avg/{i}"] for i in range(n)]
                    st.exp_avg_sq = [tensors[f"optim/{gi}/exp_avg_sq/{i}"] for i in range(n)]
            trainer.src_rng.bit_generator.state = meta["rng"]["source"]
            trainer.tgt_batches.load_state_dict(meta["rng"]["target"])
            trainer.aug_rng.bit_generator.state = meta["rng"]["augment"]
            trainer.epoch = int(meta["epoch"])
            trainer.log = TrainLog.from_records(meta["log"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: incomplete training checkpoint ({exc})") from exc
        return trainer


def train(source: SignalDataset, target: SignalDataset, cfg: TrainConfig,
          spec: NetworkSpec | None = None, callback=None) -> tuple[ModelState, TrainLog]:
    """Run ``cfg.epochs`` epochs; an epoch is one shuffled pass over the source set,
    each source batch paired with the next batch of a reshuffling cyclic target
    iterator."""
    return Trainer(source, target, cfg, spec=spec).run(callback=callback)


def checkpoint(trainer: Trainer, path) -> Path:
    return trainer.checkpoint(path)


def resume(path, source: SignalDataset, target: SignalDataset) -> Trainer:
    return Trainer.from_checkpoint(path, source, target)


def load_checkpoint(path) -> tuple[ModelState, TrainLog, dict]:
    """Model, log and metadata from either a training or a model-only archive."""
    meta, tensors = load_tensors_archive(path)
    try:
        spec = NetworkSpec.from_dict(meta["spec"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing network spec ({exc})") from exc
    model_t = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")} or tensors
    state = state_from_tensors(spec, model_t)
    state.eval()
    return state, TrainLog.from_records(meta.get("log", [])), meta


def write_manifest(path, config: dict, **extra) -> Path:
    manifest = {
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "torch": torch.__version__,
        "config": config,
    }
    manifest.update(extra)
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path

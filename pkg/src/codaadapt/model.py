"""Network components: feature extractor F (= online encoder), classifier C,
domain discriminator D behind a gradient-reversal layer, BYOL projector and
predictor, and the EMA target encoder/projector.

Parameter names in checkpoints are the ``state_dict`` keys of
:class:`ModelState`, e.g. ``encoder.0.weight`` or ``discriminator.4.bias``.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import FormatError, NumericError, ValidationError

__all__ = [
    "NetworkSpec",
    "GRLConfig",
    "ModelState",
    "GradReverse",
    "grad_reverse",
    "init_model",
    "feature_extract",
    "classify",
    "discriminate",
    "byol_forward",
    "ema_update",
    "predict",
    "count_parameters",
    "save_tensors_archive",
    "load_tensors_archive",
    "state_tensors",
    "state_from_tensors",
    "save_model",
    "load_model",
    "AdaptiveAvgPool",
]

ARCHIVE_VERSION = 1

_DTYPES = {
    torch.float32: "f32le",
    torch.float64: "f64le",
    torch.int64: "i64le",
}
_NP_DTYPES = {"f32le": "<f4", "f64le": "<f8", "i64le": "<i8"}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


@dataclass(frozen=True)
class NetworkSpec:
    """Layer-wise architecture. Defaults reproduce the reference configuration.

    ``conv_blocks`` entries are ``(in_channels, out_channels, kernel, stride,
    padding)``; every conv is followed by BatchNorm and ReLU. Head widths list
    layer sizes input-first, with ReLU between consecutive linear layers.
    """

    conv_blocks: tuple[tuple[int, int, int, int, int], ...] = (
        (1, 16, 9, 2, 4),
        (16, 32, 7, 2, 3),
        (32, 32, 5, 2, 2),
        (32, 32, 3, 2, 1),
    )
    pool_target_length: int = 16
    classifier_widths: tuple[int, ...] = (512, 32, 3)
    discriminator_widths: tuple[int, ...] = (512, 256, 64, 1)
    projector_widths: tuple[int, ...] = (512, 256, 128)
    predictor_widths: tuple[int, ...] = (128, 256, 128)
    head_batchnorm: bool = False
    dropout: float = 0.0
    target_bn_mode: str = "eval"

    def __post_init__(self):
        blocks = tuple(tuple(int(v) for v in b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)
        for name in ("classifier_widths", "discriminator_widths", "projector_widths", "predictor_widths"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not blocks or blocks[0][0] != 1:
            raise ValidationError("first conv block must take 1 input channel")
        for prev, nxt in zip(blocks, blocks[1:]):
            if prev[1] != nxt[0]:
                raise ValidationError(f"conv channel mismatch: {prev} -> {nxt}")
        width = self.feature_width
        for name in ("classifier_widths", "discriminator_widths", "projector_widths"):
            ws = getattr(self, name)
            if len(ws) < 2 or ws[0] != width:
                raise ValidationError(f"{name} must start at the feature width {width}")
        if self.predictor_widths[0] != self.projector_widths[-1] or self.predictor_widths[-1] != self.projector_widths[-1]:
            raise ValidationError("predictor must map the projection width onto itself")
        if self.discriminator_widths[-1] != 1:
            raise ValidationError("discriminator must end in a single logit")
        if self.target_bn_mode not in ("eval", "train"):
            raise ValidationError("target_bn_mode must be 'eval' or 'train'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")

    @property
    def feature_width(self) -> int:
        return self.conv_blocks[-1][1] * self.pool_target_length

    @property
    def num_classes(self) -> int:
        return self.classifier_widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**{k: (tuple(tuple(b) for b in v) if k == "conv_blocks" else v) for k, v in d.items()})


@dataclass(frozen=True)
class GRLConfig:
    psi: float = 1.0

    def __post_init__(self):
        if not self.psi > 0:
            raise ValidationError(f"psi must be > 0, got {self.psi}")


class GradReverse(torch.autograd.Function):
    """Identity forward; multiplies the incoming gradient by ``-psi`` backward."""

    @staticmethod
    def forward(ctx, x, psi):
        ctx.psi = psi
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.psi, None


def grad_reverse(x: torch.Tensor, psi: float = 1.0) -> torch.Tensor:
    return GradReverse.apply(x, psi)


class AdaptiveAvgPool(nn.AdaptiveAvgPool1d):
    """Adaptive average pooling with exact fast paths for integer ratios.

    When the output length divides the input length the windows are disjoint
    equal blocks; when the input length divides the output length every input
    sample is repeated. Both give the same values as the generic kernel at a
    fraction of its CPU cost.
    """

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, out = x.shape[-1], self.output_size
        if n % out == 0:
            return x.unflatten(-1, (out, n // out)).mean(-1)
        if out % n == 0:
            return x.repeat_interleave(out // n, dim=-1)
        return super().forward(x)


def _encoder(spec: NetworkSpec) -> nn.Sequential:
    layers = []
    for cin, cout, k, s, p in spec.conv_blocks:
        layers += [nn.Conv1d(cin, cout, k, stride=s, padding=p), nn.BatchNorm1d(cout), nn.ReLU()]
    layers += [AdaptiveAvgPool(spec.pool_target_length), nn.Flatten()]
    return nn.Sequential(*layers)


def _mlp(widths, batchnorm=False, dropout=0.0) -> nn.Sequential:
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(widths) - 2:
            if batchnorm:
                layers.append(nn.BatchNorm1d(b))
            layers.append(nn.ReLU())
            if dropout:
                layers.append(nn.Dropout(dropout))
    return nn.Sequential(*layers)


class ModelState(nn.Module):
    """The seven components. ``encoder`` is both F and the online encoder f_theta."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.encoder = _encoder(spec)
        self.classifier = _mlp(spec.classifier_widths, dropout=spec.dropout)
        self.discriminator = _mlp(spec.discriminator_widths, dropout=spec.dropout)
        self.projector = _mlp(spec.projector_widths, batchnorm=spec.head_batchnorm)
        self.predictor = _mlp(spec.predictor_widths, batchnorm=spec.head_batchnorm)
        self.target_encoder = _encoder(spec)
        self.target_projector = _mlp(spec.projector_widths, batchnorm=spec.head_batchnorm)
        for p in self.target_parameters():
            p.requires_grad_(False)
        self.train()

    @property
    def online_encoder(self) -> nn.Module:
        return self.encoder

    def target_parameters(self):
        yield from self.target_encoder.parameters()
        yield from self.target_projector.parameters()

    def component(self, name: str) -> nn.Module:
        return getattr(self, name)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.spec.target_bn_mode == "eval":
            self.target_encoder.eval()
            self.target_projector.eval()
        return self


def init_model(spec: NetworkSpec | None = None, seed: int = 0,
               dtype: torch.dtype = torch.float32) -> ModelState:
    """Deterministic initialization; the target branch starts as an exact copy."""
    spec = spec or NetworkSpec()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        state = ModelState(spec)
    state = state.to(dtype)
    state.target_encoder.load_state_dict(state.encoder.state_dict())
    state.target_projector.load_state_dict(state.projector.state_dict())
    return state


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _as_input(state: ModelState, batch) -> torch.Tensor:
    dtype = next(state.parameters()).dtype
    x = torch.as_tensor(batch, dtype=dtype)
    if x.ndim == 2:
        x = x.unsqueeze(1)
    if x.ndim != 3 or x.shape[1] != 1:
        raise ValidationError(f"expected a (B, L) batch, got shape {tuple(x.shape)}")
    if x.shape[-1] < state.spec.pool_target_length:
        raise ValidationError(f"signal length {x.shape[-1]} shorter than pool target {state.spec.pool_target_length}")
    if not torch.isfinite(x).all():
        raise NumericError("non-finite values in input batch")
    return x


def feature_extract(state: ModelState, batch) -> torch.Tensor:
    """(B, L) signals -> (B, feature_width) features through F."""
    return state.encoder(_as_input(state, batch))


def classify(state: ModelState, features: torch.Tensor) -> torch.Tensor:
    return state.classifier(features)


def discriminate(state: ModelState, features: torch.Tensor, grl: GRLConfig | float = GRLConfig()) -> torch.Tensor:
    psi = grl.psi if isinstance(grl, GRLConfig) else float(grl)
    return state.discriminator(grad_reverse(features, psi))


def byol_forward(state: ModelState, view_online, view_target) -> tuple[torch.Tensor, torch.Tensor]:
    """Online prediction q(g(f(v))) and stop-gradient target projection g'(f'(v'))."""
    prediction = state.predictor(state.projector(feature_extract(state, view_online)))
    with torch.no_grad():
        target = state.target_projector(state.target_encoder(_as_input(state, view_target)))
    return prediction, target.detach()


def _ema_pairs(state: ModelState):
    for online, target in ((state.encoder, state.target_encoder), (state.projector, state.target_projector)):
        on = dict(online.named_parameters())
        on.update({k: v for k, v in online.named_buffers() if v.is_floating_point()})
        tg = dict(target.named_parameters())
        tg.update({k: v for k, v in target.named_buffers() if v.is_floating_point()})
        for name, theta in on.items():
            yield tg[name], theta


@torch.no_grad()
def ema_update(state: ModelState, tau: float = 0.99) -> None:
    """xi <- tau * xi + (1 - tau) * theta for target encoder and projector.

    BatchNorm running statistics are averaged the same way so the target
    branch's inference-mode normalization tracks the online encoder.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValidationError(f"tau must lie in [0, 1], got {tau}")
    pairs = list(_ema_pairs(state))
    xis = [xi for xi, _ in pairs]
    torch._foreach_mul_(xis, tau)
    torch._foreach_add_(xis, [theta for _, theta in pairs], alpha=1.0 - tau)


@torch.no_grad()
def predict(state: ModelState, features: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Argmax class predictions in inference mode; restores the previous mode."""
    was_training = state.training
    state.eval()
    try:
        out = []
        for start in range(0, len(features), batch_size):
            logits = classify(state, feature_extract(state, features[start:start + batch_size]))
            out.append(logits.argmax(dim=1).cpu().numpy())
    finally:
        state.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# ---- archive -----------------------------------------------------------------

def save_tensors_archive(path, meta: dict, tensors: dict[str, torch.Tensor]) -> Path:
    """Zip archive: ``meta.json`` plus one little-endian blob per tensor under ``tensors/``.

    ``meta["tensors"]`` records name -> {"shape", "dtype"}.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, t in tensors.items():
            t = t.detach().cpu()
            code = _DTYPES.get(t.dtype)
            if code is None:
                raise ValidationError(f"unsupported tensor dtype {t.dtype} for {name}")
            index[name] = {"shape": list(t.shape), "dtype": code}
            zf.writestr(f"tensors/{name}", t.numpy().astype(_NP_DTYPES[code]).tobytes())
        full = dict(meta, format_version=ARCHIVE_VERSION, tensors=index)
        zf.writestr("meta.json", json.dumps(full, indent=2, sort_keys=True))
    return path


def load_tensors_archive(path) -> tuple[dict, dict[str, torch.Tensor]]:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such checkpoint")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format_version") != ARCHIVE_VERSION:
                raise FormatError(f"{path}: format version {meta.get('format_version')!r}, "
                                  f"expected {ARCHIVE_VERSION}")
            tensors = {}
            for name, info in meta["tensors"].items():
                raw = zf.read(f"tensors/{name}")
                arr = np.frombuffer(raw, dtype=_NP_DTYPES[info["dtype"]])
                if arr.size != int(np.prod(info["shape"], dtype=np.int64)):
                    raise FormatError(f"{path}: blob {name} has {arr.size} values, shape {info['shape']}")
                tensors[name] = torch.from_numpy(arr.reshape(info["shape"]).copy())
    except FormatError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, OSError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    return meta, tensors


def state_tensors(state: ModelState) -> dict[str, torch.Tensor]:
    return {k: v for k, v in state.state_dict().items()}


def state_from_tensors(spec: NetworkSpec, tensors: dict[str, torch.Tensor]) -> ModelState:
    dtype = next(t.dtype for k, t in tensors.items() if t.is_floating_point())
    state = ModelState(spec).to(dtype)
    try:
        state.load_state_dict(tensors, strict=True)
    except RuntimeError as exc:
        raise FormatError(f"checkpoint tensors do not match the network spec: {exc}") from exc
    return state


def save_model(path, state: ModelState, seed: int = 0, step: int = 0, extra: dict | None = None) -> Path:
    meta = {"kind": "model", "spec": state.spec.to_dict(), "seed": seed, "step": step}
    if extra:
        meta.update(extra)
    return save_tensors_archive(path, meta, state_tensors(state))


def load_model(path) -> tuple[ModelState, dict]:
    meta, tensors = load_tensors_archive(path)
    try:
        spec = NetworkSpec.from_dict(meta["spec"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing network spec ({exc})") from exc
    model_tensors = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")} or tensors
    return state_from_tensors(spec, model_tensors), meta

"""Four-level anisotropic 3D U-Net and its training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Adam, combined_loss, lr_schedule
from .preproc import AugmentConfig, Patch, augment, prepare_patch, raw_patch_length, sample_training_patches

log = logging.getLogger(__name__)


@dataclass
class UnetLKConfig:
    base_width: int = 8
    levels: int = 4
    kernel: tuple[int, int, int] = (7, 3, 3)
    in_channels: int = 1
    out_channels: int = 1
    epochs: int = 60
    batch_size: int = 2
    seed: int = 0
    lr_start: float = 0.01
    lr_end: float = 0.0005
    patch_shape: tuple[int, int, int] = (128, 16, 16)
    patches_per_cube: int = 2
    rebin: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        self.patch_shape = tuple(int(p) for p in self.patch_shape)
        if self.levels != 4:
            raise ValueError(f"Unet-LK has 4 levels, got {self.levels}")
        if any(k % 2 == 0 or k < 1 for k in self.kernel):
            raise ValueError(f"kernel dims must be odd and positive, got {self.kernel}")
        if self.base_width < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("widths and channel counts must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        div = 2 ** (self.levels - 1)
        if any(p % div for p in self.patch_shape):
            raise ValueError(f"patch shape {self.patch_shape} must be divisible by {div}")

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)


class UnetLKModel:
    """Encoder/decoder with (conv -> instance norm -> ReLU) x 2 blocks,
    max-pool downsampling, transposed-conv upsampling, concatenated skips and
    a 1x1x1 head with sigmoid output."""

    def __init__(self, config: UnetLKConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else _init_params(config)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays: dict) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)[:3]}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != model {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float32)

    def _block(self, prefix, h):
        pad = tuple(k // 2 for k in self.config.kernel)
        p = self.params
        for j in (1, 2):
            h = T.conv3d(h, p[f"{prefix}.conv{j}.weight"], p[f"{prefix}.conv{j}.bias"], padding=pad)
            h = T.instance_norm(h, p[f"{prefix}.norm{j}.gamma"], p[f"{prefix}.norm{j}.beta"])
            h = T.relu(h)
        return h

    def forward(self, x):
        """Map (N, C_in, F, R, D) or (C_in, F, R, D) input to probabilities of the same layout."""
        x = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=np.float32))
        squeeze = x.ndim == 4
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        div = self.config.divisor
        if any(n % div for n in x.shape[2:]):
            raise ValueError(f"spatial shape {x.shape[2:]} must be divisible by {div}; pad the input")
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        p = self.params
        n_down = self.config.levels - 1
        skips = []
        h = x
        for i in range(n_down):
            h = self._block(f"enc{i}", h)
            skips.append(h)
            h = T.maxpool3d(h, 2)
        h = self._block("bottleneck", h)
        for i in reversed(range(n_down)):
            h = T.conv_transpose3d(h, p[f"dec{i}.up.weight"], p[f"dec{i}.up.bias"], factor=2)
            h = T.concat([skips[i], h], axis=1)
            h = self._block(f"dec{i}", h)
        h = T.conv3d(h, p["head.weight"], p["head.bias"])
        out = T.sigmoid(h)
        return T.reshape(out, out.shape[1:]) if squeeze else out

    __call__ = forward

    def predict(self, patch):
        """Probabilities for one (F, R, D) block without building a graph."""
        with T.no_grad():
            x = np.asarray(patch, dtype=np.float32)[None, None]
            return self.forward(x).data[0, 0]


def _init_params(config: UnetLKConfig) -> dict:
    """He-style fan-in initialisation, drawn in sorted-name order from ``config.seed``."""
    shapes = parameter_shapes(config)
    rng = np.random.default_rng(config.seed)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".weight"):
            if ".up." in name:
                fan_in = shape[0]
            else:
                fan_in = int(np.prod(shape[1:]))
            arr = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(".gamma"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = T.Tensor(arr.astype(np.float32), requires_grad=True)
    return params


def parameter_shapes(config: UnetLKConfig) -> dict:
    k = config.kernel
    widths = [config.base_width * 2**i for i in range(config.levels)]
    shapes = {}

    def block(prefix, cin, cout):
        for j, c_in in ((1, cin), (2, cout)):
            shapes[f"{prefix}.conv{j}.weight"] = (cout, c_in) + k
            shapes[f"{prefix}.conv{j}.bias"] = (cout,)
            shapes[f"{prefix}.norm{j}.gamma"] = (cout,)
            shapes[f"{prefix}.norm{j}.beta"] = (cout,)

    cin = config.in_channels
    for i in range(config.levels - 1):
        block(f"enc{i}", cin, widths[i])
        cin = widths[i]
    block("bottleneck", cin, widths[-1])
    for i in reversed(range(config.levels - 1)):
        shapes[f"dec{i}.up.weight"] = (widths[i + 1], widths[i], 2, 2, 2)
        shapes[f"dec{i}.up.bias"] = (widths[i],)
        block(f"dec{i}", 2 * widths[i], widths[i])
    shapes["head.weight"] = (config.out_channels, widths[0], 1, 1, 1)
    shapes["head.bias"] = (config.out_channels,)
    return shapes


def build_unetlk(config: UnetLKConfig | None = None) -> UnetLKModel:
    config = config or UnetLKConfig()
    model = UnetLKModel(config)
    log.info("Unet-LK base_width=%d: %d parameters", config.base_width, model.parameter_count())
    return model


# -- data ---------------------------------------------------------------------


class CubeDataset:
    """Training cubes that yield a fresh balanced patch sample every epoch.

    Patches are cut at native resolution (long enough to rebin to
    ``config.patch_shape`` when ``config.rebin`` is set); augmentation and
    rebinning happen later, per batch. Each epoch's sample depends only on
    (seed, epoch, cube index).
    """

    def __init__(self, cubes, masks, config: UnetLKConfig):
        if not cubes:
            raise ValueError("empty dataset")
        if len(cubes) != len(masks):
            raise ValueError("need one mask per cube")
        self.config = config
        self.cubes = [np.asarray(getattr(c, "data", c), dtype=np.float32) for c in cubes]
        self.masks = [np.asarray(getattr(m, "data", m), dtype=np.uint8) for m in masks]
        for c, m in zip(self.cubes, self.masks):
            if c.shape != m.shape:
                raise ValueError(f"cube {c.shape} and mask {m.shape} differ")

    def __len__(self):
        return len(self.cubes) * self.config.patches_per_cube

    def patches(self, epoch: int) -> list[Patch]:
        shape = raw_patch_shape(self.config)
        out = []
        for i, (c, m) in enumerate(zip(self.cubes, self.masks)):
            rng = np.random.default_rng([self.config.seed, epoch, i])
            out.extend(sample_training_patches(c, m, rng, self.config.patches_per_cube, shape))
        return out


def raw_patch_shape(config: UnetLKConfig) -> tuple[int, int, int]:
    f, r, d = config.patch_shape
    return (raw_patch_length(f) if config.rebin else f, r, d)


# -- training -------------------------------------------------------------------


@dataclass
class TrainResult:
    model: UnetLKModel
    history: list[dict]
    best_state: dict
    best_val_dice: float
    optimizer: Adam


def validation_dice(model: UnetLKModel, patches) -> float:
    """Voxel Dice of thresholded predictions pooled over all validation patches."""
    inter = total = 0
    for patch in patches:
        patch = prepare_patch(patch, model.config.rebin)
        prob = model.predict(patch.data)
        pred = prob > 0.5
        lab = patch.label > 0
        inter += np.count_nonzero(pred & lab)
        total += np.count_nonzero(pred) + np.count_nonzero(lab)
    return 1.0 if total == 0 else 2.0 * inter / total


def train_step(model: UnetLKModel, opt: Adam, batch, lr: float) -> float:
    x = np.stack([p.data for p in batch])[:, None].astype(np.float32)
    y = np.stack([p.label for p in batch])[:, None].astype(np.float32)
    opt.zero_grad()
    out = model.forward(T.Tensor(x))
    loss = combined_loss(out, y)
    loss.backward()
    opt.step(lr)
    return loss.item()


def training_state(result: TrainResult, epoch_done: int) -> tuple[dict, dict]:
    """Copies of the arrays and the metadata needed to resume after ``epoch_done`` epochs."""
    arrays = {f"param.{k}": v.data.copy() for k, v in result.model.params.items()}
    arrays.update({f"best.{k}": v.copy() for k, v in result.best_state.items()})
    st = result.optimizer.state
    arrays.update({f"adam.m.{k}": v.copy() for k, v in st.m.items()})
    arrays.update({f"adam.v.{k}": v.copy() for k, v in st.v.items()})
    meta = {
        "epochs_done": str(epoch_done),
        "adam_step": str(st.step),
        "best_val_dice": repr(result.best_val_dice),
    }
    return arrays, meta


def train(
    model: UnetLKModel,
    dataset,
    config: UnetLKConfig | None = None,
    val_patches=None,
    resume: dict | None = None,
    on_epoch=None,
) -> TrainResult:
    """Train with Adam, per-epoch exponential LR decay and Dice + 0.5 BCE loss.

    ``dataset`` is a :class:`CubeDataset` or a fixed sequence of raw-intensity
    patches. Batches are augmented (flip, cut-mix, noise, clip). ``resume``
    takes the ``(arrays, meta)`` pair returned by :func:`training_state`.
    ``on_epoch(result, epoch)`` is called after every epoch.
    """
    config = config or model.config
    if not hasattr(dataset, "patches") and len(dataset) == 0:
        raise ValueError("empty dataset")
    opt = Adam(model.params, lr=config.lr_start)
    history: list[dict] = []
    best_state = model.state_dict()
    best_val = -math.inf
    start = 0
    if resume is not None:
        arrays, meta = resume
        model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
        best_state = {k[5:]: v.copy() for k, v in arrays.items() if k.startswith("best.")}
        opt.state.m = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        opt.state.v = {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
        opt.state.step = int(meta["adam_step"])
        start = int(meta["epochs_done"])
        best_val = float(meta["best_val_dice"])
    result = TrainResult(model, history, best_state, best_val, opt)
    for epoch in range(start, config.epochs):
        lr = lr_schedule(epoch, config.epochs, config.lr_start, config.lr_end)
        rng = np.random.default_rng([config.seed, epoch, 1 << 20])
        patches = dataset.patches(epoch) if hasattr(dataset, "patches") else list(dataset)
        order = rng.permutation(len(patches))
        losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [augment(patches[i], rng, config.augment, config.rebin) for i in order[b : b + config.batch_size]]
            losses.append(train_step(model, opt, batch, lr))
        val = validation_dice(model, val_patches) if val_patches else float("nan")
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "val_dice": val}
        history.append(row)
        score = val if val_patches else -row["train_loss"]
        if score > result.best_val_dice:
            result.best_val_dice = score
            result.best_state = model.state_dict()
        log.info("epoch %d lr %.5f loss %.4f val_dice %.4f", epoch, lr, row["train_loss"], val)
        if on_epoch is not None:
            on_epoch(result, epoch)
    return result


def save_model(path, model: UnetLKModel, state: dict | None = None, meta: dict | None = None) -> None:
    cfg = model.config
    info = {
        "base_width": str(cfg.base_width),
        "kernel": ",".join(map(str, cfg.kernel)),
        "levels": str(cfg.levels),
        "in_channels": str(cfg.in_channels),
        "out_channels": str(cfg.out_channels),
        "patch_shape": ",".join(map(str, cfg.patch_shape)),
        "rebin": "1" if cfg.rebin else "0",
    }
    info.update(meta or {})
    save_checkpoint(path, state if state is not None else model.state_dict(), info)


def load_model(path) -> tuple[UnetLKModel, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = UnetLKConfig(
        base_width=int(meta["base_width"]),
        kernel=tuple(int(v) for v in meta["kernel"].split(",")),
        levels=int(meta["levels"]),
        in_channels=int(meta.get("in_channels", 1)),
        out_channels=int(meta.get("out_channels", 1)),
        patch_shape=tuple(int(v) for v in meta["patch_shape"].split(",")),
        rebin=meta.get("rebin", "0") == "1",
    )
    model = UnetLKModel(cfg)
    model.load_state_dict(arrays)
    return model, meta

"""Command-line front end: ``hifind {synth,train,infer,baseline,eval,render}``.

Every parameter is a config key. Keys come from ``--config FILE`` (flat
``key=value`` lines, ``#`` comments) and are overridden by ``--set key=value``.
Each output file records the run seed and a hash of the config keys that
affect results (paths and the resume switch are excluded).

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .cubeio import (
    CubeIOError,
    LabelVolume,
    SpectralCube,
    file_meta,
    read_cube,
    read_mask,
    write_catalog,
    write_cube,
    write_mask,
)
from .components import connected_components
from .detect import BaselineConfig, baseline_smooth_clip, run_inference
from .evaluate import combine_reports, evaluate_volumes, report_table, sources_csv, summary_csv
from .preproc import AugmentConfig, RebinSizeError
from .render import SliceRangeError, render_slice, save_png
from .synth import PlacementError, RfiSpec, SynthSpec, synth_cube
from .unetlk import CubeDataset, UnetLKConfig, build_unetlk, load_model, save_model, train, training_state

log = logging.getLogger("hifind")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- config parsing ----------------------------------------------------------------


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _strs(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _rfi(text):
    """``kind:strength:width`` items separated by ``;`` (empty for none)."""
    out = []
    for item in str(text).split(";"):
        item = item.strip()
        if not item:
            continue
        kind, strength, width = item.split(":")
        out.append(RfiSpec(kind, float(strength), width=int(width)))
    return out


@dataclass(frozen=True)
class Key:
    parse: object
    default: str
    hashed: bool = True


_SYNTH_DEFAULTS = SynthSpec()
_BASELINE_DEFAULTS = BaselineConfig()
_UNET_DEFAULTS = UnetLKConfig()


def _csv_of(values):
    return ",".join(str(v) for v in values)


SCHEMAS = {
    "synth": {
        "out_dir": Key(str, "synth_out", hashed=False),
        "n_cubes": Key(int, "1"),
        "cube_shape": Key(_ints, _csv_of(_SYNTH_DEFAULTS.cube_shape)),
        "noise_sigma_range": Key(_floats, _csv_of(_SYNTH_DEFAULTS.noise_sigma_range)),
        "n_sources": Key(int, str(_SYNTH_DEFAULTS.n_sources)),
        "source_extent_freq": Key(_ints, _csv_of(_SYNTH_DEFAULTS.source_extent_freq)),
        "source_extent_spatial": Key(_ints, _csv_of(_SYNTH_DEFAULTS.source_extent_spatial)),
        "source_amplitude_range": Key(_floats, _csv_of(_SYNTH_DEFAULTS.source_amplitude_range)),
        "min_separation": Key(int, str(_SYNTH_DEFAULTS.min_separation)),
        "ripple_amplitude": Key(float, "0.0"),
        "profiles": Key(_strs, _csv_of(_SYNTH_DEFAULTS.profiles)),
        "rfi": Key(_rfi, ""),
    },
    "train": {
        "data_dir": Key(str, "", hashed=False),
        "val_dir": Key(str, "", hashed=False),
        "out_dir": Key(str, "train_out", hashed=False),
        "epochs": Key(int, str(_UNET_DEFAULTS.epochs)),
        "base_width": Key(int, str(_UNET_DEFAULTS.base_width)),
        "batch_size": Key(int, str(_UNET_DEFAULTS.batch_size)),
        "patch_shape": Key(_ints, _csv_of(_UNET_DEFAULTS.patch_shape)),
        "patches_per_cube": Key(int, str(_UNET_DEFAULTS.patches_per_cube)),
        "rebin": Key(_bool, "1" if _UNET_DEFAULTS.rebin else "0"),
        "lr_start": Key(float, repr(_UNET_DEFAULTS.lr_start)),
        "lr_end": Key(float, repr(_UNET_DEFAULTS.lr_end)),
        "flip_prob": Key(float, "0.5"),
        "cutmix_prob": Key(float, "0.5"),
        "noise_sigma_range": Key(_floats, "2.8,3.8"),
        "resume": Key(_bool, "0", hashed=False),
    },
    "infer": {
        "checkpoint": Key(str, "", hashed=False),
        "inputs": Key(_strs, "", hashed=False),
        "out_dir": Key(str, "infer_out", hashed=False),
        "min_voxels": Key(int, "300"),
        "connectivity": Key(int, "26"),
    },
    "baseline": {
        "inputs": Key(_strs, "", hashed=False),
        "out_dir": Key(str, "baseline_out", hashed=False),
        "threshold_sigma": Key(float, repr(_BASELINE_DEFAULTS.threshold_sigma)),
        "kernels_xy": Key(_ints, _csv_of(_BASELINE_DEFAULTS.kernels_xy)),
        "kernels_z": Key(_ints, _csv_of(_BASELINE_DEFAULTS.kernels_z)),
        "min_size_xy": Key(int, str(_BASELINE_DEFAULTS.min_size_xy)),
        "min_size_z": Key(int, str(_BASELINE_DEFAULTS.min_size_z)),
        "max_size_xy": Key(int, str(_BASELINE_DEFAULTS.max_size_xy)),
        "connectivity": Key(int, str(_BASELINE_DEFAULTS.connectivity)),
        "union_before_linking": Key(_bool, "1"),
    },
    "eval": {
        "pred_masks": Key(_strs, "", hashed=False),
        "gt_masks": Key(_strs, "", hashed=False),
        "pred_catalogs": Key(_strs, "", hashed=False),
        "gt_catalogs": Key(_strs, "", hashed=False),
        "out_dir": Key(str, "eval_out", hashed=False),
        "iou_threshold": Key(float, "0.2"),
        "method": Key(str, "Unet-LK"),
    },
    "render": {
        "cube": Key(str, "", hashed=False),
        "gt_mask": Key(str, "", hashed=False),
        "pred_mask": Key(str, "", hashed=False),
        "out_dir": Key(str, "render_out", hashed=False),
        "slices": Key(_ints, "0"),
        "upscale": Key(int, "4"),
    },
}


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"config line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    command: str
    raw: dict
    values: dict
    seed: int
    jobs: int
    deterministic: bool

    @property
    def config_hash(self) -> str:
        schema = SCHEMAS[self.command]
        items = [f"command={self.command}", f"seed={self.seed}"]
        items += [f"{k}={self.raw[k]}" for k in sorted(self.raw) if schema[k].hashed]
        return hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": str(self.seed), "tool": f"hifind {self.command} {__version__}"}

    def __getitem__(self, key):
        return self.values[key]


def resolve_config(command: str, file_text: str | None, overrides, seed: int, jobs: int, deterministic: bool):
    schema = SCHEMAS[command]
    raw = {k: key.default for k, key in schema.items()}
    given = parse_config_text(file_text) if file_text else {}
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        given[key.strip()] = value.strip()
    if "seed" in given:
        seed = int(given.pop("seed"))
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    raw.update(given)
    values = {}
    for k, key in schema.items():
        try:
            values[k] = key.parse(raw[k])
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad value for {k}: {raw[k]!r} ({exc})") from exc
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return RunConfig(command, raw, values, seed, jobs, deterministic)


# -- helpers -------------------------------------------------------------------------


def _map(fn, tasks, cfg: RunConfig):
    """Run independent per-cube tasks, in a process pool when ``--jobs`` > 1."""
    if cfg.jobs == 1 or len(tasks) < 2:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg, key):
    if not cfg[key]:
        raise UsageError(f"config key {key} is required")
    return cfg[key]


def _stem(path) -> str:
    name = Path(path).name
    return name[: -len(".hicube")] if name.endswith(".hicube") else Path(path).stem


def _pairs(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    pairs = []
    for cube_path in sorted(directory.glob("cube_*.hicube")):
        mask_path = directory / cube_path.name.replace("cube_", "mask_", 1)
        if mask_path.exists():
            pairs.append((cube_path, mask_path))
    return pairs


# -- synth ---------------------------------------------------------------------------


def _synth_one(spec: SynthSpec, index: int, out_dir: str, prov: dict):
    cube, mask, records = synth_cube(spec)
    meta = dict(prov, cube_index=str(index), cube_seed=str(spec.seed), noise_sigma=cube.meta["noise_sigma"])
    out = Path(out_dir)
    write_cube(SpectralCube(cube.data, meta=meta), out / f"cube_{index:03d}.hicube")
    write_mask(LabelVolume(mask.data, meta=meta), out / f"mask_{index:03d}.hicube")
    write_catalog(records, out / f"catalog_{index:03d}.csv", meta)
    return index, len(records), float(cube.meta["noise_sigma"])


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg["out_dir"])
    if cfg["n_cubes"] < 0:
        raise UsageError("n_cubes must be >= 0")
    tasks = []
    for i in range(cfg["n_cubes"]):
        try:
            spec = SynthSpec(
                cube_shape=cfg["cube_shape"],
                noise_sigma_range=cfg["noise_sigma_range"],
                n_sources=cfg["n_sources"],
                source_extent_freq=cfg["source_extent_freq"],
                source_extent_spatial=cfg["source_extent_spatial"],
                source_amplitude_range=cfg["source_amplitude_range"],
                rfi=cfg["rfi"],
                ripple_amplitude=cfg["ripple_amplitude"],
                profiles=cfg["profiles"],
                min_separation=cfg["min_separation"],
                seed=cfg.seed + i,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        tasks.append((spec, i, str(out), cfg.provenance()))
    for index, n, sigma in _map(_synth_one, tasks, cfg):
        print(f"cube {index:03d}: n_sources={n} sigma={sigma:.4f}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_dice")


def _write_history(path, rows, prov):
    with open(path, "w", newline="") as fh:
        for key in sorted(prov):
            fh.write(f"# {key}={prov[key]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in rows:
            w.writerow([row["epoch"], repr(float(row["lr"])), repr(float(row["train_loss"])), repr(float(row["val_dice"]))])


def _read_history(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        rows.append({"epoch": int(rec["epoch"]), "lr": float(rec["lr"]),
                     "train_loss": float(rec["train_loss"]), "val_dice": float(rec["val_dice"])})
    return rows


def _load_pairs(pairs):
    cubes, masks = [], []
    for cube_path, mask_path in pairs:
        cube, mask = read_cube(cube_path), read_mask(mask_path)
        if cube.shape != mask.shape:
            raise DataError(f"{cube_path}: cube {cube.shape} and mask {mask.shape} differ")
        cubes.append(cube)
        masks.append(mask)
    return cubes, masks


def cmd_train(cfg: RunConfig) -> int:
    pairs = _pairs(_require(cfg, "data_dir"))
    if not pairs:
        raise DataError(f"{cfg['data_dir']}: no cube_*/mask_* pairs found (empty dataset)")
    out = _out_dir(cfg["out_dir"])
    try:
        config = UnetLKConfig(
            base_width=cfg["base_width"],
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            seed=cfg.seed,
            lr_start=cfg["lr_start"],
            lr_end=cfg["lr_end"],
            patch_shape=cfg["patch_shape"],
            patches_per_cube=cfg["patches_per_cube"],
            rebin=cfg["rebin"],
            augment=AugmentConfig(flip_prob=cfg["flip_prob"], cutmix_prob=cfg["cutmix_prob"],
                                  noise_sigma_range=cfg["noise_sigma_range"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cubes, masks = _load_pairs(pairs)
    dataset = CubeDataset(cubes, masks, config)
    val_patches = None
    if cfg["val_dir"]:
        vcubes, vmasks = _load_pairs(_pairs(cfg["val_dir"]))
        val_patches = []
        for i, (c, m) in enumerate(zip(vcubes, vmasks)):
            val_patches += CubeDataset([c], [m], config).patches(10**6 + i)
    model = build_unetlk(config)
    prov = cfg.provenance()
    last_path, best_path, hist_path = out / "last.hiwt", out / "best.hiwt", out / "history.csv"
    resume = None
    history = []
    if cfg["resume"]:
        if not last_path.exists():
            raise DataError(f"{last_path}: nothing to resume from")
        arrays, meta = load_checkpoint(last_path)
        resume = (arrays, meta)
        done = int(meta["epochs_done"])
        history = [r for r in _read_history(hist_path) if r["epoch"] < done] if hist_path.exists() else []
        log.info("resuming after epoch %d", done - 1)

    def on_epoch(result, epoch):
        arrays, meta = training_state(result, epoch + 1)
        save_model(last_path, model, arrays, dict(prov, **meta))
        _write_history(hist_path, history + result.history, prov)

    result = train(model, dataset, config, val_patches=val_patches, resume=resume, on_epoch=on_epoch)
    save_model(best_path, model, result.best_state, dict(prov, best_val_dice=repr(float(result.best_val_dice))))
    _write_history(hist_path, history + result.history, prov)
    print(f"trained {config.epochs} epochs; best score {result.best_val_dice:.4f}; checkpoint {best_path}")
    return EXIT_OK


# -- infer ---------------------------------------------------------------------------


def _infer_one(checkpoint: str, path: str, out_dir: str, min_voxels: int, connectivity: int, prov: dict):
    model, meta = load_model(checkpoint)
    if model.config.in_channels != 1 or model.config.out_channels != 1:
        raise DataError(f"{checkpoint}: expected a single-channel model")
    cube = read_cube(path)
    result = run_inference(model, cube, min_voxels=min_voxels, connectivity=connectivity)
    out_meta = dict(prov, source=Path(path).name, model_hash=meta.get("config_hash", ""),
                    rebin="1" if model.config.rebin else "0")
    stem, out = _stem(path), Path(out_dir)
    write_cube(SpectralCube(np.asarray(result.probability, np.float32), cube.freq_res, cube.spatial_res,
                            cube.origin, out_meta), out / f"{stem}.prob.hicube")
    write_mask(LabelVolume(result.mask, True, cube.freq_res, cube.spatial_res, cube.origin, out_meta),
               out / f"{stem}.mask.hicube")
    write_catalog(result.records, out / f"{stem}.catalog.csv", out_meta)
    return Path(path).name, len(result.records)


def cmd_infer(cfg: RunConfig) -> int:
    checkpoint = _require(cfg, "checkpoint")
    inputs = _require(cfg, "inputs")
    if not Path(checkpoint).exists():
        raise DataError(f"{checkpoint}: checkpoint not found")
    out = _out_dir(cfg["out_dir"])
    tasks = [(checkpoint, p, str(out), cfg["min_voxels"], cfg["connectivity"], cfg.provenance()) for p in inputs]
    for name, n in _map(_infer_one, tasks, cfg):
        print(f"{name}: {n} detections")
    return EXIT_OK


# -- baseline ------------------------------------------------------------------------


def _baseline_config(cfg: RunConfig) -> BaselineConfig:
    try:
        return BaselineConfig(
            threshold_sigma=cfg["threshold_sigma"],
            kernels_xy=cfg["kernels_xy"],
            kernels_z=cfg["kernels_z"],
            min_size_xy=cfg["min_size_xy"],
            min_size_z=cfg["min_size_z"],
            max_size_xy=cfg["max_size_xy"],
            connectivity=cfg["connectivity"],
            union_before_linking=cfg["union_before_linking"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def baseline_echo(config: BaselineConfig) -> dict:
    """The baseline settings as ``baseline.*`` header entries."""
    return {
        "baseline.threshold_sigma": repr(float(config.threshold_sigma)),
        "baseline.kernels_xy": _csv_of(config.kernels_xy),
        "baseline.kernels_z": _csv_of(config.kernels_z),
        "baseline.min_size_xy": str(config.min_size_xy),
        "baseline.min_size_z": str(config.min_size_z),
        "baseline.max_size_xy": str(config.max_size_xy),
        "baseline.connectivity": str(config.connectivity),
        "baseline.union_before_linking": "1" if config.union_before_linking else "0",
    }


def _baseline_one(path: str, config: BaselineConfig, out_dir: str, prov: dict):
    cube = read_cube(path)
    labels, records = baseline_smooth_clip(cube, config)
    meta = dict(prov, source=Path(path).name, **baseline_echo(config))
    stem, out = _stem(path), Path(out_dir)
    write_mask(LabelVolume((labels > 0).astype(np.uint8), True, cube.freq_res, cube.spatial_res, cube.origin, meta),
               out / f"{stem}.baseline_mask.hicube")
    write_catalog(records, out / f"{stem}.baseline_catalog.csv", meta)
    return Path(path).name, len(records)


def cmd_baseline(cfg: RunConfig) -> int:
    inputs = _require(cfg, "inputs")
    config = _baseline_config(cfg)
    out = _out_dir(cfg["out_dir"])
    for name, n in _map(_baseline_one, [(p, config, str(out), cfg.provenance()) for p in inputs], cfg):
        print(f"{name}: {n} detections")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------


def check_hashes(paths, role: str, force: bool = False) -> str:
    """All files of one role must share a config hash unless ``force``."""
    hashes = {str(p): file_meta(p).get("config_hash", "") for p in paths}
    distinct = sorted(set(hashes.values()))
    if len(distinct) > 1 and not force:
        raise DataError(f"{role} inputs come from different configs ({', '.join(distinct)}); use --force to override")
    return distinct[0] if len(distinct) == 1 else "mixed"


def cmd_eval(cfg: RunConfig, force: bool = False) -> int:
    preds, gts = _require(cfg, "pred_masks"), _require(cfg, "gt_masks")
    if len(preds) != len(gts):
        raise UsageError(f"{len(preds)} prediction masks but {len(gts)} ground-truth masks")
    pred_hash = check_hashes(list(preds) + list(cfg["pred_catalogs"]), "prediction", force)
    gt_hash = check_hashes(list(gts) + list(cfg["gt_catalogs"]), "ground-truth", force)
    reports = []
    for p, g in zip(preds, gts):
        pm, gm = read_mask(p), read_mask(g)
        if pm.shape != gm.shape:
            raise DataError(f"grid mismatch: {p} {pm.shape} vs {g} {gm.shape}")
        pl, _ = connected_components(pm.data, 26)
        gl, _ = connected_components(gm.data, 26)
        reports.append(evaluate_volumes(pl, gl, cfg["iou_threshold"]))
    report = combine_reports(reports)
    meta = dict(cfg.provenance(), pred_config_hash=pred_hash, gt_config_hash=gt_hash)
    out = _out_dir(cfg["out_dir"])
    (out / "summary.csv").write_text(summary_csv(report, meta))
    (out / "sources.csv").write_text(sources_csv(report, meta))
    table = report_table(report, cfg["method"])
    (out / "table.txt").write_text(table)
    print(table, end="")
    for flag in report.flags:
        print(f"note: {flag}")
    return EXIT_OK


# -- render --------------------------------------------------------------------------


def cmd_render(cfg: RunConfig) -> int:
    cube = read_cube(_require(cfg, "cube"))
    gt = read_mask(cfg["gt_mask"]) if cfg["gt_mask"] else None
    pred = read_mask(cfg["pred_mask"]) if cfg["pred_mask"] else None
    if cfg["upscale"] < 1:
        raise UsageError("upscale must be >= 1")
    out = _out_dir(cfg["out_dir"])
    stem = _stem(cfg["cube"])
    for index in cfg["slices"]:
        img = render_slice(cube, index, gt, pred, cfg["upscale"])
        path = out / f"{stem}.slice{index:04d}.png"
        save_png(img, path, cfg.provenance())
        print(path)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "render": cmd_render,
}


# -- entry point ---------------------------------------------------------------------


HELP = {
    "synth": "generate synthetic cubes, ground-truth masks and catalogs",
    "train": "train Unet-LK on cube/mask pairs",
    "infer": "run a checkpoint over cubes: probability cube, mask, catalog",
    "baseline": "smooth-and-clip source finding",
    "eval": "score predicted masks against ground truth",
    "render": "write PNG slices with optional mask contours",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hifind", description="HI source finding on spectral cubes.")
    parser.add_argument("--version", action="version", version=f"hifind {__version__}")
    shared = _Parser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="key=value config file")
    shared.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--jobs", type=int, default=1, help="worker processes for per-cube work")
    shared.add_argument("--deterministic", action="store_true",
                        help="run sequentially in a fixed order")
    shared.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        keys = "\n".join(f"  {k} = {v.default}" for k, v in SCHEMAS[name].items())
        p = sub.add_parser(name, parents=[shared], help=HELP[name], description=HELP[name],
                           epilog=f"config keys (defaults):\n{keys}",
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from out_dir/last.hiwt")
        if name == "eval":
            p.add_argument("--force", action="store_true", help="accept inputs with mixed config hashes")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        text = None
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        overrides = list(args.overrides)
        if getattr(args, "resume", False):
            overrides.append("resume=1")
        jobs = 1 if args.deterministic else args.jobs
        cfg = resolve_config(args.command, text, overrides, args.seed, jobs, args.deterministic)
        if args.command == "eval":
            return cmd_eval(cfg, force=args.force)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"hifind: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CubeIOError, CheckpointError, RebinSizeError, SliceRangeError, PlacementError,
            FileNotFoundError, IsADirectoryError) as exc:
        print(f"hifind: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code for scripts
        log.debug("internal error", exc_info=True)
        print(f"hifind: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

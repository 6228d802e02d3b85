"""End-to-end orchestration: synthesis, restoration, evaluation, manifests.

Restoration order: tone-map domain adaptation, alignment of the color cue
to the structure image, pre-deblurring, conditioning (deblurred estimate
stacked with the original), pyramid features, gated fusion and diffusion
sampling with the fused predictor.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import io
from .align import AlignConfig, align_color_to_structure, warp
from .diffusion import (FusedPredictor, GaussianPredictor, OraclePredictor, make_schedule,
                        sample)
from .errors import ConfigError, DataError, MetafuseError, ParameterError
from .forward import ENGINES, child_seeds, color_average, synthesize_measurements
from .fusion import (DEFAULT_GAMMA_GRID, DomainStats, FeaturePyramid, apply_tone_map,
                     build_pyramid, collapse_pyramid, fit_tone_map, gated_fuse)
from .image import Image, NoiseModel, ToneMapParams, Transform2D
from .metrics import evaluate, report
from .predeblur import concat_condition, predeblur_image, split_condition

logger = logging.getLogger(__name__)

PREDICTORS = ("oracle", "gaussian", "fused-gaussian")
MANIFEST = "manifest.jsonl"
CHROMA_FLOOR = 0.02


@dataclass
class PipelineConfig:
    outdir: str = "out"
    scene: str | None = None
    psf_c: str | None = None
    psf_s: str | None = None
    y_c: str | None = None
    y_s: str | None = None
    domain: str | None = None
    seed: int = 0
    engine: str = "direct"
    # forward model
    sigma: float = 0.005
    luminance: bool = False
    misalign_dx: float = 0.0
    misalign_dy: float = 0.0
    tone_gamma: float = 1.0
    # alignment
    align: bool = True
    align_model: str = "affine"
    align_levels: int = 3
    align_iters: int = 50
    align_tol: float = 1e-6
    # pre-deblurring
    kout: int = 31
    lambda_scale: float = 200.0
    deblur_sigma: float | None = None
    # fusion
    dam: bool = True
    pyramid_levels: int = 4
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    chroma_sigma: float = 2.0
    # diffusion
    timesteps: int = 1000
    eta: float = 0.0
    predictor: str = "fused-gaussian"
    prior_sigma: float = 0.005
    # output
    dumps: bool = True
    figures: bool = True

    def validate(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"predictor must be one of {PREDICTORS}")
        if self.sigma < 0 or self.prior_sigma < 0:
            raise ConfigError("noise and prior sigmas must be >= 0")
        if self.kout < 1 or self.kout % 2 == 0:
            raise ConfigError("kout must be odd")
        if self.lambda_scale <= 0 or self.tone_gamma <= 0:
            raise ConfigError("lambda_scale and tone_gamma must be > 0")
        if self.timesteps < 1 or not 0 <= self.eta <= 1:
            raise ConfigError("need timesteps >= 1 and 0 <= eta <= 1")
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        try:
            self.align_config()
        except ParameterError as e:
            raise ConfigError(str(e)) from e
        return self

    def align_config(self) -> AlignConfig:
        return AlignConfig(self.align_model, self.align_levels, self.align_iters, self.align_tol)

    def path(self, name: str) -> Path:
        return Path(self.outdir) / name


# INI section/key -> config attribute
_INI_KEYS = {
    ("paths", "outdir"): "outdir", ("paths", "scene"): "scene", ("paths", "psf_c"): "psf_c",
    ("paths", "psf_s"): "psf_s", ("paths", "y_c"): "y_c", ("paths", "y_s"): "y_s",
    ("paths", "domain"): "domain",
    ("pipeline", "seed"): "seed", ("pipeline", "engine"): "engine",
    ("pipeline", "dumps"): "dumps", ("pipeline", "figures"): "figures",
    ("forward-model", "sigma"): "sigma", ("forward-model", "luminance"): "luminance",
    ("forward-model", "misalign_dx"): "misalign_dx", ("forward-model", "misalign_dy"): "misalign_dy",
    ("forward-model", "tone_gamma"): "tone_gamma",
    ("alignment", "enabled"): "align", ("alignment", "model"): "align_model",
    ("alignment", "levels"): "align_levels", ("alignment", "iters"): "align_iters",
    ("alignment", "tol"): "align_tol",
    ("predeblur", "kout"): "kout", ("predeblur", "lambda_scale"): "lambda_scale",
    ("predeblur", "sigma"): "deblur_sigma",
    ("fusion", "dam"): "dam", ("fusion", "levels"): "pyramid_levels",
    ("fusion", "gamma_grid"): "gamma_grid", ("fusion", "chroma_sigma"): "chroma_sigma",
    ("diffusion", "timesteps"): "timesteps", ("diffusion", "eta"): "eta",
    ("diffusion", "predictor"): "predictor", ("diffusion", "prior_sigma"): "prior_sigma",
}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes", "on")
        if kind == "int":
            return int(raw)
        if kind in ("float", "float | None"):
            return float(raw)
        if kind == "tuple":
            return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"bad value {raw!r} for {name}") from e
    return raw


def load_config(path=None, **overrides) -> PipelineConfig:
    """Read an INI file (sections named after modules), then apply non-None overrides."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        for section in parser.sections():
            for key, raw in parser.items(section):
                attr = _INI_KEYS.get((section, key))
                if attr is None:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                values[attr] = _coerce(attr, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    return PipelineConfig(**values).validate()


# -- manifest ---------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_PATH_KEYS = ("scene", "psf_c", "psf_s", "y_c", "y_s", "domain", "dumps")


def _portable(inputs: dict, outdir: Path) -> dict:
    """Input paths become relative to ``outdir`` so manifests do not depend on where a run lives."""
    out = dict(inputs)
    for key in _PATH_KEYS:
        if out.get(key) not in (None, "None"):
            out[key] = os.path.relpath(Path(out[key]).resolve(), outdir.resolve())
    return out


def update_manifest(outdir, command: str, paths, seed: int, inputs: dict) -> Path:
    """Upsert one record per artifact, keyed by path relative to ``outdir``."""
    outdir = Path(outdir)
    inputs = _portable(inputs, outdir)
    mpath = outdir / MANIFEST
    records = {}
    if mpath.exists():
        for line in mpath.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                records[rec["path"]] = rec
    for p in paths:
        rel = os.path.relpath(p, outdir)
        records[rel] = {"path": rel, "sha256": sha256_file(p), "command": command,
                        "seed": seed, "inputs": inputs}
    with open(mpath, "w", newline="\n") as f:
        for rel in sorted(records):
            f.write(json.dumps(records[rel], sort_keys=True) + "\n")
    return mpath


def verify_manifest(mpath) -> list[str]:
    """Return the manifest entries whose files are missing or whose hash changed."""
    mpath = Path(mpath)
    if mpath.is_dir():
        mpath = mpath / MANIFEST
    if not mpath.exists():
        raise ConfigError(f"no manifest at {mpath}")
    bad = []
    for line in mpath.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        target = mpath.parent / rec["path"]
        if not target.exists() or sha256_file(target) != rec["sha256"]:
            bad.append(rec["path"])
    return bad


# -- helpers ----------------------------------------------------------------

def _require(path, what):
    if path is None:
        raise ConfigError(f"missing {what} path")
    if not Path(path).exists():
        raise ConfigError(f"{what} file not found: {path}")
    return path


def quantize(img: Image) -> Image:
    """Round-trip through the float32 dump precision."""
    return Image(img.data.astype(np.float32).astype(np.float64))


class StageError(MetafuseError):
    def __init__(self, stage: str, err: MetafuseError):
        super().__init__(f"[{stage}] {err}")
        self.exit_code = err.exit_code
        self.stage = stage


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        logger.info("stage: %s", self.name)

    def __exit__(self, et, ev, tb):
        if ev is not None and isinstance(ev, MetafuseError) and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


# -- synthesis --------------------------------------------------------------

def run_synth(cfg: PipelineConfig) -> dict:
    """Simulate measurements from a scene and two PSF grids; returns written paths."""
    scene = io.load_image(_require(cfg.scene, "scene"))
    grid_c = io.load_psf_grid(_require(cfg.psf_c, "color PSF grid"))
    grid_s = io.load_psf_grid(_require(cfg.psf_s, "structure PSF grid"))
    with _stage("synth"):
        y_c, y_s = synthesize_measurements(scene, grid_c, grid_s, NoiseModel(cfg.sigma, cfg.seed),
                                           engine=cfg.engine, luminance=cfg.luminance)
        domain = {"color": DomainStats.of(y_c).to_dict(), "structure": DomainStats.of(y_s).to_dict()}
        if cfg.misalign_dx or cfg.misalign_dy:
            y_c = warp(y_c, Transform2D.translation(cfg.misalign_dx, cfg.misalign_dy))
        if cfg.tone_gamma != 1.0:
            shift = lambda im: Image(np.maximum(im.data, 0.0) ** cfg.tone_gamma)  # noqa: E731
            y_c, y_s = shift(y_c), shift(y_s)
    Path(cfg.outdir).mkdir(parents=True, exist_ok=True)
    out = {"y_c": cfg.path("y_c.imgf"), "y_s": cfg.path("y_s.imgf"), "gt": cfg.path("gt.imgf"),
           "domain": cfg.path("domain.json")}
    io.save_image(y_c, out["y_c"])
    io.save_image(y_s, out["y_s"])
    io.save_image(scene, out["gt"])
    out["domain"].write_text(json.dumps(domain, indent=1, sort_keys=True) + "\n")
    inputs = {"scene": str(cfg.scene), "psf_c": str(cfg.psf_c), "psf_s": str(cfg.psf_s),
              "sigma": cfg.sigma, "misalign": [cfg.misalign_dx, cfg.misalign_dy],
              "tone_gamma": cfg.tone_gamma, "engine": cfg.engine}
    update_manifest(cfg.outdir, "synth", out.values(), cfg.seed, inputs)
    return out


# -- restoration ------------------------------------------------------------

@dataclass
class RestoreResult:
    restored: Image
    stages: dict = field(default_factory=dict)
    tone: dict = field(default_factory=dict)
    transform: Transform2D = field(default_factory=Transform2D.identity)


def color_features(cond_c: Image, sigma: float) -> Image:
    """Per-channel color ratios taken from the low-passed original color cue."""
    _, original = split_condition(cond_c, 3)
    low = original.data if sigma <= 0 else gaussian_filter(original.data, (0, sigma, sigma),
                                                           mode="nearest")
    return Image(low / np.maximum(low.mean(axis=0, keepdims=True), CHROMA_FLOOR))


def structure_features(cond_s: Image, color_estimate: Image) -> Image:
    """Structure detail the color estimate's luminance is missing."""
    deblurred, _ = split_condition(cond_s, 1)
    return Image(deblurred.data - color_average(color_estimate).data)


def conditioning(cond_c: Image, cond_s: Image, cfg: PipelineConfig):
    tilde_c, _ = split_condition(cond_c, 3)
    f_z = build_pyramid(tilde_c, cfg.pyramid_levels)
    f_c = build_pyramid(color_features(cond_c, cfg.chroma_sigma), cfg.pyramid_levels)
    f_s = build_pyramid(structure_features(cond_s, tilde_c), cfg.pyramid_levels)
    return f_z, f_c, f_s


def _zeros_like(p: FeaturePyramid) -> FeaturePyramid:
    return p.map(lambda l: Image(np.zeros(l.shape)))


def finish_restore(y_c_aligned: Image, y_s_adapted: Image, tilde_c: Image, tilde_s: Image,
                   cfg: PipelineConfig) -> tuple[Image, Image]:
    """Conditioning, fusion and sampling; returns (restored, fused baseline)."""
    with _stage("condition"):
        cond_c = concat_condition(tilde_c, y_c_aligned)
        cond_s = concat_condition(tilde_s, y_s_adapted)
        f_z, f_c, f_s = conditioning(cond_c, cond_s, cfg)
    with _stage("fusion"):
        baseline = collapse_pyramid(gated_fuse(f_z, f_c, f_s))
    with _stage("diffusion"):
        sched = make_schedule(cfg.timesteps)
        seed = child_seeds(cfg.seed, 2)[1]
        if cfg.predictor == "oracle":
            pred = OraclePredictor(baseline, sched)
        elif cfg.predictor == "gaussian":
            pred = GaussianPredictor(baseline, cfg.prior_sigma, sched)
        else:
            # the base model sees fused inputs, so its mean carries the gate offset
            offset = collapse_pyramid(gated_fuse(_zeros_like(f_z), f_c, f_s))
            base = GaussianPredictor(Image(baseline.data + offset.data), cfg.prior_sigma, sched)
            pred = FusedPredictor(base, f_c, f_s)
        restored = sample(pred, f_c, f_s, baseline.shape, sched, cfg.eta, seed)
    return restored, baseline


def restore(y_c: Image, y_s: Image, grid_c, grid_s, cfg: PipelineConfig,
            domain: dict | None = None) -> RestoreResult:
    """Run every restoration stage in memory. Stage outputs are rounded to
    dump precision so a rerun from dumps reproduces the result."""
    res = RestoreResult(restored=None)
    with _stage("dam"):
        if cfg.dam and domain is not None:
            tc = fit_tone_map(y_c, DomainStats.from_dict(domain["color"]), cfg.gamma_grid)
            ts = fit_tone_map(y_s, DomainStats.from_dict(domain["structure"]), cfg.gamma_grid)
        else:
            if cfg.dam:
                logger.warning("no domain statistics given; tone mapping skipped")
            tc, ts = ToneMapParams.identity(y_c.channels), ToneMapParams.identity(y_s.channels)
        y_c_dam = quantize(apply_tone_map(y_c, tc))
        y_s_dam = quantize(apply_tone_map(y_s, ts))
        res.tone = {"color": tc.to_dict(), "structure": ts.to_dict()}
    with _stage("align"):
        if cfg.align:
            y_c_al, H = align_color_to_structure(y_c_dam, y_s_dam, cfg.align_config())
            y_c_al = quantize(y_c_al)
        else:
            y_c_al, H = y_c_dam, Transform2D.identity()
        res.transform = H
    with _stage("predeblur"):
        sigma = cfg.sigma if cfg.deblur_sigma is None else cfg.deblur_sigma
        tilde_c = quantize(predeblur_image(y_c_al, grid_c, sigma, cfg.kout, cfg.lambda_scale,
                                           engine=cfg.engine))
        tilde_s = quantize(predeblur_image(y_s_dam, grid_s, sigma, cfg.kout, cfg.lambda_scale,
                                           engine=cfg.engine))
    restored, baseline = finish_restore(y_c_al, y_s_dam, tilde_c, tilde_s, cfg)
    res.restored = restored
    res.stages = {"y_c": y_c, "y_s": y_s, "y_c_dam": y_c_dam, "y_s_dam": y_s_dam,
                  "y_c_aligned": y_c_al, "tilde_y_c": tilde_c, "tilde_y_s": tilde_s,
                  "baseline": baseline, "restored": restored}
    return res


_DUMPED = ("y_c_dam", "y_s_dam", "y_c_aligned", "tilde_y_c", "tilde_y_s", "baseline")


def run_restore(cfg: PipelineConfig, from_dumps=None) -> dict:
    """Restore from files; with ``from_dumps`` resume after pre-deblurring."""
    out_dir = Path(cfg.outdir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if from_dumps is not None:
        d = Path(from_dumps)
        load = lambda n: io.load_image(_require(d / f"{n}.imgf", n))  # noqa: E731
        restored, _ = finish_restore(load("y_c_aligned"), load("y_s_dam"), load("tilde_y_c"),
                                     load("tilde_y_s"), cfg)
        written["restored"] = cfg.path("restored.imgf")
        io.save_image(restored, written["restored"])
        update_manifest(out_dir, "restore --from-dumps", written.values(), cfg.seed,
                        {"dumps": str(from_dumps)})
        return written

    y_c_path = cfg.y_c or str(cfg.path("y_c.imgf"))
    y_s_path = cfg.y_s or str(cfg.path("y_s.imgf"))
    y_c = io.load_image(_require(y_c_path, "color cue"))
    y_s = io.load_image(_require(y_s_path, "structure image"))
    grid_c = io.load_psf_grid(_require(cfg.psf_c, "color PSF grid"))
    grid_s = io.load_psf_grid(_require(cfg.psf_s, "structure PSF grid"))
    domain = None
    domain_path = cfg.domain or (cfg.path("domain.json") if cfg.path("domain.json").exists() else None)
    if domain_path is not None:
        try:
            domain = json.loads(Path(_require(domain_path, "domain statistics")).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad domain statistics file: {e}") from e

    res = restore(y_c, y_s, grid_c, grid_s, cfg, domain)
    written["restored"] = cfg.path("restored.imgf")
    io.save_image(res.restored, written["restored"])
    info = {"tone": res.tone, "transform": res.transform.to_list(),
            "align_converged": bool(res.transform.converged), "align_enabled": cfg.align,
            "dam_enabled": cfg.dam, "predictor": cfg.predictor, "timesteps": cfg.timesteps,
            "eta": cfg.eta}
    if cfg.dumps:
        sd = cfg.path("stages")
        sd.mkdir(exist_ok=True)
        for name in _DUMPED:
            written[name] = sd / f"{name}.imgf"
            io.save_image(res.stages[name], written[name])
        written["stage_info"] = sd / "stage_info.json"
        written["stage_info"].write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    if cfg.figures:
        from .plotting import plot_stages
        written["figure"] = cfg.path("stages.png")
        plot_stages({k: res.stages[k] for k in ("y_c", "y_s", "y_c_aligned", "tilde_y_c",
                                                "tilde_y_s", "baseline", "restored")},
                    written["figure"])
    inputs = {"y_c": str(y_c_path), "y_s": str(y_s_path), "psf_c": str(cfg.psf_c),
              "psf_s": str(cfg.psf_s), "engine": cfg.engine, **info}
    if not res.transform.converged:
        inputs["warning"] = "alignment did not converge"
    update_manifest(out_dir, "restore", written.values(), cfg.seed, inputs)
    return written


# -- evaluation -------------------------------------------------------------

def run_eval(pairs, out_csv, figure: bool = True) -> list[tuple]:
    """Score (name, restored, gt) triples; append a mean row; optionally plot."""
    if not pairs:
        raise ConfigError("no image pairs to evaluate")
    rows = []
    for name, restored, gt in pairs:
        a = io.load_image(_require(restored, f"restored image for {name}"))
        b = io.load_image(_require(gt, f"ground truth for {name}"))
        rows.append(evaluate(name, a, b))
    rows.append(("mean",) + tuple(float(np.mean([r[i] for r in rows])) for i in (1, 2, 3)))
    report(rows, out_csv)
    if figure:
        from .plotting import plot_report
        plot_report(rows, Path(out_csv).with_suffix(".png"))
    return rows

"""The four experiment sweeps and their CSV reports.

Stage 1 sweeps learning rate x momentum x target kind, then re-runs the six
best with larger hidden layers. Stage 2 sweeps the 144 filter/neighbour/
erosion target preparations. Stage 3 sweeps the alternative input variants.
Stage 4 compares mean filters, a denoising network (AFS) and a network
trained straight on noisy pixels (AWFS) over a suite of 25 noisy images.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .features import STAGE3_VARIANTS, FeatureVariant, extract_features
from .filtering import (SIMPLE, SIMPLE_ORDERS, WEIGHTED, WEIGHTED_ORDERS, FilterMask, NoiseSpec,
                        apply_linear_filter, build_mask, inject_salt_pepper)
from .image_core import RasterImage, quantize_output
from .metrics import FILTER_MARGIN, SEGMENTATION_MARGIN, percent_hits, score_hits, validation_mse
from .mlp import TrainConfig, init_network, predict, train
from .segmentation import NEIGHBOR_MODES, DesirableSpec, build_desirable

log = logging.getLogger(__name__)

DEFAULT_FRACTION = 1400 / 76800
NOISE_DENSITIES = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
NOISE_MODES = ("R", "G", "B", "ALL")
EROSION_ORDERS = (0, 3, 5, 11)
STAGE4_COMBOS = ("M3N8E5", "M5WNE11", "M7N4E11", "M9N8E11", "MW3N8E5")
STAGE4_TASKS = ("FilterThenSeg", "AFS", "AWFS")

# derived-seed streams
_SAMPLE, _INIT, _NOISE, _NOISE_SAMPLE = 1, 2, 3, 4


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


# -- combination names -------------------------------------------------------------

_NEIGHBOR_TOKEN = {"WN": "WN", "N4": "V4", "N8": "V8"}
_NEIGHBOR_NAME = {v: k for k, v in _NEIGHBOR_TOKEN.items()}


class ComboNameError(ValueError):
    def __init__(self, name: str, pos: int, expected: str):
        super().__init__(f"bad combination name {name!r} at position {pos}: expected {expected}")
        self.position = pos


@dataclass(frozen=True)
class ComboSpec:
    filter_kind: str
    mask_order: int
    neighbor_mode: str
    erosion_order: int

    def __post_init__(self):
        if self.filter_kind not in (SIMPLE, WEIGHTED):
            raise ValueError(f"unknown filter kind {self.filter_kind!r}")
        if self.mask_order < 1 or self.mask_order % 2 == 0:
            raise ValueError(f"mask order must be odd, got {self.mask_order}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ValueError(f"unknown neighbor mode {self.neighbor_mode!r}")
        if self.erosion_order != 0 and self.erosion_order % 2 == 0:
            raise ValueError(f"erosion order must be 0 or odd, got {self.erosion_order}")

    @property
    def name(self) -> str:
        return format_combo_name(self)

    def mask(self) -> FilterMask:
        return build_mask(self.filter_kind, self.mask_order)

    def desirable_spec(self, base: DesirableSpec) -> DesirableSpec:
        return replace(base, neighbor_mode=self.neighbor_mode, erosion_order=self.erosion_order)


def format_combo_name(spec: ComboSpec) -> str:
    prefix = "MW" if spec.filter_kind == WEIGHTED else "M"
    erosion = f"E{spec.erosion_order}" if spec.erosion_order else "WE"
    return f"{prefix}{spec.mask_order}{_NEIGHBOR_NAME[spec.neighbor_mode]}{erosion}"


def parse_combo_name(name: str) -> ComboSpec:
    """Parse ``M|MW <order> WN|N4|N8 WE|E<order>``, e.g. ``MW3N8E5``."""
    pos = 0
    if name.startswith("MW"):
        kind, pos = WEIGHTED, 2
    elif name.startswith("M"):
        kind, pos = SIMPLE, 1
    else:
        raise ComboNameError(name, 0, "'M' or 'MW'")
    m = re.compile(r"\d+").match(name, pos)
    if not m:
        raise ComboNameError(name, pos, "mask order")
    order, pos = int(m.group()), m.end()
    token = name[pos:pos + 2]
    if token not in _NEIGHBOR_TOKEN:
        raise ComboNameError(name, pos, "'WN', 'N4' or 'N8'")
    neighbor, pos = _NEIGHBOR_TOKEN[token], pos + 2
    if name[pos:] == "WE":
        erosion = 0
    else:
        m = re.compile(r"E(\d+)$").match(name, pos)
        if not m or int(m.group(1)) == 0:
            raise ComboNameError(name, pos, "'WE' or 'E<order>'")
        erosion = int(m.group(1))
    try:
        return ComboSpec(kind, order, neighbor, erosion)
    except ValueError as exc:
        raise ComboNameError(name, 0, str(exc)) from None


def combo_grid() -> list[ComboSpec]:
    """All 144 target preparations: (7 simple + 5 weighted masks) x 3 x 4."""
    masks = [(SIMPLE, k) for k in SIMPLE_ORDERS] + [(WEIGHTED, k) for k in WEIGHTED_ORDERS]
    return [ComboSpec(kind, k, nb, er)
            for (kind, k), nb, er in itertools.product(masks, NEIGHBOR_MODES, EROSION_ORDERS)]


# -- configuration -------------------------------------------------------------------


def _floats(v):
    return tuple(float(x) for x in v)


def _ints(v):
    return tuple(int(x) for x in v)


@dataclass
class ExperimentConfig:
    seed: int = 2014
    epochs: int = 100
    rl_grid: tuple = (0.01, 0.1, 0.3, 0.5)
    cm_grid: tuple = (0.3, 0.5, 0.7, 0.9)
    qnhl: int = 4
    qnhl_extra: tuple = (5, 8)
    top_k: int = 6
    replicate_epochs: tuple = ()
    fraction: float = DEFAULT_FRACTION
    best_rl: float = 0.01
    best_cm: float = 0.9
    num_classes: int = 3
    seed_erosion: int = 3
    seed_neighbor: str = "WN"
    target_gray: int = 255
    noise_densities: tuple = NOISE_DENSITIES
    noise_modes: tuple = NOISE_MODES
    stage4_combos: tuple = STAGE4_COMBOS
    stage4_tasks: tuple = STAGE4_TASKS
    jobs: int = 1

    _CONVERTERS = {
        "seed": int, "epochs": int, "qnhl": int, "top_k": int, "num_classes": int,
        "seed_erosion": int, "target_gray": int, "jobs": int,
        "fraction": float, "best_rl": float, "best_cm": float,
        "rl_grid": _floats, "cm_grid": _floats, "noise_densities": _floats,
        "qnhl_extra": _ints, "replicate_epochs": _ints,
        "seed_neighbor": str, "noise_modes": tuple, "stage4_combos": tuple, "stage4_tasks": tuple,
    }

    def __post_init__(self):
        for f in fields(self):
            conv = self._CONVERTERS[f.name]
            value = getattr(self, f.name)
            if conv in (_floats, _ints, tuple) and isinstance(value, str):
                value = [t.strip() for t in value.split(",") if t.strip()]
            setattr(self, f.name, conv(value))
        bad = set(self.stage4_tasks) - set(STAGE4_TASKS)
        if bad:
            raise ValueError(f"unknown stage-4 tasks {sorted(bad)}")

    def seed_spec(self) -> DesirableSpec:
        return DesirableSpec(self.num_classes, None, self.seed_erosion, self.seed_neighbor,
                             self.target_gray)

    def nseed_spec(self) -> DesirableSpec:
        return replace(self.seed_spec(), erosion_order=0)

    def items(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(map(str, value))
            yield f.name, value

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        known = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = value
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


# -- records and reports ---------------------------------------------------------------


@dataclass
class SimulationRecord:
    id: int
    task: str
    desirable_kind: str
    qnhl: int
    rl: float
    cm: float
    epochs: int
    variant: str = FeatureVariant.RGB3.tag
    combo: str = ""
    noise: Optional[NoiseSpec] = None
    phe_percent: float = float("nan")
    filter_phe: Optional[float] = None
    mse: float = float("nan")
    runtime_seconds: float = 0.0
    mse_rank: Optional[int] = None


@dataclass
class ExperimentReport:
    stage: str
    records: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    columns: list = field(default_factory=list)


@dataclass(frozen=True)
class SampledDataset:
    training: np.ndarray
    holdout: np.ndarray
    seed: int
    inputs: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None


def sample_training_set(width: int, height: int, fraction: float = DEFAULT_FRACTION,
                        seed: int = 0) -> SampledDataset:
    """Draw ``round(fraction * pixels)`` distinct training pixels; the rest is holdout."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    total = width * height
    n = int(np.floor(fraction * total + 0.5))
    if n <= 0 or n >= total:
        raise ValueError(f"fraction {fraction} yields {n} of {total} pixels")
    rng = np.random.default_rng(seed)
    training = np.sort(rng.choice(total, size=n, replace=False))
    keep = np.ones(total, dtype=bool)
    keep[training] = False
    return SampledDataset(training, np.flatnonzero(keep), seed)


def _rank_key(r: SimulationRecord):
    return (-r.phe_percent, r.mse, r.id)


def _run_all(fn: Callable, tasks: Sequence[tuple], jobs: int) -> list:
    # results come back in task order whatever the completion order
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


@dataclass(frozen=True)
class _Problem:
    """Everything a single segmentation simulation needs, shared across a sweep."""

    inputs: np.ndarray      # (pixels, arity)
    desirable: np.ndarray   # gray levels (pixels,)
    training: np.ndarray
    holdout: np.ndarray


def _make_problem(img: RasterImage, desirable: RasterImage, variant: FeatureVariant,
                  sample: SampledDataset) -> _Problem:
    feats = extract_features(img, variant)
    return _Problem(feats.vectors, desirable.data.reshape(-1).copy(), sample.training,
                    sample.holdout)


def _simulate(problem: _Problem, sizes: tuple, cfg: TrainConfig) -> tuple[float, float, float]:
    """Train, then score PHE on every pixel and MSE on the holdout pixels."""
    start = time.perf_counter()
    target = problem.desirable / 255.0
    net = init_network(sizes, cfg.seed)
    net, _ = train(net, problem.inputs[problem.training], target[problem.training], cfg)
    out = predict(net, problem.inputs)[:, 0]
    gray = quantize_output(out)
    phe = percent_hits(score_hits(gray, problem.desirable, SEGMENTATION_MARGIN))
    mse = validation_mse(out[problem.holdout], target[problem.holdout])
    return phe, mse, time.perf_counter() - start


def _base_meta(cfg: ExperimentConfig, source_name: str, stage: str) -> dict:
    meta = {"stage": stage, "input": source_name}
    meta.update((k, v) for k, v in cfg.items() if k != "jobs")
    return meta


def _train_cfg(cfg: ExperimentConfig, rl: float, cm: float, epochs: Optional[int] = None) -> TrainConfig:
    return TrainConfig(rl, cm, epochs or cfg.epochs, derive_seed(cfg.seed, _INIT))


def _sample(cfg: ExperimentConfig, img: RasterImage, tag: int = 0) -> SampledDataset:
    return sample_training_set(img.width, img.height, cfg.fraction, derive_seed(cfg.seed, _SAMPLE, tag))


# -- stage 1 ----------------------------------------------------------------------------


def run_stage1(source: RasterImage, cfg: Optional[ExperimentConfig] = None,
               source_name: str = "") -> ExperimentReport:
    """Learning-rate x momentum sweep on both target kinds, then hidden-size variations.

    Simulation ids follow the sweep order: learning rate varies fastest,
    then momentum, Seed targets before NSeed targets.
    """
    cfg = cfg or ExperimentConfig()
    sample = _sample(cfg, source)
    problems = {spec.kind: _make_problem(source, build_desirable(source, spec), FeatureVariant.RGB3, sample)
                for spec in (cfg.seed_spec(), cfg.nseed_spec())}

    grid = [(kind, rl, cm) for kind in ("Seed", "NSeed") for cm in cfg.cm_grid for rl in cfg.rl_grid]
    tasks = [(problems[kind], (3, cfg.qnhl, 1), _train_cfg(cfg, rl, cm)) for kind, rl, cm in grid]
    results = _run_all(_simulate, tasks, cfg.jobs)
    sweep = [SimulationRecord(i + 1, "rl_cm", kind, cfg.qnhl, rl, cm, cfg.epochs,
                              phe_percent=phe, mse=mse, runtime_seconds=rt)
             for i, ((kind, rl, cm), (phe, mse, rt)) in enumerate(zip(grid, results))]

    best = sorted(sweep, key=_rank_key)[:cfg.top_k]
    follow = [(r, q, cfg.epochs) for r in best for q in cfg.qnhl_extra]
    follow += [(r, q, e) for r in best for q in (cfg.qnhl, *cfg.qnhl_extra) for e in cfg.replicate_epochs]
    tasks = [(problems[r.desirable_kind], (3, q, 1), _train_cfg(cfg, r.rl, r.cm, e)) for r, q, e in follow]
    results = _run_all(_simulate, tasks, cfg.jobs)
    extra = []
    next_id = len(sweep) + 1
    for (r, q, e), (phe, mse, rt) in zip(follow, results):
        task = "qnhl" if e == cfg.epochs else "epochs"
        extra.append(SimulationRecord(next_id, task, r.desirable_kind, q, r.rl, r.cm, e,
                                      phe_percent=phe, mse=mse, runtime_seconds=rt))
        next_id += 1

    records = []
    for task in ("rl_cm", "qnhl", "epochs"):
        group = [r for r in sweep + extra if r.task == task]
        for rank, r in enumerate(sorted(group, key=lambda r: (r.mse, r.id)), 1):
            r.mse_rank = rank
        records.extend(sorted(group, key=_rank_key))

    report = ExperimentReport("stage1", records, meta=_base_meta(cfg, source_name, "stage1"))
    if cfg.replicate_epochs:
        # mean PHE of each best configuration across every epoch budget and hidden size
        for r in best:
            runs = [x for x in [r] + extra if (x.desirable_kind, x.rl, x.cm) == (r.desirable_kind, r.rl, r.cm)]
            report.aggregates.append({"config": f"{r.desirable_kind}/rl={r.rl}/cm={r.cm}",
                                      "mean_phe": float(np.mean([x.phe_percent for x in runs]))})
    return report


# -- stage 2 ----------------------------------------------------------------------------


def _stage2_one(source: RasterImage, combo: ComboSpec, base: DesirableSpec,
                sample: SampledDataset, sizes: tuple, tcfg: TrainConfig):
    desirable = build_desirable(source, combo.desirable_spec(base), combo.mask())
    return _simulate(_make_problem(source, desirable, FeatureVariant.RGB3, sample), sizes, tcfg)


def run_stage2(source: RasterImage, cfg: Optional[ExperimentConfig] = None,
               grid: Optional[Sequence[ComboSpec]] = None, source_name: str = "") -> ExperimentReport:
    """Train the best stage-1 configuration against every target preparation."""
    cfg = cfg or ExperimentConfig()
    grid = list(grid) if grid is not None else combo_grid()
    sample = _sample(cfg, source)
    tcfg = _train_cfg(cfg, cfg.best_rl, cfg.best_cm)
    sizes = (3, cfg.qnhl, 1)
    tasks = [(source, c, cfg.seed_spec(), sample, sizes, tcfg) for c in grid]
    results = _run_all(_stage2_one, tasks, cfg.jobs)
    records = [SimulationRecord(i + 1, "combo", "Seed" if c.erosion_order else "NSeed", cfg.qnhl,
                                cfg.best_rl, cfg.best_cm, cfg.epochs, combo=c.name,
                                phe_percent=phe, mse=mse, runtime_seconds=rt)
               for i, (c, (phe, mse, rt)) in enumerate(zip(grid, results))]
    records.sort(key=_rank_key)
    return ExperimentReport("stage2", records, meta=_base_meta(cfg, source_name, "stage2"))


# -- stage 3 ----------------------------------------------------------------------------


def hidden_size_for(variant: FeatureVariant, default: int = 4) -> int:
    return 5 if variant is FeatureVariant.RGB_HIST4 else default


def run_stage3(source: RasterImage, cfg: Optional[ExperimentConfig] = None,
               variants: Sequence[FeatureVariant] = STAGE3_VARIANTS,
               source_name: str = "") -> ExperimentReport:
    """Learning-rate x momentum sweep for each alternative input variant."""
    cfg = cfg or ExperimentConfig()
    sample = _sample(cfg, source)
    desirable = build_desirable(source, cfg.seed_spec())
    grid, tasks = [], []
    for variant in variants:
        problem = _make_problem(source, desirable, variant, sample)
        hidden = hidden_size_for(variant, cfg.qnhl)
        for cm in cfg.cm_grid:
            for rl in cfg.rl_grid:
                grid.append((variant, hidden, rl, cm))
                tasks.append((problem, (variant.arity, hidden, 1), _train_cfg(cfg, rl, cm)))
    results = _run_all(_simulate, tasks, cfg.jobs)
    records = [SimulationRecord(i + 1, variant.tag, "Seed", hidden, rl, cm, cfg.epochs,
                                variant=variant.tag, phe_percent=phe, mse=mse, runtime_seconds=rt)
               for i, ((variant, hidden, rl, cm), (phe, mse, rt)) in enumerate(zip(grid, results))]
    ordered = []
    for variant in variants:
        ordered.extend(sorted((r for r in records if r.variant == variant.tag), key=_rank_key))
    return ExperimentReport("stage3", ordered, meta=_base_meta(cfg, source_name, "stage3"))


# -- stage 4 ----------------------------------------------------------------------------


def noise_suite(source: RasterImage, cfg: Optional[ExperimentConfig] = None) -> list[tuple[Optional[NoiseSpec], RasterImage]]:
    """The clean image followed by every (density, channel mode) corruption."""
    cfg = cfg or ExperimentConfig()
    suite = [(None, source)]
    for i, (density, mode) in enumerate(itertools.product(cfg.noise_densities, cfg.noise_modes)):
        spec = NoiseSpec(density, mode, derive_seed(cfg.seed, _NOISE, i))
        suite.append((spec, inject_salt_pepper(source, spec)))
    return suite


def _stack_samples(images: Sequence[RasterImage], samples: Sequence[SampledDataset]) -> np.ndarray:
    return np.vstack([im.data.reshape(-1, im.channels)[s.training] / 255.0
                      for im, s in zip(images, samples)])


def _stage4_one(task: str, combo: Optional[ComboSpec], source: RasterImage,
                suite: list, samples: list, cfg: ExperimentConfig):
    """One stage-4 simulation; returns (filter PHEs or None, segmentation PHEs, mse, runtime)."""
    start = time.perf_counter()
    tcfg = _train_cfg(cfg, cfg.best_rl, cfg.best_cm)
    noisy = [im for _, im in suite]
    clean = source.data.reshape(-1, 3)

    if task == "FilterThenSeg":
        mask = combo.mask()
        desirable = build_desirable(source, combo.desirable_spec(cfg.seed_spec()), mask)
        seg_inputs = [apply_linear_filter(im, mask) for im in noisy]
    elif task == "AFS":
        desirable = build_desirable(source, cfg.seed_spec())
        x = _stack_samples(noisy, samples)
        d = np.vstack([clean[s.training] / 255.0 for s in samples])
        fnet, _ = train(init_network((3, cfg.qnhl, 3), tcfg.seed), x, d, tcfg)
        seg_inputs = [RasterImage(quantize_output(predict(fnet, im.data.reshape(-1, 3) / 255.0))
                                  .reshape(im.data.shape)) for im in noisy]
    elif task == "AWFS":
        desirable = build_desirable(source, cfg.seed_spec())
        seg_inputs = noisy
    else:
        raise ValueError(f"unknown stage-4 task {task!r}")

    filter_phe = None
    if task != "AWFS":
        filter_phe = [percent_hits(score_hits(im, source, FILTER_MARGIN)) for im in seg_inputs]

    target = desirable.data.reshape(-1) / 255.0
    x = _stack_samples(seg_inputs, samples)
    d = np.concatenate([target[s.training] for s in samples])
    snet, _ = train(init_network((3, cfg.qnhl, 1), tcfg.seed), x, d, tcfg)
    seg_phe, sq = [], []
    for im, s in zip(seg_inputs, samples):
        out = predict(snet, im.data.reshape(-1, 3) / 255.0)[:, 0]
        seg_phe.append(percent_hits(score_hits(quantize_output(out), desirable.data.reshape(-1))))
        sq.append(validation_mse(out[s.holdout], target[s.holdout]))
    return filter_phe, seg_phe, float(np.mean(sq)), time.perf_counter() - start


def stage4_columns(cfg: ExperimentConfig) -> list[str]:
    return ["0%"] + [f"{round(d * 100):d}%" for d in cfg.noise_densities] + ["Average"]


def _aggregate_rows(name: str, measure: str, suite: list, values: list, cfg: ExperimentConfig) -> list[dict]:
    """Per channel mode rows plus their mean; each row's Average is the mean of its columns."""
    clean = values[0]
    by_key = {(spec.density, spec.channel_mode): v for (spec, _), v in zip(suite[1:], values[1:])}
    rows = []
    for mode in cfg.noise_modes:
        cols = [clean] + [by_key[(dens, mode)] for dens in cfg.noise_densities]
        rows.append({"simulation": name, "measure": measure, "channel": mode, "values": cols})
    mean_cols = list(np.mean([r["values"] for r in rows], axis=0))
    rows.append({"simulation": name, "measure": measure, "channel": "MEAN", "values": mean_cols})
    for r in rows:
        r["values"] = [float(v) for v in r["values"]]
        r["average"] = float(np.mean(r["values"]))
    return rows


def run_stage4(source: RasterImage, cfg: Optional[ExperimentConfig] = None,
               tasks: Optional[Sequence[str]] = None, combos: Optional[Sequence[ComboSpec]] = None,
               source_name: str = "") -> ExperimentReport:
    """Noise-robustness comparison over the 25-image suite.

    ``tasks`` picks among ``FilterThenSeg`` (one simulation per combo), ``AFS``
    and ``AWFS``. Every network trains on the configured fraction of each
    suite image, so 25 x 1400 samples on a 320 x 240 source.
    """
    if source.channels != 3:
        raise ValueError("stage 4 needs an RGB source image")
    cfg = cfg or ExperimentConfig()
    tasks = tuple(tasks) if tasks is not None else cfg.stage4_tasks
    combos = list(combos) if combos is not None else [parse_combo_name(n) for n in cfg.stage4_combos]
    suite = noise_suite(source, cfg)
    samples = [sample_training_set(source.width, source.height, cfg.fraction,
                                   derive_seed(cfg.seed, _NOISE_SAMPLE, i)) for i in range(len(suite))]

    sims = []
    if "FilterThenSeg" in tasks:
        sims += [(c.name, "FilterThenSeg", c) for c in combos]
    sims += [(t, t, None) for t in ("AFS", "AWFS") if t in tasks]
    results = _run_all(_stage4_one, [(t, c, source, suite, samples, cfg) for _, t, c in sims], cfg.jobs)

    report = ExperimentReport("stage4", meta=_base_meta(cfg, source_name, "stage4"),
                              columns=stage4_columns(cfg))
    rid = 1
    for (name, task, combo), (fphe, sphe, mse, rt) in zip(sims, results):
        for i, (spec, _) in enumerate(suite):
            report.records.append(SimulationRecord(
                rid, task, "Seed" if (combo.erosion_order if combo else cfg.seed_erosion) else "NSeed",
                cfg.qnhl, cfg.best_rl, cfg.best_cm, cfg.epochs, combo=name, noise=spec,
                phe_percent=sphe[i], filter_phe=None if fphe is None else fphe[i], mse=mse,
                runtime_seconds=rt / len(suite)))
            rid += 1
        if fphe is not None:
            report.aggregates += _aggregate_rows(name, "filtering", suite, fphe, cfg)
        report.aggregates += _aggregate_rows(name, "segmentation", suite, sphe, cfg)
    return report


# -- CSV -----------------------------------------------------------------------------------

_RECORD_COLUMNS = {
    "stage1": ["id", "task", "desirable", "qnhl", "rl", "cm", "epochs", "phe", "mse", "mse_rank"],
    "stage2": ["id", "combo", "desirable", "qnhl", "rl", "cm", "epochs", "phe", "mse"],
    "stage3": ["id", "variant", "inputs", "qnhl", "rl", "cm", "epochs", "phe", "mse"],
}


def _pct(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.2f}"


def _record_row(r: SimulationRecord) -> dict:
    return {
        "id": r.id, "task": r.task, "desirable": r.desirable_kind, "qnhl": r.qnhl,
        "rl": f"{r.rl:g}", "cm": f"{r.cm:g}", "epochs": r.epochs, "combo": r.combo,
        "variant": r.variant, "inputs": FeatureVariant.from_tag(r.variant).arity,
        "density": "0" if r.noise is None else f"{r.noise.density:g}",
        "channel": "" if r.noise is None else r.noise.channel_mode,
        "phe": _pct(r.phe_percent), "filter_phe": _pct(r.filter_phe),
        "mse": f"{r.mse:.5f}", "mse_rank": "" if r.mse_rank is None else r.mse_rank,
        "runtime_s": f"{r.runtime_seconds:.3f}",
    }


def report_to_csv(report: ExperimentReport, include_runtime: bool = False) -> str:
    """Deterministic CSV text.

    Header comments echo ``report.meta``. Stages 1-3 emit one row per
    simulation. Stage 4 emits the averaged tables: for every simulation and
    measure, one row per channel mode plus a MEAN row, columns
    ``0%, 5%, ..., 30%, Average``.
    """
    buf = io.StringIO()
    for key, value in report.meta.items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    if report.stage == "stage4":
        cols = report.columns or stage4_columns(ExperimentConfig())
        writer.writerow(["simulation", "measure", "channel", *cols])
        for row in report.aggregates:
            writer.writerow([row["simulation"], row["measure"], row["channel"],
                             *(_pct(v) for v in row["values"]), _pct(row["average"])])
        return buf.getvalue()
    columns = list(_RECORD_COLUMNS[report.stage])
    if include_runtime:
        columns.append("runtime_s")
    writer.writerow(columns)
    for r in report.records:
        row = _record_row(r)
        writer.writerow([row[c] for c in columns])
    return buf.getvalue()


def write_report(report: ExperimentReport, destination: Union[str, Path],
                 include_runtime: bool = False) -> int:
    payload = report_to_csv(report, include_runtime).encode("utf-8")
    path = Path(destination)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return len(payload)


def write_records(report: ExperimentReport, destination: Union[str, Path],
                  include_runtime: bool = False) -> int:
    """Long-form stage-4 records: one row per (simulation, suite image)."""
    columns = ["id", "task", "combo", "density", "channel", "phe", "filter_phe", "mse"]
    if include_runtime:
        columns.append("runtime_s")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in report.records:
        row = _record_row(r)
        writer.writerow([row[c] for c in columns])
    payload = buf.getvalue().encode("utf-8")
    Path(destination).write_bytes(payload)
    return len(payload)

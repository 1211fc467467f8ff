"""Experiment configuration read from an INI-style file.

Sections mirror the modules: ``[dataset]``, ``[train]``, ``[sgld]``,
``[sweep]``, ``[classical]``, ``[analytic]``, ``[loo]``, ``[mds]`` and
``[experiment]``. Every key is optional; missing keys keep their defaults.
The environment variable ``STAGEWISE_OUT`` overrides the output directory.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import MAX_DEPTH
from .linnet import TrainConfig
from .sgld import SGLDConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "log_grid", "METHOD_NAMES"]

METHOD_NAMES = ("bif", "classical_h", "classical_gnh", "analytic", "loo")


class ConfigError(ValueError):
    pass


def log_grid(lo: float, hi: float, count: int) -> list[float]:
    """``count`` geometrically spaced values from ``lo`` to ``hi``."""
    if count < 1:
        raise ConfigError(f"grid count must be >= 1, got {count}")
    if not (lo > 0 and hi > 0):
        raise ConfigError(f"log grid bounds must be > 0, got {lo}, {hi}")
    if count == 1:
        return [float(lo)]
    return [float(x) for x in np.geomspace(lo, hi, count)]


@dataclass(frozen=True)
class ExperimentConfig:
    depth: int = 3
    encoding: str = "binary"
    train: TrainConfig = field(default_factory=TrainConfig)
    sgld: SGLDConfig = field(default_factory=SGLDConfig)
    # sweep ranges as (min, max, count) on a log scale
    sweep_inv_temp: tuple = (1e1, 1e4, 3)
    sweep_localization: tuple = (1e-2, 1e6, 3)
    sweep_step: tuple = (1e-7, 1e-2, 3)
    sweep_checkpoint_every: int = 100
    sweep_max_epoch: int = 3000
    gamma_rel: float = 0.1
    classical_kind: str = "gnh"
    epsilon: float = -0.1
    gap_tol: float = 1e-6
    loo_evaluate: str = "masked"
    window_duration: int = 100
    window_every: int = 200
    mds_dims: int = 2
    branch_threshold: float = 0.5
    methods: tuple = ("bif", "analytic", "loo")
    pairs: tuple = (("dog", "cat"), ("dog", "sparrow"))
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1

    def validate(self) -> "ExperimentConfig":
        def need(ok: bool, name: str, rng: str, val) -> None:
            if not ok:
                raise ConfigError(f"{name} = {val!r} is out of range; valid range: {rng}")

        need(0 <= self.depth <= MAX_DEPTH, "dataset.depth", f"0..{MAX_DEPTH}", self.depth)
        need(self.encoding in ("binary", "signed"), "dataset.encoding", "binary | signed", self.encoding)
        for key in ("sweep_inv_temp", "sweep_localization", "sweep_step"):
            lo, hi, n = getattr(self, key)
            need(lo > 0 and hi >= lo and n >= 1, f"sweep.{key[6:]}", "0 < min <= max, count >= 1", (lo, hi, n))
        need(self.sweep_checkpoint_every >= 1, "sweep.checkpoint_every", ">= 1", self.sweep_checkpoint_every)
        need(1 <= self.sweep_max_epoch, "sweep.max_epoch", ">= 1", self.sweep_max_epoch)
        need(self.classical_kind in ("hessian", "gnh"), "classical.kind", "hessian | gnh", self.classical_kind)
        lo_g = 0.0 if self.classical_kind == "gnh" else math.nextafter(0.0, 1.0)
        need(self.gamma_rel >= lo_g, "classical.gamma_rel", "> 0 (hessian) or >= 0 (gnh)", self.gamma_rel)
        need(abs(self.epsilon) <= 0.5, "analytic.epsilon", "[-0.5, 0.5]", self.epsilon)
        need(self.gap_tol > 0, "analytic.gap_tol", "> 0", self.gap_tol)
        need(self.loo_evaluate in ("masked", "original"), "loo.evaluate", "masked | original", self.loo_evaluate)
        need(self.window_duration >= 0, "loo.window_duration", ">= 0", self.window_duration)
        need(self.window_duration <= self.train.epochs, "loo.window_duration", f"<= train.epochs ({self.train.epochs})", self.window_duration)
        need(self.window_every >= 1, "loo.window_every", ">= 1", self.window_every)
        need(1 <= self.mds_dims <= 2**self.depth - 1, "mds.dims", f"1..{2**self.depth - 1}", self.mds_dims)
        need(self.branch_threshold >= 0, "mds.threshold", ">= 0", self.branch_threshold)
        need(len(self.methods) > 0, "experiment.methods", f"nonempty subset of {METHOD_NAMES}", self.methods)
        for m in self.methods:
            need(m in METHOD_NAMES, "experiment.methods", f"subset of {METHOD_NAMES}", m)
        need(self.threads >= 1, "experiment.threads", ">= 1", self.threads)
        need(self.sgld.batch <= 2**self.depth, "sgld.batch", f"1..{2**self.depth}", self.sgld.batch)
        return self

    @property
    def sweep_grid(self) -> list[tuple[float, float, float]]:
        """All ``(inv_temp, localization, step)`` combinations."""
        return [
            (b, g, e)
            for b in log_grid(*self.sweep_inv_temp)
            for g in log_grid(*self.sweep_localization)
            for e in log_grid(*self.sweep_step)
        ]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(
            self,
            seed=seed,
            train=replace(self.train, seed=seed),
            sgld=replace(self.sgld, seed=seed),
        )


def _grid(text: str, name: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"{name} must be 'min, max, count', got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError:
        raise ConfigError(f"{name} must be 'min, max, count', got {text!r}") from None


def _typed(dc_type, section: configparser.SectionProxy, name: str, base):
    kw = {}
    for f in fields(dc_type):
        if f.name in section:
            raw = section[f.name]
            try:
                kw[f.name] = int(raw) if isinstance(getattr(base, f.name), int) else float(raw)
            except ValueError:
                raise ConfigError(f"{name}.{f.name} = {raw!r} is not a number") from None
    unknown = set(section) - {f.name for f in fields(dc_type)} - {"n_inv_temp"}
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path: Path | str | None = None, *, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a config file; ``None`` gives the defaults."""
    cfg = ExperimentConfig()
    cp = configparser.ConfigParser()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
    known = {"dataset", "train", "sgld", "sweep", "classical", "analytic", "loo", "mds", "experiment"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")

    kw: dict = {}
    try:
        if cp.has_section("dataset"):
            d = cp["dataset"]
            kw["depth"] = d.getint("depth", cfg.depth)
            kw["encoding"] = d.get("encoding", cfg.encoding)
        if cp.has_section("train"):
            kw["train"] = _typed(TrainConfig, cp["train"], "train", cfg.train)
        if cp.has_section("sgld"):
            s = _typed(SGLDConfig, cp["sgld"], "sgld", cfg.sgld)
            if "n_inv_temp" in cp["sgld"]:
                # n * beta as reported for large datasets; divide by n here
                n = 2 ** kw.get("depth", cfg.depth)
                s = replace(s, inv_temp=float(cp["sgld"]["n_inv_temp"]) / n)
            kw["sgld"] = s
        if cp.has_section("sweep"):
            w = cp["sweep"]
            for key in ("inv_temp", "localization", "step"):
                if key in w:
                    kw[f"sweep_{key}"] = _grid(w[key], f"sweep.{key}")
            kw["sweep_checkpoint_every"] = w.getint("checkpoint_every", cfg.sweep_checkpoint_every)
            kw["sweep_max_epoch"] = w.getint("max_epoch", cfg.sweep_max_epoch)
        if cp.has_section("classical"):
            c = cp["classical"]
            kw["gamma_rel"] = c.getfloat("gamma_rel", cfg.gamma_rel)
            kw["classical_kind"] = c.get("kind", cfg.classical_kind)
        if cp.has_section("analytic"):
            a = cp["analytic"]
            kw["epsilon"] = a.getfloat("epsilon", cfg.epsilon)
            kw["gap_tol"] = a.getfloat("gap_tol", cfg.gap_tol)
        if cp.has_section("loo"):
            lo = cp["loo"]
            kw["loo_evaluate"] = lo.get("evaluate", cfg.loo_evaluate)
            kw["window_duration"] = lo.getint("window_duration", cfg.window_duration)
            kw["window_every"] = lo.getint("window_every", cfg.window_every)
        if cp.has_section("mds"):
            m = cp["mds"]
            kw["mds_dims"] = m.getint("dims", cfg.mds_dims)
            kw["branch_threshold"] = m.getfloat("threshold", cfg.branch_threshold)
        if cp.has_section("experiment"):
            e = cp["experiment"]
            if "methods" in e:
                kw["methods"] = tuple(x.strip() for x in e["methods"].split(",") if x.strip())
            if "pairs" in e:
                pairs = []
                for item in e["pairs"].split(","):
                    if not item.strip():
                        continue
                    if ":" not in item:
                        raise ConfigError(f"experiment.pairs entries must be 'source:query', got {item.strip()!r}")
                    src, q = item.split(":", 1)
                    pairs.append((src.strip(), q.strip()))
                kw["pairs"] = tuple(pairs)
            kw["output_dir"] = e.get("output_dir", cfg.output_dir)
            kw["seed"] = e.getint("seed", cfg.seed)
            kw["threads"] = e.getint("threads", cfg.threads)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None

    cfg = replace(cfg, **kw)
    if "seed" in kw:
        cfg = cfg.with_seed(kw["seed"])
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        cfg = cfg.with_seed(v) if k == "seed" else replace(cfg, **{k: v})
    env = os.environ.get("STAGEWISE_OUT")
    if env and not (overrides or {}).get("output_dir"):
        cfg = replace(cfg, output_dir=env)
    return cfg.validate()

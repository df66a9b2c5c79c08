"""Config-driven Monte-Carlo sweeps and bound tables.

An experiment is described by an INI file with sections ``[scenario]``,
``[data]``, ``[estimator]``, ``[sweep]``, ``[run]`` and ``[output]``. Each run
``r`` draws its data from ``default_rng([seed, r])``, so results do not
depend on how runs are spread over worker processes. All losses see the
same snapshots within a run.
"""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .datagen import SCENARIOS, NoiseKind, NoiseModel, Scenario, asnr_to_sigma2, generate
from .estimator import EstimatorConfig, estimate_doas
from .geometry import ArrayGeometry, build_dictionary
from .loss import LossKind, LossSpec
from .metrics import capped_errors, crb_ces, crb_gauss, psi1_mvt

logger = logging.getLogger(__name__)

WORKERS_ENV = "ROBUSTDOA_WORKERS"
CSV_HEADER = ("sweep_value", "loss", "rmse_deg", "mean_iters", "crb_gauss_deg",
              "crb_model_deg", "runs_ok", "seconds_per_run")
CRB_HEADER = ("sweep_value", "crb_gauss_deg", "crb_model_deg")

PROFILES = {
    "desk": {"grid_points": 1801, "runs": 100},
    "full": {"grid_points": 18001, "runs": 250},
}

_SECTIONS = {
    "scenario": {"name", "doas", "powers", "correlation"},
    "data": {"model", "nu", "epsilon", "lam", "lam_mode", "n_sensors", "spacing", "snapshots",
             "grid_points", "offgrid"},
    "estimator": {"losses", "q", "nu_loss", "stepsize", "conv_window", "max_iters", "gamma_range",
                  "snr_max", "gamma_floor_init"},
    "sweep": {"variable", "values", "start", "stop", "step", "asnr"},
    "run": {"runs", "seed", "timing"},
    "output": {"path"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    noise_kind: NoiseKind = NoiseKind.GAUSSIAN
    nu_data: float = 2.1
    epsilon: float = 0.05
    lam: float = 10.0
    lam_mode: str = "total"
    n_sensors: int = 20
    spacing: float = 0.5
    n_snapshots: int = 25
    grid_points: int = 1801
    offgrid: bool = False
    losses: tuple = ("gauss", "huber", "mvt", "tyler")
    q: float = 0.9
    nu_loss: float = 2.1
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sweep_variable: str = "asnr"
    sweep_values: tuple = (30.0,)
    asnr: float = 30.0
    n_runs: int = 100
    seed: int = 1
    timing: bool = False
    output: str | None = None

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("[run] runs: must be >= 1")
        if not self.sweep_values:
            raise ConfigError("[sweep]: sweep is empty")
        if self.sweep_variable not in ("asnr", "lambda"):
            raise ConfigError(f"[sweep] variable: expected asnr or lambda, got {self.sweep_variable!r}")
        if self.lam_mode not in ("total", "background"):
            raise ConfigError(f"[data] lam_mode: expected total or background, got {self.lam_mode!r}")
        if self.scenario.n_sources >= self.n_sensors:
            raise ConfigError("[scenario]: need fewer sources than sensors")
        if self.n_snapshots < 1:
            raise ConfigError("[data] snapshots: must be >= 1")
        if not self.losses:
            raise ConfigError("[estimator] losses: no loss given")
        for name in self.losses:
            if name not in {k.value for k in LossKind}:
                raise ConfigError(f"[estimator] losses: unknown loss {name!r}")

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_sensors, self.spacing)

    def loss_specs(self) -> list:
        return [LossSpec.from_name(n, self.n_sensors, q=self.q, nu_loss=self.nu_loss)
                for n in self.losses]

    def noise_model(self, sweep_value: float) -> NoiseModel:
        """Data model at one sweep point; ``sigma2`` follows the ASNR convention."""
        asnr = sweep_value if self.sweep_variable == "asnr" else self.asnr
        lam = sweep_value if self.sweep_variable == "lambda" else self.lam
        sigma2 = asnr_to_sigma2(asnr, self.n_sensors)
        if self.noise_kind is NoiseKind.GAUSSIAN:
            return NoiseModel.gaussian(sigma2)
        if self.noise_kind is NoiseKind.MVT:
            return NoiseModel.mvt(sigma2, self.nu_data)
        if self.lam_mode == "background":
            return NoiseModel.eps_contaminated_background(sigma2, self.epsilon, lam)
        return NoiseModel.eps_contaminated(sigma2, self.epsilon, lam)


@dataclass
class ResultRow:
    sweep_value: float
    loss: str
    rmse_deg: float
    mean_iters: float
    crb_gauss_deg: float
    crb_model_deg: float
    runs_ok: int
    seconds_per_run: float
    runs_converged: int = 0
    max_iters_seen: int = 0


# --------------------------------------------------------------------------- parsing

def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _sweep_values(cp) -> tuple:
    if cp.has_option("sweep", "values"):
        return _get(cp, "sweep", "values", _floats, ())
    start = _get(cp, "sweep", "start", float, None)
    stop = _get(cp, "sweep", "stop", float, None)
    step = _get(cp, "sweep", "step", float, None)
    if start is None:
        return (30.0,)
    if stop is None:
        return (start,)
    if step is None or not step > 0:
        raise ConfigError("[sweep] step: must be positive when start and stop are given")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if count < 1:
        raise ConfigError("[sweep]: stop lies below start")
    return tuple(round(start + i * step, 12) for i in range(count))


def parse_config(text: str, profile: str = "desk", source: str = "<config>") -> ExperimentConfig:
    """Parse INI text into an :class:`ExperimentConfig`.

    Profile values (grid size, run count) are defaults that explicit
    config entries override.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp.options(section)) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"[{section}]: unknown field(s) {', '.join(sorted(unknown))}")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    prof = PROFILES[profile]

    try:
        name = _get(cp, "scenario", "name", str.strip, None)
        if cp.has_option("scenario", "doas"):
            doas = _get(cp, "scenario", "doas", _floats, ())
            powers = _get(cp, "scenario", "powers", _floats, tuple(1.0 / len(doas) for _ in doas))
            scenario = Scenario(doas, powers)
        else:
            name = name or "single"
            if name not in SCENARIOS:
                raise ConfigError(f"[scenario] name: unknown scenario {name!r}; "
                                  f"expected one of {', '.join(SCENARIOS)}")
            scenario = SCENARIOS[name]
        scenario = scenario.with_correlation(_get(cp, "scenario", "correlation", float, 0.0))

        model = _get(cp, "data", "model", str.strip, "gaussian")
        try:
            kind = NoiseKind(model.lower())
        except ValueError:
            raise ConfigError(f"[data] model: unknown data model {model!r}") from None

        est = EstimatorConfig(
            stepsize=_get(cp, "estimator", "stepsize", float, 1.0),
            conv_window=_get(cp, "estimator", "conv_window", int, 10),
            max_iters=_get(cp, "estimator", "max_iters", int, 1200),
            gamma_range=_get(cp, "estimator", "gamma_range", float, 1e-3),
            snr_max=_get(cp, "estimator", "snr_max", float, 1e6),
            gamma_floor_init=_get(cp, "estimator", "gamma_floor_init", float, 1e-3),
        )
        losses = _get(cp, "estimator", "losses",
                      lambda s: tuple(v.strip().lower() for v in s.split(",") if v.strip()),
                      ("gauss", "huber", "mvt", "tyler"))
        return ExperimentConfig(
            scenario=scenario,
            noise_kind=kind,
            nu_data=_get(cp, "data", "nu", float, 2.1),
            epsilon=_get(cp, "data", "epsilon", float, 0.05),
            lam=_get(cp, "data", "lam", float, 10.0),
            lam_mode=_get(cp, "data", "lam_mode", str.strip, "total"),
            n_sensors=_get(cp, "data", "n_sensors", int, 20),
            spacing=_get(cp, "data", "spacing", float, 0.5),
            n_snapshots=_get(cp, "data", "snapshots", int, 25),
            grid_points=_get(cp, "data", "grid_points", int, prof["grid_points"]),
            offgrid=_get(cp, "data", "offgrid", _bool, False),
            losses=losses,
            q=_get(cp, "estimator", "q", float, 0.9),
            nu_loss=_get(cp, "estimator", "nu_loss", float, 2.1),
            estimator=est,
            sweep_variable=_get(cp, "sweep", "variable", str.strip, "asnr").lower(),
            sweep_values=_sweep_values(cp),
            asnr=_get(cp, "sweep", "asnr", float, 30.0),
            n_runs=_get(cp, "run", "runs", int, prof["runs"]),
            seed=_get(cp, "run", "seed", int, 1),
            timing=_get(cp, "run", "timing", _bool, False),
            output=_get(cp, "output", "path", str.strip, None),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        # invariant violations raised by the domain dataclasses
        raise ConfigError(str(exc)) from None


def load_config(path, profile: str = "desk") -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, profile=profile, source=str(path))


# --------------------------------------------------------------------------- runs

@lru_cache(maxsize=4)
def _dictionary(n_sensors: int, spacing: float, grid_points: int):
    return build_dictionary(ArrayGeometry(n_sensors, spacing), grid_points)


def _run_scenario(config: ExperimentConfig, rng: np.random.Generator) -> Scenario:
    if not config.offgrid:
        return config.scenario
    # jitter every DOA uniformly within one grid cell
    res = 180.0 / (config.grid_points - 1)
    jitter = rng.uniform(-0.5 * res, 0.5 * res, config.scenario.n_sources)
    doas = np.clip(np.asarray(config.scenario.doas_degrees) + jitter, -90.0, 90.0)
    return config.scenario.with_doas(doas)


def simulate_run(config: ExperimentConfig, sweep_value: float, run_index: int) -> list:
    """One Monte-Carlo run for every loss on shared data.

    Returns per loss ``(ok, sum_sq, n_err, iterations, converged, seconds)``.
    """
    rng = np.random.default_rng([config.seed, run_index])
    scenario = _run_scenario(config, rng)
    dictionary = _dictionary(config.n_sensors, config.spacing, config.grid_points)
    Y = generate(scenario, dictionary, config.noise_model(sweep_value), config.n_snapshots, rng)
    out = []
    for loss in config.loss_specs():
        t0 = time.perf_counter()
        try:
            res = estimate_doas(Y, dictionary, scenario.n_sources, loss, config.estimator)
        except (np.linalg.LinAlgError, ValueError, ArithmeticError, FloatingPointError) as exc:
            logger.warning("run %d (%s, %g) failed: %s", run_index, loss.name, sweep_value, exc)
            out.append((False, 0.0, 0, 0, False, 0.0))
            continue
        err = capped_errors(res.doas_degrees, scenario.doas_degrees)
        out.append((True, float(np.sum(err ** 2)), err.size, res.iterations, res.converged,
                    time.perf_counter() - t0))
    return out


def _simulate_task(args):
    return simulate_run(*args)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r}: expected an integer") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def _map_runs(tasks, workers: int):
    if workers == 1:
        return [_simulate_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves task order, so the reduction below is order-fixed
        return list(pool.map(_simulate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def bounds_at(config: ExperimentConfig, sweep_value: float) -> tuple:
    """(Gaussian, model) CRB at one sweep point, in RMSE-equivalent degrees.

    The Gaussian bound uses the total noise variance. For MVT data the model
    bound is the CES bound; for contaminated data it is the same shifted
    Gaussian bound.
    """
    noise = config.noise_model(sweep_value)
    geo = config.geometry
    sc = config.scenario
    k = sc.n_sources
    try:
        g = crb_gauss(sc, geo, noise.sigma2, config.n_snapshots)
        if noise.kind is NoiseKind.MVT:
            m = crb_ces(sc, geo, noise.sigma2, config.n_snapshots, psi1_mvt(config.n_sensors, noise.nu_data))
        else:
            m = g
    except np.linalg.LinAlgError:
        return math.nan, math.nan
    return math.sqrt(g / k), math.sqrt(m / k)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> list:
    """Run the sweep and return one :class:`ResultRow` per (sweep value, loss).

    Rows come in sweep order, then in the config's loss order. Failed runs
    are left out of the RMSE and counted through ``runs_ok``.
    """
    workers = worker_count() if workers is None else workers
    rows = []
    for value in config.sweep_values:
        tasks = [(config, value, r) for r in range(config.n_runs)]
        results = _map_runs(tasks, workers)
        crb_g, crb_m = bounds_at(config, value)
        for li, loss in enumerate(config.losses):
            per_loss = [res[li] for res in results]
            ok = [p for p in per_loss if p[0]]
            n_err = sum(p[2] for p in ok)
            sum_sq = math.fsum(p[1] for p in ok)
            rows.append(ResultRow(
                sweep_value=value,
                loss=loss,
                rmse_deg=math.sqrt(sum_sq / n_err) if n_err else math.nan,
                mean_iters=math.fsum(p[3] for p in ok) / len(ok) if ok else math.nan,
                crb_gauss_deg=crb_g,
                crb_model_deg=crb_m,
                runs_ok=len(ok),
                seconds_per_run=(math.fsum(p[5] for p in ok) / len(ok)
                                 if config.timing and ok else math.nan),
                runs_converged=sum(1 for p in ok if p[4]),
                max_iters_seen=max((p[3] for p in ok), default=0),
            ))
    return rows


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "nan" if math.isnan(x) else f"{x:.10g}"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_HEADER])
    return buf.getvalue()


def run_crb(config: ExperimentConfig) -> str:
    """CSV of the bounds over the sweep (RMSE-equivalent degrees)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CRB_HEADER)
    for value in config.sweep_values:
        g, m = bounds_at(config, value)
        w.writerow([_fmt(value), _fmt(g), _fmt(m)])
    return buf.getvalue()


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(config, **changes)

"""Experiment configuration, sweep orchestration, CSV and plot output.

A config is a YAML document; anything it leaves out falls back to
``DEFAULTS`` (and to the per-experiment arm and grid defaults below).
See ``configs/`` in the repository for annotated examples.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import analysis
from .attribute_privacy import (
    ConstantMechanism,
    IdentityReportMechanism,
    TulapReportMechanism,
    miniature,
    pufferfish_verify,
    violation_witness,
)
from .behaviors import BehaviorParams, Rho
from .distinguishing import ABTest, GameConfig, estimate_advantage, find_sample_complexity
from .errors import CeilingError, ConfigurationError, ParseError
from .feature_space import (
    CorrelatedBernoulliSpec,
    FeatureVector,
    ar1_correlation,
    derive_alternate,
    equicorrelation,
    materialize,
    total_variation,
)

CSV_COLUMNS = ("experiment", "arm", "tv_distance", "param_name", "param_value", "minimal_n", "power",
               "level", "seed", "config_hash")
KINDS = ("tv_sweep", "epsilon_sweep", "alpha_e_sweep", "alpha_t_sweep", "bounds", "audit")
SWEPT_PARAM = {"epsilon_sweep": "epsilon", "alpha_e_sweep": "alpha_e", "alpha_t_sweep": "alpha_t"}

DEFAULTS = {
    "level": 0.05,
    "target_power": 0.8,
    "trials_per_point": 400,
    "ell": 8,
    "rounds_per_user": 1,
    "test_bit": 0,
    "null_marginal": 0.5,
    "other_marginal": 0.05,
    "correlation": {"ar1": 0.3},
    "ad_base": None,
    "marginal_grid": [0.55, 0.6375, 0.725, 0.8125, 0.9],
    "alt_marginal": 0.9,
    "ceiling": 10_000_000,
    "workers": 1,
    "output": None,
}

DEFAULT_ARMS = {
    "tv_sweep": {
        "baseline": {"kind": "baseline"},
        "non-private": {"alpha_t": 1.0, "alpha_e": 0.05},
        "private": {"alpha_t": 0.5, "alpha_e": 0.05, "epsilon": 0.5},
    },
    "epsilon_sweep": {"private": {"alpha_t": 0.5, "alpha_e": 0.05, "epsilon": 0.5}},
    "alpha_e_sweep": {"non-private": {"alpha_t": 1.0, "alpha_e": 0.05}},
    "alpha_t_sweep": {"non-private": {"alpha_t": 1.0, "alpha_e": 0.05}},
}
DEFAULT_ARMS["bounds"] = DEFAULT_ARMS["tv_sweep"]
DEFAULT_ARMS["audit"] = DEFAULT_ARMS["tv_sweep"]

DEFAULT_PARAM_VALUES = {
    "epsilon_sweep": [0.1, 0.5, 0.9],
    "alpha_e_sweep": [0.01, 0.05, 0.2],
    "alpha_t_sweep": [0.2, 0.6, 1.0],
}


@dataclass(frozen=True)
class ArmSpec:
    name: str
    kind: str
    behavior: BehaviorParams

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "ArmSpec":
        d = dict(d or {})
        kind = d.pop("kind", "ecosystem")
        if kind not in ("baseline", "ecosystem"):
            raise ConfigurationError(f"arm {name!r}: kind must be baseline or ecosystem")
        rho = d.pop("rho_mask", ())
        unknown = set(d) - {"alpha_t", "alpha_e", "alpha_a", "epsilon"}
        if unknown:
            raise ConfigurationError(f"arm {name!r}: unknown keys {sorted(unknown)}")
        return cls(name, kind, BehaviorParams(rho=Rho(tuple(rho)), **d))

    def to_dict(self) -> dict:
        b = self.behavior
        out = {"kind": self.kind, "alpha_t": b.alpha_t, "alpha_e": b.alpha_e, "alpha_a": b.alpha_a,
               "epsilon": b.epsilon, "rho_mask": list(b.rho.mask)}
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int
    ell: int
    test_bit: int
    marginals: tuple
    correlation: tuple
    ad_base: str
    marginal_grid: tuple
    alt_marginal: float
    param_values: tuple
    arms: tuple
    level: float
    target_power: float
    trials_per_point: int
    rounds_per_user: int
    ceiling: int
    workers: int = 1
    output: Optional[str] = None

    @property
    def param_name(self) -> str:
        return SWEPT_PARAM.get(self.experiment, "b_test_marginal")

    @property
    def null_spec(self) -> CorrelatedBernoulliSpec:
        return CorrelatedBernoulliSpec(self.marginals, self.correlation)

    @property
    def ab(self) -> ABTest:
        return ABTest.build(self.ell, self.test_bit, FeatureVector.from_string(self.ad_base))

    def alternate(self, marginal: float) -> CorrelatedBernoulliSpec:
        return derive_alternate(self.null_spec, self.test_bit, marginal)

    def arm(self, name: str) -> ArmSpec:
        for a in self.arms:
            if a.name == name:
                return a
        raise ConfigurationError(f"no arm named {name!r}")

    def game(self, arm: ArmSpec, alt_marginal: float, n: int = 1, behavior: Optional[BehaviorParams] = None) -> GameConfig:
        return GameConfig(
            n=n, d0=self.null_spec, d1=self.alternate(alt_marginal), ab=self.ab,
            behavior=behavior or arm.behavior, rounds_per_user=self.rounds_per_user, level=self.level,
            master_seed=self.master_seed, arm=arm.kind,
        )

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("arms", "workers", "output")}
        d["marginals"] = list(self.marginals)
        d["correlation"] = [list(r) for r in self.correlation]
        d["marginal_grid"] = list(self.marginal_grid)
        d["param_values"] = list(self.param_values)
        d["arms"] = {a.name: a.to_dict() for a in self.arms}
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _correlation(spec, ell: int) -> tuple:
    if isinstance(spec, dict):
        if set(spec) == {"ar1"}:
            m = ar1_correlation(ell, float(spec["ar1"]))
        elif set(spec) == {"equicorrelation"}:
            m = equicorrelation(ell, float(spec["equicorrelation"]))
        else:
            raise ConfigurationError("correlation must be a matrix, {ar1: r} or {equicorrelation: r}")
    elif spec is None:
        m = np.eye(ell)
    else:
        m = np.asarray(spec, dtype=float)
        if m.shape != (ell, ell):
            raise ConfigurationError(f"correlation matrix must be {ell}x{ell}")
    return tuple(tuple(float(x) for x in row) for row in m)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a config mapping and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    known = set(DEFAULTS) | {"experiment", "master_seed", "marginals", "param_values", "arms"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    kind = raw.get("experiment", "tv_sweep")
    if kind not in KINDS:
        raise ConfigurationError(f"experiment must be one of {KINDS}")
    if raw.get("master_seed") is None:
        raise ConfigurationError("master_seed is mandatory")
    c = {**DEFAULTS, **{k: v for k, v in raw.items() if v is not None}}
    ell = int(c["ell"])
    test_bit = int(c["test_bit"])
    if not 0 <= test_bit < ell:
        raise ConfigurationError("test_bit must lie in [0, ell)")
    marginals = c.get("marginals")
    if marginals is None:
        marginals = [float(c["other_marginal"])] * ell
        marginals[test_bit] = float(c["null_marginal"])
    if len(marginals) != ell:
        raise ConfigurationError(f"marginals must have ell = {ell} entries")
    ad_base = c["ad_base"] or "1" * ell
    if len(ad_base) != ell or set(ad_base) - {"0", "1"}:
        raise ConfigurationError("ad_base must be an ell-bit 0/1 string")
    grid = tuple(float(x) for x in c["marginal_grid"])
    if not grid:
        raise ConfigurationError("marginal_grid must not be empty")
    values = tuple(float(x) for x in c.get("param_values") or DEFAULT_PARAM_VALUES.get(kind, ()))
    if kind in SWEPT_PARAM and not values:
        raise ConfigurationError("param_values must not be empty")
    arms_raw = c.get("arms") or DEFAULT_ARMS[kind]
    arms = tuple(ArmSpec.from_dict(name, spec) for name, spec in arms_raw.items())
    if not arms:
        raise ConfigurationError("at least one arm is required")
    if kind in SWEPT_PARAM:
        for arm in arms:
            for v in values:
                _with_param(arm.behavior, SWEPT_PARAM[kind], v)  # raises on invalid values
    cfg = ExperimentConfig(
        experiment=kind, master_seed=int(c["master_seed"]), ell=ell, test_bit=test_bit,
        marginals=tuple(float(x) for x in marginals), correlation=_correlation(c["correlation"], ell),
        ad_base=ad_base, marginal_grid=grid, alt_marginal=float(c["alt_marginal"]), param_values=values,
        arms=arms, level=float(c["level"]), target_power=float(c["target_power"]),
        trials_per_point=int(c["trials_per_point"]), rounds_per_user=int(c["rounds_per_user"]),
        ceiling=int(c["ceiling"]), workers=int(c["workers"]), output=c["output"],
    )
    cfg.null_spec  # validates marginals and correlation
    if not 0.0 < cfg.level < 1.0 or not 0.5 < cfg.target_power < 1.0:
        raise ConfigurationError("level must lie in (0, 1) and target_power in (0.5, 1)")
    if cfg.trials_per_point < 10 or cfg.workers < 1:
        raise ConfigurationError("trials_per_point must be >= 10 and workers >= 1")
    return cfg


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_dict(raw)


def _with_param(behavior: BehaviorParams, name: str, value: float) -> BehaviorParams:
    d = {"alpha_t": behavior.alpha_t, "alpha_e": behavior.alpha_e, "alpha_a": behavior.alpha_a,
         "epsilon": behavior.epsilon, "rho": behavior.rho}
    d[name] = value
    return BehaviorParams(**d)


# Sweeps ----------------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    experiment: str
    arm: str
    tv: float
    param_name: str
    param_value: float
    game: GameConfig
    stream: int
    target_power: float
    trials: int
    ceiling: int
    config_hash: str


def _run_task(task: _Task) -> dict:
    row = {
        "experiment": task.experiment, "arm": task.arm, "tv_distance": f"{task.tv:.6f}",
        "param_name": task.param_name, "param_value": f"{task.param_value:g}",
        "level": f"{task.game.level:g}", "seed": str(task.game.master_seed), "config_hash": task.config_hash,
    }
    try:
        sc = find_sample_complexity(task.game, task.target_power, task.trials, stream=task.stream,
                                    ceiling=task.ceiling)
        row["minimal_n"], row["power"] = str(sc.minimal_n), f"{sc.power_at_n:.4f}"
    except CeilingError:
        row["minimal_n"], row["power"] = f">{task.ceiling}", ""
    return row


def _execute(tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        rows = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_task, tasks))
    return sorted(rows, key=lambda r: (r["experiment"], r["arm"], float(r["param_value"])))


def _tv_tasks(cfg: ExperimentConfig) -> list:
    # all arms at a grid point share the random stream keyed by the grid index
    if cfg.experiment != "tv_sweep":
        raise ConfigurationError("run_tv_sweep needs a tv_sweep config")
    if len(cfg.marginal_grid) < 3:
        raise ConfigurationError("a TV sweep needs at least 3 grid points")
    tasks = []
    for g, m in enumerate(cfg.marginal_grid):
        tv = total_variation(_materialized(cfg.null_spec), _materialized(cfg.alternate(m)))
        for arm in cfg.arms:
            tasks.append(_Task(cfg.experiment, arm.name, tv, cfg.param_name, m, cfg.game(arm, m), g,
                               cfg.target_power, cfg.trials_per_point, cfg.ceiling, cfg.config_hash))
    return tasks


def _param_tasks(cfg: ExperimentConfig) -> list:
    # every (value, arm) pair shares stream 0 at the fixed alternate marginal
    if cfg.experiment not in SWEPT_PARAM:
        raise ConfigurationError("run_param_sweep needs an epsilon, alpha_e or alpha_t sweep config")
    name = SWEPT_PARAM[cfg.experiment]
    tv = total_variation(_materialized(cfg.null_spec), _materialized(cfg.alternate(cfg.alt_marginal)))
    tasks = []
    for v in cfg.param_values:
        for arm in cfg.arms:
            if arm.kind == "baseline":
                continue
            game = cfg.game(arm, cfg.alt_marginal, behavior=_with_param(arm.behavior, name, v))
            tasks.append(_Task(cfg.experiment, arm.name, tv, name, v, game, 0, cfg.target_power,
                               cfg.trials_per_point, cfg.ceiling, cfg.config_hash))
    return tasks


def run_tv_sweep(cfg: ExperimentConfig) -> list:
    """One sample-complexity search per (marginal grid point, arm)."""
    return _execute(_tv_tasks(cfg), cfg.workers)


def run_param_sweep(cfg: ExperimentConfig) -> list:
    """One search per (swept value, arm) at the fixed alternate marginal."""
    return _execute(_param_tasks(cfg), cfg.workers)


def reproduce_row(cfg: ExperimentConfig, row: dict) -> dict:
    """Rerun the single search behind one CSV row; the config must hash to the row's config_hash."""
    if row["config_hash"] != cfg.config_hash or int(row["seed"]) != cfg.master_seed:
        raise ConfigurationError("row was produced by a different config or seed")
    tasks = _tv_tasks(cfg) if cfg.experiment == "tv_sweep" else _param_tasks(cfg)
    for t in tasks:
        if t.arm == row["arm"] and f"{t.param_value:g}" == row["param_value"]:
            return _run_task(t)
    raise ConfigurationError(f"no task matches arm {row['arm']!r} at {row['param_value']}")


def run_experiment(cfg: ExperimentConfig) -> list:
    if cfg.experiment == "tv_sweep":
        return run_tv_sweep(cfg)
    if cfg.experiment in SWEPT_PARAM:
        return run_param_sweep(cfg)
    raise ConfigurationError(f"{cfg.experiment} does not produce sweep rows")


def _materialized(spec):
    return materialize(spec)


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in CSV_COLUMNS})
    return buf.getvalue()


def write_csv(rows: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


def read_csv(path) -> list:
    """Parse a sweep CSV, raising ParseError with the offending line number."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty CSV", 1)
    header = next(csv.reader([lines[0]]))
    if tuple(header) != CSV_COLUMNS:
        raise ParseError(f"expected header {','.join(CSV_COLUMNS)}", 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = next(csv.reader([line]))
        if len(fields) != len(CSV_COLUMNS):
            raise ParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(fields)}", lineno)
        row = dict(zip(CSV_COLUMNS, fields))
        try:
            float(row["tv_distance"])
            float(row["param_value"])
        except ValueError as exc:
            raise ParseError(f"non-numeric value: {exc}", lineno) from exc
        if not (row["minimal_n"].isdigit() or row["minimal_n"].startswith(">")):
            raise ParseError(f"bad minimal_n {row['minimal_n']!r}", lineno)
        rows.append(row)
    if not rows:
        raise ParseError("CSV has a header but no rows", 2)
    return rows


# Plot ------------------------------------------------------------------------

def emit_plot(csv_path, out_path) -> Path:
    """Line chart of minimal_n (log scale) against TV or the swept parameter, one line per arm."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv(csv_path)
    experiment = rows[0]["experiment"]
    x_key = "tv_distance" if experiment == "tv_sweep" else "param_value"
    arms = sorted({r["arm"] for r in rows})
    with matplotlib.rc_context({"svg.hashsalt": "adleak", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for arm in arms:
            pts = sorted((float(r[x_key]), int(r["minimal_n"])) for r in rows
                         if r["arm"] == arm and r["minimal_n"].isdigit())
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=arm, gid=f"series-{arm}")
        ax.set_yscale("log")
        ax.set_xlabel("total variation distance" if x_key == "tv_distance" else rows[0]["param_name"])
        ax.set_ylabel("sample complexity (users)")
        ax.set_title(experiment)
        ax.legend()
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out_path


# Bounds, audit and single games -------------------------------------------------

def bounds_report(cfg: ExperimentConfig, beta: float = analysis.DEFAULT_BETA) -> list:
    """Hellinger bounds and expansion factor at each grid marginal.

    Uses the first identity-report ecosystem arm as the non-private
    ecosystem and the first DP arm (if any) for alpha_t' and epsilon.
    """
    eco = [a for a in cfg.arms if a.kind == "ecosystem"]
    nonpriv = next((a for a in eco if not a.behavior.private), None)
    priv = next((a for a in eco if a.behavior.private), None)
    if nonpriv is None:
        raise ConfigurationError("bounds need an identity-report ecosystem arm")
    ads = cfg.ab.active_ads
    d0 = _materialized(cfg.null_spec)
    out = []
    for m in cfg.marginal_grid:
        d1 = _materialized(cfg.alternate(m))
        r0 = analysis.engagement_output_distribution(d0, ads, nonpriv.behavior)
        r1 = analysis.engagement_output_distribution(d1, ads, nonpriv.behavior)
        eps = priv.behavior.epsilon if priv else None
        b = analysis.sc_bounds(r0, r1, beta, eps)
        entry = {"b_test_marginal": m, "tv_distance": total_variation(d0, d1), "h_squared": b.h_squared,
                 "sc_lower": b.sc_lower, "sc_upper": b.sc_upper, "sc_private_upper": b.sc_private_upper}
        if priv is not None:
            z = analysis.expansion_factor(d0, d1, ads, nonpriv.behavior.alpha_t, priv.behavior.alpha_t)
            entry.update({"K": z.K, "expansion_z": z.z})
        out.append(entry)
    return out


def audit_report(cfg: ExperimentConfig, epsilons=(0.5, 1.0, 2.0), n_records: int = 4,
                 game_n: Optional[int] = None, trials: int = 2000) -> dict:
    """Pufferfish verdicts on the enumerable miniature, plus optional game evidence."""
    eco = [a for a in cfg.arms if a.kind == "ecosystem"]
    nonpriv = next((a for a in eco if not a.behavior.private), None)
    priv = next((a for a in eco if a.behavior.private), None)
    if nonpriv is None:
        raise ConfigurationError("audit needs an identity-report ecosystem arm")
    m1 = cfg.alt_marginal
    mini = miniature(cfg.null_spec, cfg.alternate(m1), cfg.ab, nonpriv.behavior, n=n_records)
    mechanisms = {"identity": IdentityReportMechanism(mini.ab, nonpriv.behavior), "constant": ConstantMechanism()}
    if priv is not None:
        mechanisms["tulap"] = TulapReportMechanism(mini.ab, priv.behavior, priv.behavior.epsilon)
    verdicts = {name: [pufferfish_verify(mech, mini.framework, e).to_dict() for e in epsilons]
                for name, mech in mechanisms.items()}
    out = {"b_test_marginal": m1, "miniature_bits": list(mini.keep), "records": n_records, "verdicts": verdicts}
    if game_n is not None:
        out["game"] = {arm.name: violation_witness(cfg.game(arm, m1, n=game_n), trials).to_dict() for arm in eco}
    return out


def game_report(cfg: ExperimentConfig, arm_name: str, n: int, trials: int) -> dict:
    arm = cfg.arm(arm_name)
    est = estimate_advantage(cfg.game(arm, cfg.alt_marginal, n=n), trials)
    return {"arm": arm_name, "n": n, "b_test_marginal": cfg.alt_marginal, "trials": est.trials,
            "advantage": est.advantage, "half_width_3sigma": est.half_width_3sigma}


def default_config(experiment: str, master_seed: int, **overrides) -> ExperimentConfig:
    return config_from_dict({"experiment": experiment, "master_seed": master_seed, **overrides})


def json_dumps(obj) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, np.generic):
            return o.item()
        return o
    return json.dumps(clean(obj), indent=2, sort_keys=True)


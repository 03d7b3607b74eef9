"""Experiment recipes. Each scenario maps ``(config, seed)`` to metrics and artifact files."""

from __future__ import annotations

import io
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..baselines import AcbfController, AcbfState, CbcController, CbcState, RacbfController, RacbfState
from ..core import ConfigError
from ..dynamics import Trajectory, linear1d, simulate
from ..filter import SafetyFilter, adversarial_f
from ..rl.policy import GaussianPolicy
from ..rl.reinforce import Shield, checkpoint_bytes, train, vehicle_env, write_episode_csv
from ..rl.tabular import default_mdp, unbiasedness_check
from ..uncertainty import TrueActuation, scalar_model, vehicle4d_svd
from . import metrics as M
from .config import ExperimentConfig
from .manifest import write_manifest

log = logging.getLogger(__name__)

WORKERS_ENV = "SAMPLESAFE_WORKERS"

FileData = Union[str, bytes]


@dataclass
class SeedResult:
    seed: int
    metrics: Dict[str, object]
    files: Dict[str, FileData] = field(default_factory=dict)
    rows: List[Dict[str, object]] = field(default_factory=list)


# -- 1-D plant ----------------------------------------------------------------


def _linear_parts(cfg: ExperimentConfig):
    s = cfg.system
    sys, nominal, barrier = linear1d(s.get("a", 1.5), s.get("b", 1.0), s.get("nominal_gain", 1.0), s.get("half_width", 0.2))
    return sys, nominal, barrier


def _scalar_filter(cfg: ExperimentConfig, nominal, barrier) -> SafetyFilter:
    m = cfg.model
    model = scalar_model(m["lambda_hat"], m["lower"], m["upper"])
    # config validation only: the plant gain must be covered by the stated bounds
    TrueActuation([cfg.system.get("b", 1.0)]).check_against(model)
    return SafetyFilter(cfg.filter, model, barrier, nominal)


class _Nominal:
    activated = False

    def __init__(self, law):
        self.law = law

    def __call__(self, w):
        return self.law(w.x_now)


def _x0(cfg: ExperimentConfig) -> np.ndarray:
    x0 = cfg.system.get("x0")
    if x0 is None:
        raise ConfigError("[system] x0 is required for this scenario")
    return np.asarray(x0, dtype=float)


def _traj_metrics(traj: Trajectory, theta: float) -> Dict[str, object]:
    phis = traj.phis
    return {
        "safety_rate": M.safety_rate(phis),
        "violations": M.violations(phis),
        "min_phi": M.min_phi(phis),
        "recovery_time": M.recovery_time(traj.times, phis, theta),
        "activations": int(np.sum(traj.activated)),
    }


def run_filter_1d(cfg: ExperimentConfig, seed: int, with_nominal: bool = True) -> SeedResult:
    """Shared body of the invariance and recovery scenarios: filtered run plus, optionally, the bare nominal run."""
    sys, nominal, barrier = _linear_parts(cfg)
    x0 = _x0(cfg)
    filt = _scalar_filter(cfg, nominal, barrier)
    traj = simulate(sys, cfg.integrator, filt, x0, barrier)
    theta = cfg.filter.theta
    out = _traj_metrics(traj, theta)
    out["phi0"] = barrier.eval(x0)
    out["recovery_bound"] = max(0.0, theta - out["phi0"]) / cfg.filter.eta + 5.0 * cfg.integrator.dt
    files = {"filter.csv": traj.to_csv()}
    if with_nominal:
        nom = simulate(sys, cfg.integrator, _Nominal(nominal), x0, barrier)
        out["nominal_min_phi"] = M.min_phi(nom.phis)
        out["nominal_violations"] = M.violations(nom.phis)
        files["nominal.csv"] = nom.to_csv()
    return SeedResult(seed, out, files)


def _baseline_controllers(cfg: ExperimentConfig) -> Dict[str, Callable]:
    p = cfg.baseline_params
    kw = {"nominal_gain": cfg.system.get("nominal_gain", 1.0), "action_clip": p.get("action_clip")}
    acbf = dict(gamma_rate=p.get("gamma_rate", 5.0), a_known=p.get("a_known", 1.0), barrier_k=p.get("barrier_k", 25.0))
    rob = dict(acbf, nu_tilde=p.get("nu_tilde", 2.0), d_bound=p.get("d_bound", 0.07))
    makers = {
        "acbf": lambda: AcbfController(AcbfState(**acbf), **kw),
        "racbf": lambda: RacbfController(RacbfState(**rob), **kw),
        "racbfs": lambda: RacbfController(RacbfState(**rob), smid_period=p.get("smid_period", 2.5e-3), **kw),
        "cbc": lambda: CbcController(
            CbcState(
                alpha_bound=p.get("cbc_alpha_bound", 5.0),
                beta_low=p.get("cbc_beta_low", 2.5e-6),
                beta_high=p.get("cbc_beta_high", 0.05),
                eta_slack=p.get("cbc_eta", 1e-6),
            ),
            **kw,
        ),
    }
    return {name: makers[name]() for name in cfg.baselines}


def run_baselines_1d(cfg: ExperimentConfig, seed: int) -> SeedResult:
    sys, nominal, barrier = _linear_parts(cfg)
    x0 = _x0(cfg)
    theta = cfg.filter.theta
    controllers = {"filter": _scalar_filter(cfg, nominal, barrier)}
    controllers.update(_baseline_controllers(cfg))
    controllers["nominal"] = _Nominal(nominal)
    res = SeedResult(seed, {})
    for name, ctrl in controllers.items():
        traj = simulate(sys, cfg.integrator, ctrl, x0, barrier)
        row = {"seed": seed, "controller": name}
        row.update(_traj_metrics(traj, theta))
        res.rows.append(row)
        res.files[f"{name}.csv"] = traj.to_csv()
        for k in ("violations", "safety_rate", "min_phi"):
            res.metrics[f"{name}_{k}"] = row[k]
    return res


# -- vehicle training -----------------------------------------------------------


def _train_modes(cfg: ExperimentConfig) -> Tuple[str, ...]:
    return {"on": ("on",), "off": ("off",), "both": ("on", "off")}[cfg.shield]


def run_train_4d(cfg: ExperimentConfig, seed: int) -> SeedResult:
    from dataclasses import replace

    rl = replace(cfg.rl, seed=seed)
    env = vehicle_env(cfg.vehicle, rl.ts, cfg.vehicle_x0)
    v, m = cfg.vehicle, cfg.model
    model, _ = vehicle4d_svd(v.m, v.iz, v.a, v.c_alpha, m["lambda_hat"], m["lower"], m["upper"])
    phi0 = env.barrier.eval(env.x0)
    if phi0 < 0:
        log.info("seed %d: initial state is outside the safe set (phi=%.6g)", seed, phi0)
    res = SeedResult(seed, {"phi0": phi0})
    for mode in _train_modes(cfg):
        shield = Shield(cfg.filter, model, env.barrier) if mode == "on" else None
        policy = GaussianPolicy(env.system.dim_state, env.system.dim_action, rl.hidden, rl.sigma)
        recs, w = train(env, rl, shield, policy)
        steps = sum(r.steps for r in recs)
        tag = f"shield_{mode}"
        res.files[f"episodes_{tag}.csv"] = write_episode_csv(recs)
        res.files[f"policy_{tag}.ckpt"] = checkpoint_bytes(w, policy)
        last = recs[-min(10, len(recs)) :]
        res.metrics.update(
            {
                f"{tag}_violation_fraction": sum(r.violations for r in recs) / max(steps, 1),
                f"{tag}_violations_after_entry": sum(r.violations_after_entry for r in recs),
                f"{tag}_episodes_entered": sum(r.entered_safe_set for r in recs),
                f"{tag}_success_rate": float(np.mean([r.success for r in recs])),
                f"{tag}_mean_steps": float(np.mean([r.steps for r in recs])),
                f"{tag}_steps_last10": float(np.mean([r.steps for r in last])),
                f"{tag}_min_phi": float(min(r.min_phi for r in recs)),
                f"{tag}_cost_sum": float(sum(r.cost_sum for r in recs)),
                f"{tag}_shield_activations": sum(r.shield_activations for r in recs),
            }
        )
    return res


# -- estimator and impossibility checks -------------------------------------------


def run_unbiasedness(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg.extra.get("unbiasedness", {})
    rep = unbiasedness_check(default_mdp(), None, p.get("n_samples", 100_000), seed, p.get("temperature", 1.0))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["state", "action", "exact", "finite_difference", "mc_mean", "mc_se", "z"])
    for (s, a), e in np.ndenumerate(rep.exact):
        wr.writerow([s, a, repr(e), repr(rep.fd[s, a]), repr(rep.mc_mean[s, a]), repr(rep.mc_se[s, a]), repr(rep.z[s, a])])
    met = {"max_abs_z": rep.max_abs_z, "n_samples": rep.n_samples, "passed": rep.passed(p.get("z_limit", 4.0))}
    return SeedResult(seed, met, {"unbiasedness.csv": buf.getvalue()})


def adversarial_probe(barrier, g, x0, policies: Dict[str, np.ndarray], dt: float) -> List[Dict[str, object]]:
    """For each single-sample action, build the defeating drift and report the resulting rate and one Euler step."""
    x0 = np.asarray(x0, dtype=float)
    grad = barrier.grad(x0)
    gmat = np.atleast_2d(g(x0) if callable(g) else g)
    rows = []
    for name, u0 in policies.items():
        u0 = np.atleast_1d(np.asarray(u0, dtype=float))
        f0 = adversarial_f(barrier, gmat, x0, u0)
        xdot = f0 + gmat @ u0
        rate = float(grad @ xdot)
        expected = -float(grad @ grad)
        x1 = x0 + dt * xdot
        rows.append(
            {
                "policy": name,
                "u0": float(u0[0]) if u0.size == 1 else u0.tolist(),
                "phi_rate": rate,
                "expected_rate": expected,
                "rel_error": abs(rate - expected) / abs(expected),
                "phi_after_step": barrier.eval(x1),
                "left_safe_set": bool(barrier.eval(x1) < 0),
            }
        )
    return rows


def single_sample_policies(barrier, g, x0, rng: np.random.Generator, scale: float = 1.0) -> Dict[str, np.ndarray]:
    """Zero action, a random action, and the action that pushes ``phi`` up fastest under ``g``."""
    x0 = np.asarray(x0, dtype=float)
    gmat = np.atleast_2d(g(x0) if callable(g) else g)
    p = gmat.shape[1]
    return {
        "zero": np.zeros(p),
        "random": scale * rng.standard_normal(p),
        "greedy_gradient": scale * gmat.T @ barrier.grad(x0),
    }


def run_adversarial(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg.extra.get("adversarial", {})
    sys, _, barrier = _linear_parts(cfg)
    x0 = np.asarray(p.get("x0", (0.2,)), dtype=float)
    rng = np.random.default_rng(seed)
    pols = single_sample_policies(barrier, sys.g, x0, rng, p.get("random_scale", 1.0))
    rows = adversarial_probe(barrier, sys.g, x0, pols, p.get("euler_dt", 1e-3))
    for r in rows:
        r["seed"] = seed
    met = {
        "max_rel_error": max(r["rel_error"] for r in rows),
        "all_left_safe_set": all(r["left_safe_set"] for r in rows),
    }
    return SeedResult(seed, met, {"adversarial.json": json.dumps(rows, indent=2) + "\n"}, rows)


RUNNERS: Dict[str, Callable[[ExperimentConfig, int], SeedResult]] = {
    "invariance_1d": run_filter_1d,
    "recovery_1d": run_filter_1d,
    "baselines_1d": run_baselines_1d,
    "train_4d": run_train_4d,
    "unbiasedness": run_unbiasedness,
    "adversarial": run_adversarial,
}


# -- orchestration ------------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def run_seeds(cfg: ExperimentConfig, workers: Optional[int] = None) -> List[SeedResult]:
    """Fan seeds out over a process pool; results come back in seed order regardless of finish order."""
    fn = RUNNERS[cfg.scenario]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(cfg.seeds) <= 1:
        return [fn(cfg, s) for s in cfg.seeds]
    with ProcessPoolExecutor(max_workers=min(workers, len(cfg.seeds))) as pool:
        return list(pool.map(fn, [cfg] * len(cfg.seeds), cfg.seeds))


def _jsonable(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def rows_to_csv(rows: List[Dict[str, object]]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


@dataclass
class RunOutput:
    out_dir: Path
    results: List[SeedResult]
    summary: Dict[str, object]
    files: List[str]


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> RunOutput:
    """Run every seed, write artifacts, ``metrics.json`` and the manifest under ``cfg.output_dir``."""
    results = run_seeds(cfg, workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[str] = []
    for r in results:
        for name, data in r.files.items():
            rel = f"seed_{r.seed}/{name}"
            p = out / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(data, bytes):
                p.write_bytes(data)
            else:
                p.write_text(data, encoding="utf-8", newline="")
            written.append(rel)
    rows = [row for r in results for row in r.rows]
    if rows:
        name = "comparison.csv" if cfg.scenario == "baselines_1d" else "rows.csv"
        (out / name).write_text(rows_to_csv(rows), encoding="utf-8", newline="")
        written.append(name)
    per_seed = [{k: _jsonable(v) for k, v in r.metrics.items()} for r in results]
    summary = {
        "scenario": cfg.scenario,
        "seeds": list(cfg.seeds),
        "config_sha256": cfg.sha256,
        "per_seed": per_seed,
        "aggregate": M.aggregate(per_seed),
    }
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append("metrics.json")
    write_manifest(out, written, cfg.sha256, cfg.scenario, list(cfg.seeds))
    return RunOutput(out, results, summary, written)


def expectations(cfg: ExperimentConfig, results: List[SeedResult]) -> List[Tuple[str, bool, str]]:
    """The pass/fail statements each scenario is expected to meet, for ``run --check``."""
    out: List[Tuple[str, bool, str]] = []
    for r in results:
        m = r.metrics
        tag = f"seed {r.seed}"
        if cfg.scenario == "invariance_1d":
            out.append((f"{tag}: safety_rate == 1", m["safety_rate"] == 1.0, f"safety_rate={m['safety_rate']}"))
        elif cfg.scenario == "recovery_1d":
            t = m["recovery_time"]
            ok = t is not None and t <= m["recovery_bound"]
            out.append((f"{tag}: recovery within bound", ok, f"recovery_time={t} bound={m['recovery_bound']:.6g}"))
        elif cfg.scenario == "baselines_1d":
            others = {n: m[f"{n}_violations"] for n in cfg.baselines}
            out.append((f"{tag}: filter has no violations", m["filter_violations"] == 0, f"filter={m['filter_violations']}"))
            out.append((f"{tag}: some baseline violates", any(v > 0 for v in others.values()), str(others)))
        elif cfg.scenario == "train_4d":
            if "shield_on_violations_after_entry" in m:
                v = m["shield_on_violations_after_entry"]
                out.append((f"{tag}: shielded, no violations after entry", v == 0, f"after_entry={v} entered={m['shield_on_episodes_entered']}"))
            if "shield_off_violation_fraction" in m:
                f = m["shield_off_violation_fraction"]
                out.append((f"{tag}: unshielded violates", f > 0, f"fraction={f:.4g}"))
        elif cfg.scenario == "unbiasedness":
            out.append((f"{tag}: max |z| below limit", bool(m["passed"]), f"max|z|={m['max_abs_z']:.3f}"))
        elif cfg.scenario == "adversarial":
            ok = m["max_rel_error"] < 1e-12 and m["all_left_safe_set"]
            out.append((f"{tag}: witness holds", ok, f"max_rel_error={m['max_rel_error']:.3g}"))
    return out

"""Training, evaluation, friction sweep and the idealized-vs-modeled control transfer study.

All randomness is derived from the configured master seed through
``numpy.random.SeedSequence`` with a fixed tag per purpose, so network
initialisation, training rollouts, validation trials and test trials never
share a stream.  Validation trials (during training) and test trials
(:func:`evaluate`) are disjoint; test trials are identical across policies
and friction multipliers, which keeps comparisons paired.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets, trpo
from .config import ExperimentConfig
from .env import OBS_PERIODIC, OBS_SCALE, OBS_SHIFT, PivotEnv, angle_error
from .nets import GaussianPolicy, ValueNet

log = logging.getLogger(__name__)

_INIT, _TRAIN, _VALIDATION, _TEST = 1, 2, 3, 4

CURVE_FIELDS = ["iteration", "mean_return", "success_rate", "kl", "surrogate_improvement", "wall_time",
                "accepted", "eval_success", "config_hash", "seed"]
TRACE_FIELDS = ["trial", "step", "time", "abs_angle_error", "config_hash", "seed"]
SUMMARY_FIELDS = ["checkpoint", "n_trials", "successes", "success_rate", "friction_multiplier",
                  "idealized", "config_hash", "seed"]
SWEEP_FIELDS = ["friction_multiplier", "n_trials", "successes", "success_rate", "config_hash", "seed"]
TRANSFER_FIELDS = ["policy", "trained_idealized", "eval_env", "n_trials", "successes", "success_rate",
                   "config_hash", "seed"]


def _stream(seed: int, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), tag])


def make_env_factory(config: ExperimentConfig, idealized: bool | None = None, friction_multiplier: float = 1.0):
    act = config.actuation if idealized is None else config.with_idealized(idealized).actuation

    def factory():
        return PivotEnv(task=config.task, tool=config.tool, arm=config.arm, gripper=config.gripper,
                        actuation=act, friction_multiplier=friction_multiplier)

    return factory


def new_models(config: ExperimentConfig) -> tuple[GaussianPolicy, ValueNet]:
    rng = np.random.default_rng(_stream(config.seed, _INIT))
    policy = GaussianPolicy(rng=rng, obs_shift=OBS_SHIFT, obs_scale=OBS_SCALE, periodic=OBS_PERIODIC)
    value_net = ValueNet(rng=rng, obs_shift=OBS_SHIFT, obs_scale=OBS_SCALE, periodic=OBS_PERIODIC)
    return policy, value_net


# -- evaluation ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    successes: np.ndarray         # per trial, success at the final control step
    abs_errors: np.ndarray        # (n_trials, horizon + 1), |angle error| after each step
    friction_multiplier: float
    idealized: bool

    @property
    def n_trials(self) -> int:
        return len(self.successes)

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))


def run_trials(policy: GaussianPolicy, config: ExperimentConfig, seeds, friction_multiplier: float = 1.0,
               idealized: bool | None = None) -> EvalResult:
    """Roll out the policy mean (no exploration noise) once per seed, in lock-step."""
    factory = make_env_factory(config, idealized, friction_multiplier)
    envs = [factory() for _ in seeds]
    obs = np.stack([env.reset(np.random.default_rng(s)) for env, s in zip(envs, seeds)])
    horizon = config.task.horizon
    errors = np.empty((len(envs), horizon + 1))
    errors[:, 0] = np.abs(obs[:, 0])
    successes = np.zeros(len(envs), dtype=bool)
    for t in range(horizon):
        mu = policy.mean(obs)
        for i, env in enumerate(envs):
            obs[i], _, done, info = env.step(mu[i])
            if done:
                successes[i] = info["success"]
        errors[:, t + 1] = [abs(angle_error(env.state, env.target)) for env in envs]
    ideal = config.actuation.idealized if idealized is None else idealized
    return EvalResult(successes, errors, friction_multiplier, ideal)


def holdout_seeds(config: ExperimentConfig, n_trials: int):
    return _stream(config.seed, _TEST).spawn(n_trials)


def validation_seeds(config: ExperimentConfig, n_trials: int):
    return _stream(config.seed, _VALIDATION).spawn(n_trials)


def evaluate(policy: GaussianPolicy, config: ExperimentConfig, n_trials: int | None = None,
             friction_multiplier: float = 1.0, idealized: bool | None = None) -> EvalResult:
    n = config.experiment.eval_trials if n_trials is None else n_trials
    if n < 1:
        raise ValueError("n_trials must be >= 1")
    return run_trials(policy, config, holdout_seeds(config, n), friction_multiplier, idealized)


# -- output helpers --------------------------------------------------------------------


def _write_csv(path: Path, fieldnames, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def _stamp(config: ExperimentConfig) -> dict:
    return {"config_hash": config.config_hash(), "seed": config.seed}


def _fmt(x: float) -> str:
    return repr(float(x))


def write_eval(result: EvalResult, config: ExperimentConfig, out_dir, checkpoint: str = "",
               prefix: str = "eval") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    stamp = _stamp(config)
    dt = config.task.control_period
    trace_rows = [
        {"trial": i, "step": t, "time": _fmt(t * dt), "abs_angle_error": _fmt(err), **stamp}
        for i, row in enumerate(result.abs_errors) for t, err in enumerate(row)
    ]
    traces = _write_csv(out_dir / f"{prefix}_traces.csv", TRACE_FIELDS, trace_rows)
    summary = _write_csv(out_dir / f"{prefix}_summary.csv", SUMMARY_FIELDS, [{
        "checkpoint": checkpoint, "n_trials": result.n_trials, "successes": int(result.successes.sum()),
        "success_rate": _fmt(result.success_rate), "friction_multiplier": _fmt(result.friction_multiplier),
        "idealized": result.idealized, **stamp,
    }])
    return traces, summary


# -- training ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    policy: GaussianPolicy            # parameters after the last iteration
    best_policy: GaussianPolicy       # highest validation success (later iteration wins ties)
    value_net: ValueNet
    history: list = field(default_factory=list)
    validation: list = field(default_factory=list)  # (iteration, success_rate)
    curve_path: Path | None = None
    checkpoint_path: Path | None = None

    @property
    def best_validation(self) -> float:
        return max((s for _, s in self.validation), default=0.0)

    def first_iteration_reaching(self, rate: float):
        return next((it for it, s in self.validation if s >= rate), None)


def train(config: ExperimentConfig, out_dir=None, stop_at: float | None = None) -> TrainResult:
    """Run TRPO for ``n_iterations`` and validate the mean policy every ``eval_every`` iterations.

    With ``stop_at`` set, training ends after the first validation reaching that
    success rate.  Writes ``curve.csv``, ``policy_best.ckpt``, ``policy_last.ckpt``
    and ``value_last.ckpt`` when ``out_dir`` is given.
    """
    run = config.experiment
    policy, value_net = new_models(config)
    rng = np.random.default_rng(_stream(config.seed, _TRAIN))
    factory = make_env_factory(config)
    val_seeds = validation_seeds(config, run.eval_trials)
    stamp = _stamp(config)
    result = TrainResult(policy=policy, best_policy=policy.copy(), value_net=value_net)
    best = -1.0
    for it in range(1, run.n_iterations + 1):
        try:
            stats = trpo.trpo_iteration(factory, policy, value_net, config.trpo, rng)
        except Exception as exc:
            raise RuntimeError(f"training failed at iteration {it} (config {stamp['config_hash']}, "
                               f"seed {config.seed}): {exc}") from exc
        eval_success = ""
        if it % run.eval_every == 0 or it == run.n_iterations:
            t0 = time.perf_counter()
            rate = run_trials(policy, config, val_seeds).success_rate
            stats.wall_time += time.perf_counter() - t0
            result.validation.append((it, rate))
            eval_success = _fmt(rate)
            if rate >= best:
                best = rate
                result.best_policy = policy.copy()
        result.history.append({
            "iteration": it, "mean_return": _fmt(stats.mean_return), "success_rate": _fmt(stats.success_rate),
            "kl": _fmt(stats.kl), "surrogate_improvement": _fmt(stats.surrogate_improvement),
            "wall_time": f"{stats.wall_time:.3f}", "accepted": int(stats.accepted),
            "eval_success": eval_success, **stamp,
        })
        log.info("iter %d return %.2f success %.2f kl %.4f%s", it, stats.mean_return, stats.success_rate,
                 stats.kl, f" validation {eval_success}" if eval_success else "")
        if stop_at is not None and eval_success and float(eval_success) >= stop_at:
            break
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.curve_path = _write_csv(out_dir / "curve.csv", CURVE_FIELDS, result.history)
        result.checkpoint_path = out_dir / "policy_best.ckpt"
        nets.save_checkpoint(result.checkpoint_path, result.best_policy)
        nets.save_checkpoint(out_dir / "policy_last.ckpt", policy)
        nets.save_checkpoint(out_dir / "value_last.ckpt", value_net)
        (out_dir / "config.ini").write_text(config.to_ini(), encoding="utf-8")
    return result


# -- studies ----------------------------------------------------------------------------


def friction_sweep(policy: GaussianPolicy, config: ExperimentConfig, multipliers=None,
                   n_trials: int | None = None, out_dir=None) -> list[tuple[float, EvalResult]]:
    """Evaluate a fixed policy with static and Coulomb friction scaled by each multiplier."""
    multipliers = config.experiment.sweep_multipliers if multipliers is None else multipliers
    if any(not m > 0 for m in multipliers):
        raise ValueError("friction multipliers must be positive")
    table = [(float(m), evaluate(policy, config, n_trials, friction_multiplier=m)) for m in multipliers]
    if out_dir is not None:
        stamp = _stamp(config)
        _write_csv(Path(out_dir) / "sweep.csv", SWEEP_FIELDS, [
            {"friction_multiplier": _fmt(m), "n_trials": r.n_trials, "successes": int(r.successes.sum()),
             "success_rate": _fmt(r.success_rate), **stamp} for m, r in table
        ])
    return table


@dataclass
class TransferResult:
    matrix: dict        # (policy, eval_env) -> EvalResult
    trainings: dict     # policy -> TrainResult

    def rate(self, policy: str, env: str) -> float:
        return self.matrix[(policy, env)].success_rate


TRANSFER_ENVS = ("idealized", "modeled", "real_proxy")


def transfer_study(config: ExperimentConfig, out_dir=None, trained: dict | None = None,
                   n_trials: int | None = None) -> TransferResult:
    """Train with idealized ("A") and modeled ("B") actuation; test both everywhere.

    The real-proxy environment uses modeled actuation with friction scaled by
    ``proxy_friction_multiplier``.  ``trained`` may supply already finished
    :class:`TrainResult` objects under keys "A"/"B" to skip those trainings.
    """
    trained = dict(trained or {})
    out_dir = None if out_dir is None else Path(out_dir)
    for name, ideal in (("A", True), ("B", False)):
        if name not in trained:
            sub = None if out_dir is None else out_dir / f"policy_{name}"
            trained[name] = train(config.with_idealized(ideal), sub)
    proxy = config.experiment.proxy_friction_multiplier
    envs = {"idealized": (True, 1.0), "modeled": (False, 1.0), "real_proxy": (False, proxy)}
    matrix = {}
    for name, res in trained.items():
        for env_name, (ideal, mult) in envs.items():
            matrix[(name, env_name)] = evaluate(res.best_policy, config, n_trials, mult, ideal)
    if out_dir is not None:
        stamp = _stamp(config)
        _write_csv(out_dir / "transfer.csv", TRANSFER_FIELDS, [
            {"policy": p, "trained_idealized": p == "A", "eval_env": e, "n_trials": r.n_trials,
             "successes": int(r.successes.sum()), "success_rate": _fmt(r.success_rate), **stamp}
            for (p, e), r in matrix.items()
        ])
    return TransferResult(matrix, trained)

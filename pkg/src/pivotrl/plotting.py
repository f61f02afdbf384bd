"""Figures and summary tables for the CSV files written by :mod:`pivotrl.experiments`.

The CSV kind is recognised from its header.  Each renderer returns a matplotlib
figure plus the summary rows that were plotted, so callers can save both.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

IMAGE_SUFFIXES = {".png", ".pdf", ".svg", ".jpg"}


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def csv_kind(header) -> str:
    h = set(header)
    if {"iteration", "mean_return"} <= h:
        return "curve"
    if {"trial", "step", "abs_angle_error"} <= h:
        return "traces"
    if {"friction_multiplier", "success_rate"} <= h and "checkpoint" not in h:
        return "sweep"
    if {"policy", "eval_env", "success_rate"} <= h:
        return "transfer"
    raise ValueError(f"unrecognised CSV header: {header}")


def _moving_average(y, window):
    y = np.asarray(y, dtype=float)
    if len(y) < window:
        return y
    k = np.ones(window) / window
    head = np.cumsum(y[:window - 1]) / np.arange(1, window)
    return np.concatenate([head, np.convolve(y, k, mode="valid")])


def learning_curve(rows, window=10):
    it = np.array([int(r["iteration"]) for r in rows])
    ret = np.array([float(r["mean_return"]) for r in rows])
    succ = np.array([float(r["success_rate"]) for r in rows])
    smooth = _moving_average(ret, window)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(it, ret, color="0.7", lw=0.8, label="per iteration")
    ax1.plot(it, smooth, color="C0", lw=1.5, label=f"{window}-iteration mean")
    ax1.set_ylabel("mean episode return")
    ax1.legend(frameon=False)
    ax2.plot(it, succ, color="0.7", lw=0.8, label="training episodes")
    val = [(int(r["iteration"]), float(r["eval_success"])) for r in rows if r.get("eval_success")]
    if val:
        vi, vs = zip(*val)
        ax2.plot(vi, vs, "o-", color="C1", ms=3, label="validation (mean action)")
    ax2.set_ylim(-0.02, 1.02)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("success rate")
    ax2.legend(frameon=False)
    fig.tight_layout()
    summary = [{"iteration": int(i), "mean_return": float(r), "mean_return_smoothed": float(s),
                "success_rate": float(p)} for i, r, s, p in zip(it, ret, smooth, succ)]
    return fig, summary


def distance_vs_time(rows):
    by_step = defaultdict(list)
    times = {}
    for r in rows:
        step = int(r["step"])
        by_step[step].append(float(r["abs_angle_error"]))
        times[step] = float(r.get("time") or step)
    steps = sorted(by_step)
    t = np.array([times[s] for s in steps])
    mean = np.array([np.mean(by_step[s]) for s in steps])
    std = np.array([np.std(by_step[s]) for s in steps])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(t, np.maximum(mean - std, 0), mean + std, color="C0", alpha=0.25, lw=0)
    ax.plot(t, mean, color="C0")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("|angle to target| [rad]")
    n = len(by_step[steps[0]])
    ax.set_title(f"distance to target, mean ± std over {n} trials")
    fig.tight_layout()
    summary = [{"step": s, "time": float(ti), "mean_abs_error": float(m), "std_abs_error": float(sd)}
               for s, ti, m, sd in zip(steps, t, mean, std)]
    return fig, summary


def sweep_plot(rows):
    m = np.array([float(r["friction_multiplier"]) for r in rows])
    s = np.array([float(r["success_rate"]) for r in rows])
    order = np.argsort(m)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(m[order], s[order], "o-")
    ax.axvspan(2.5, 5.0, color="0.9", zorder=0)
    ax.set_xlabel("friction multiplier")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    return fig, [{"friction_multiplier": float(a), "success_rate": float(b)} for a, b in zip(m[order], s[order])]


def transfer_plot(rows):
    envs = list(dict.fromkeys(r["eval_env"] for r in rows))
    policies = list(dict.fromkeys(r["policy"] for r in rows))
    rate = {(r["policy"], r["eval_env"]): float(r["success_rate"]) for r in rows}
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(policies)
    x = np.arange(len(envs))
    for k, p in enumerate(policies):
        ax.bar(x + k * width, [rate.get((p, e), np.nan) for e in envs], width, label=f"policy {p}")
    ax.set_xticks(x + width * (len(policies) - 1) / 2)
    ax.set_xticklabels(envs)
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig, [{"policy": p, "eval_env": e, "success_rate": rate[(p, e)]} for p in policies for e in envs
                 if (p, e) in rate]


RENDERERS = {"curve": learning_curve, "traces": distance_vs_time, "sweep": sweep_plot, "transfer": transfer_plot}


def render(csv_path, out) -> list[Path]:
    """Plot ``csv_path``; write an image and/or a summary CSV depending on ``out``'s suffix.

    An image suffix writes the figure plus ``<stem>_summary.csv`` next to it; a
    ``.csv`` suffix writes the summary table only.
    """
    header, rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: no data rows")
    fig, summary = RENDERERS[csv_kind(header)](rows)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if out.suffix.lower() in IMAGE_SUFFIXES:
        fig.savefig(out, dpi=150)
        written.append(out)
        table = out.with_name(out.stem + "_summary.csv")
    elif out.suffix.lower() == ".csv":
        table = out
    else:
        plt.close(fig)
        raise ValueError(f"unsupported output type {out.suffix!r}")
    plt.close(fig)
    with open(table, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary)
    written.append(table)
    return written

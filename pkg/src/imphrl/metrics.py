"""Evaluation metrics, learning-curve normalization and ablation reports."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

ABSENT = ""  # CSV marker for statistics that do not exist (e.g. no successes)
ARMS = ("full", "case1", "case2", "case3")
CONVERGED = 0.9


class InsufficientData(ValueError):
    pass


# ----------------------------------------------------------------------------
# compositionality


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def pair_similarity(a: Sequence, b: Sequence) -> float:
    n = max(len(a), len(b))
    if n == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / n


def compositionality(sequences: Sequence[Sequence]) -> float:
    """Mean pairwise edit similarity (1 - distance / longer length) over unordered pairs."""
    if len(sequences) < 2:
        raise InsufficientData(f"compositionality needs at least 2 sequences, got {len(sequences)}")
    seqs = [tuple(s) for s in sequences]
    scores = [pair_similarity(a, b) for a, b in itertools.combinations(seqs, 2)]
    return float(np.mean(scores))


# ----------------------------------------------------------------------------
# forces


@dataclass(frozen=True)
class ForceStats:
    mean: float
    std: float
    max: float
    n: int


def force_stats(max_forces: Iterable[float], successes: Iterable[bool]) -> Optional[ForceStats]:
    """Statistics of per-episode max force over successful episodes; None when there are none."""
    vals = np.array([f for f, s in zip(max_forces, successes) if s], dtype=float)
    if len(vals) == 0:
        return None
    return ForceStats(mean=float(vals.mean()), std=float(vals.std()), max=float(vals.max()), n=len(vals))


# ----------------------------------------------------------------------------
# learning curves


def episode_score(rewards: Sequence[float], costs: Sequence[int], success: bool, horizon: int) -> float:
    """Per-timestep reward summed over the atomic budget.

    Each decision's reward counts once per atomic unit it consumed; a
    successful episode is credited the maximal reward for the unused units.
    Rewards exclude the success bonus.
    """
    used = int(sum(costs))
    score = float(np.dot(rewards, costs))
    if success:
        score += max(horizon - used, 0) * 1.0
    return score


def normalize_scores(scores: Sequence[float], horizon: int, r_min: float, r_max: float = 1.0) -> np.ndarray:
    lo, hi = r_min * horizon, r_max * horizon
    return np.clip((np.asarray(scores, float) - lo) / (hi - lo), 0.0, 1.0)


def rolling_mean(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing mean; the first entries average what is available."""
    v = np.asarray(values, float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    start = np.maximum(idx - window, 0)
    return (c[idx] - c[start]) / (idx - start)


def normalize_learning_curve(returns: Sequence[float], lo: float, hi: float, window: int = 20) -> np.ndarray:
    """Rolling mean over ``window`` entries, then min-max normalized by known bounds [lo, hi]."""
    if len(returns) == 0:
        raise InsufficientData("learning curve needs at least one entry")
    if not hi > lo:
        raise ValueError("need hi > lo")
    return np.clip((rolling_mean(returns, window) - lo) / (hi - lo), 0.0, 1.0)


def convergence_epoch(epochs: Sequence[int], curve: Sequence[float], threshold: float = CONVERGED) -> Optional[int]:
    """First epoch from which the curve stays at or above ``threshold``; None if never."""
    c = np.asarray(curve, float)
    below = np.nonzero(c < threshold)[0]
    first = 0 if len(below) == 0 else below[-1] + 1
    return int(epochs[first]) if first < len(c) else None


# ----------------------------------------------------------------------------
# reports


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def fmt(v: Optional[float]) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ABSENT
    return f"{v:.6g}"


@dataclass
class ArmSummary:
    arm: str
    seeds: int
    success_rate: Optional[float]
    force_mean: Optional[float]
    force_std: Optional[float]
    convergence_epoch: Optional[float]


ABLATION_HEADER = ["arm", "seeds", "success_rate", "mean_max_force", "std_max_force", "convergence_epoch"]


def summarize_arm(arm: str, evals: Sequence[Sequence[dict]], curves: Sequence[tuple[Sequence[int], Sequence[float]]]
                  ) -> ArmSummary:
    """``evals``: per-seed eval rows (success, max_force); ``curves``: per-seed (epochs, normalized curve)."""
    if not evals:
        return ArmSummary(arm, 0, None, None, None, None)
    rows = [r for seed_rows in evals for r in seed_rows]
    succ = [bool(int(r["success"])) for r in rows]
    fs = force_stats([float(r["max_force"]) for r in rows], succ)
    conv = [convergence_epoch(e, c) for e, c in curves]
    conv_ok = [c for c in conv if c is not None]
    return ArmSummary(arm=arm, seeds=len(evals), success_rate=float(np.mean(succ)),
                      force_mean=fs.mean if fs else None, force_std=fs.std if fs else None,
                      convergence_epoch=float(np.mean(conv_ok)) if conv_ok else None)


def ablation_report(arms: Mapping[str, ArmSummary], csv_path: str | Path, svg_path: str | Path | None = None
                    ) -> list[ArmSummary]:
    """One row per arm in canonical order; missing arms appear with empty cells."""
    out = [arms.get(a, ArmSummary(a, 0, None, None, None, None)) for a in ARMS]
    write_csv(csv_path, ABLATION_HEADER,
              [[s.arm, s.seeds, fmt(s.success_rate), fmt(s.force_mean), fmt(s.force_std), fmt(s.convergence_epoch)]
               for s in out])
    if svg_path is not None:
        bar_chart_svg(svg_path, [s.arm for s in out], [s.force_mean for s in out], "mean max force (N)")
    return out


# expected force ordering across arms: each pair reads "left <= right"
FORCE_ORDER = (("full", "case1"), ("case1", "case3"), ("full", "case2"), ("case2", "case3"))


def force_ordering(forces: Mapping[str, Optional[float]], margin: float = 1.0) -> list[tuple[str, str, str]]:
    """Verdict per expected inequality: ``holds`` (right exceeds left by at least ``margin``),
    ``tied`` (within ``margin`` of each other), ``violated``, or ``absent`` when an arm has no force."""
    out = []
    for lo, hi in FORCE_ORDER:
        a, b = forces.get(lo), forces.get(hi)
        if a is None or b is None:
            verdict = "absent"
        elif b - a >= margin:
            verdict = "holds"
        elif abs(b - a) < margin:
            verdict = "tied"
        else:
            verdict = "violated"
        out.append((lo, hi, verdict))
    return out


# ----------------------------------------------------------------------------
# SVG rendering


def _svg_frame(width: int, height: int, title: str) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">{title}</text>']


def bar_chart_svg(path: str | Path, labels: Sequence[str], values: Sequence[Optional[float]], title: str) -> None:
    w, h, pad = 420, 260, 40
    finite = [v for v in values if v is not None]
    top = max(finite) if finite and max(finite) > 0 else 1.0
    bw = (w - 2 * pad) / max(len(labels), 1)
    parts = _svg_frame(w, h, title)
    parts.append(f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>')
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = pad + i * bw
        parts.append(f'<text x="{x + bw / 2:.1f}" y="{h - pad + 14}" text-anchor="middle">{lab}</text>')
        if v is None:
            parts.append(f'<text x="{x + bw / 2:.1f}" y="{h - pad - 4}" text-anchor="middle">n/a</text>')
            continue
        bh = (h - 2 * pad) * v / top
        parts.append(f'<rect x="{x + 0.15 * bw:.1f}" y="{h - pad - bh:.1f}" width="{0.7 * bw:.1f}" '
                     f'height="{bh:.1f}" fill="#4a78a8"/>')
        parts.append(f'<text x="{x + bw / 2:.1f}" y="{h - pad - bh - 3:.1f}" text-anchor="middle">{v:.3g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def line_chart_svg(path: str | Path, series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str,
                   y_range: tuple[float, float] = (0.0, 1.0)) -> None:
    w, h, pad = 480, 300, 40
    colors = ["#4a78a8", "#d0743c", "#5b9a4a", "#a14a8c", "#7a7a7a"]
    xs_all = [x for xs, _ in series.values() for x in xs]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y0, y1 = y_range
    parts = _svg_frame(w, h, title)
    parts.append(f'<rect x="{pad}" y="{pad}" width="{w - 2 * pad}" height="{h - 2 * pad}" fill="none" stroke="black"/>')
    for k, (name, (xs, ys)) in enumerate(series.items()):
        pts = " ".join(f"{pad + (x - x0) / (x1 - x0) * (w - 2 * pad):.1f},"
                       f"{h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad):.1f}" for x, y in zip(xs, ys))
        c = colors[k % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        parts.append(f'<text x="{w - pad + 4}" y="{pad + 14 * (k + 1)}" fill="{c}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")

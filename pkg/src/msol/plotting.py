"""SVG learning curves and the taxi option map."""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .envs.layout import DIRECTIONS, GridLayout  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .funcapprox import sigmoid, softmax  # noqa: E402
from .policy import SharedPrior  # noqa: E402

plt.rcParams["svg.hashsalt"] = "msol"  # stable element ids between runs


def metrics_curve(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Frames and task-averaged episode return from a metrics log."""
    frames, values = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if "frames" not in rec or "returns" not in rec:
            continue
        returns = [r for r in rec["returns"] if r is not None]
        frames.append(rec["frames"])
        values.append(np.mean(returns) if returns else np.nan)
    return np.asarray(frames, dtype=np.float64), np.asarray(values, dtype=np.float64)


def collect_series(inputs) -> list[dict]:
    """Turn ``(label, path)`` pairs into plot series.

    Metrics logs sharing a label are aligned by record and summarised by
    median and standard deviation.  An experiment summary (``.json``) adds
    one series per variant.
    """
    grouped: dict[str, list] = defaultdict(list)
    series = []
    for label, path in inputs:
        path = Path(path)
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            for variant, entry in data["variants"].items():
                series.append({
                    "label": f"{label}:{variant}" if label != path.stem else variant,
                    "frames": np.asarray(entry["frames"], dtype=np.float64),
                    "median": np.asarray(entry["median"], dtype=np.float64),
                    "std": np.asarray(entry["std"], dtype=np.float64),
                })
        else:
            grouped[label].append(metrics_curve(path))
    for label, curves in grouped.items():
        n = min(len(f) for f, _ in curves)
        if n == 0:
            raise ConfigError(f"no return records for {label!r}")
        values = np.stack([v[:n] for _, v in curves])
        with warnings.catch_warnings():  # all-NaN columns stay NaN
            warnings.simplefilter("ignore", RuntimeWarning)
            series.append({
                "label": label,
                "frames": curves[0][0][:n],
                "median": np.nanmedian(values, axis=0),
                "std": np.nanstd(values, axis=0),
            })
    return series


def plot_curves(series: list[dict], out: str | Path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in series:
        line, = ax.plot(s["frames"], s["median"], label=s["label"])
        ax.fill_between(s["frames"], s["median"] - s["std"], s["median"] + s["std"],
                        color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("frames per task")
    ax.set_ylabel("episode return")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


# ----------------------------------------------------------------------------
# taxi option map


def taxi_option_map(prior: SharedPrior, layout: GridLayout) -> dict:
    """Per option and passenger flag: argmax action, its probability and p(b=1).

    Arrays have shape ``(m, 2, n_locations)``.  The termination probability at
    a state is that of ending option ``z`` there, i.e. ``p^T(b=1 | s, z)``.
    """
    spec = prior.spec
    n = layout.n_locations
    if spec.obs_dim != 2 * n or spec.n_actions != 6:
        raise ConfigError(
            f"checkpoint (obs {spec.obs_dim}, actions {spec.n_actions}) is not a standard taxi policy "
            f"for layout {layout.layout_id} ({2 * n} states)"
        )
    m = spec.n_options
    obs = np.eye(2 * n)
    action = np.zeros((m, 2, n), dtype=np.int64)
    prob = np.zeros((m, 2, n))
    term = np.zeros((m, 2, n))
    enc = prior.encoder.forward(obs, cache=False)
    for z in range(m):
        lat = enc.at(np.full(2 * n, z))
        p = softmax(prior.head_L.forward(lat, cache=False))
        if prior.learned_termination:
            pt = sigmoid(prior.head_T.forward(lat, cache=False)[:, 0])
        else:
            pt = np.full(2 * n, 1.0 - prior.alpha)
        action[z] = p.argmax(axis=1).reshape(2, n)
        prob[z] = p.max(axis=1).reshape(2, n)
        term[z] = pt.reshape(2, n)
    return {"action": action, "prob": prob, "termination": term}


def render_taxi_options(prior: SharedPrior, layout: GridLayout, out: str | Path, floor: float = 0.3) -> dict:
    """One panel per (option, passenger flag): arrows for the likeliest move
    (hidden below ``floor``), a dot for pickup/drop-off, and a circle whose
    area grows with the termination probability."""
    info = taxi_option_map(prior, layout)
    m = prior.spec.n_options
    fig, axes = plt.subplots(2, m, figsize=(2.4 * m, 4.8), squeeze=False)
    for z in range(m):
        for flag in range(2):
            ax = axes[flag, z]
            _draw_grid(ax, layout)
            for i, (x, y) in enumerate(layout.cells):
                a, p = info["action"][z, flag, i], info["prob"][z, flag, i]
                if p >= floor:
                    if a < 4:
                        dx, dy = DIRECTIONS[a]
                        ax.arrow(x - 0.25 * dx, y - 0.25 * dy, 0.3 * dx, 0.3 * dy, width=0.04,
                                 head_width=0.18, color=plt.cm.viridis(p), length_includes_head=True)
                    elif a == 5:
                        ax.plot(x, y, "s", color=plt.cm.viridis(p), markersize=5)
                ax.add_patch(plt.Circle((x, y), 0.45 * np.sqrt(info["termination"][z, flag, i]),
                                        fill=False, color="tab:red", linewidth=0.8))
            ax.set_title(f"option {z}, {'carrying' if flag else 'empty'}", fontsize=8)
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    info["floor"] = floor
    return info


def _draw_grid(ax, layout: GridLayout) -> None:
    ax.set_xlim(-0.5, layout.width - 0.5)
    ax.set_ylim(layout.height - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    for k, (x, y) in enumerate(layout.special):
        ax.add_patch(plt.Rectangle((x - 0.5, y - 0.5), 1, 1, color="0.85"))
        ax.text(x - 0.4, y - 0.3, "RGBY"[k], fontsize=6)
    for edge in layout.walls:
        (ax0, ay0), (bx0, by0) = sorted(edge)
        if ax0 != bx0:  # vertical wall between horizontal neighbours
            xm = (ax0 + bx0) / 2
            ax.plot([xm, xm], [ay0 - 0.5, ay0 + 0.5], color="k", linewidth=2)
        else:
            ym = (ay0 + by0) / 2
            ax.plot([ax0 - 0.5, ax0 + 0.5], [ym, ym], color="k", linewidth=2)

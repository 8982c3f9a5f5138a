"""Figure rendering for benchmark runs: metric boxplots, epoch trajectories,
and a 2D prediction map. Figures land next to the delimited outputs."""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .editing import read_trace_epochs
from .evaluation import read_report
from .harness import RunManifest, build_datasets
from .models import load_classifier, predict

log = logging.getLogger(__name__)

BOX_METRICS = ("acc_f", "acc_ft", "acc_rt", "h_mean", "mia")


def _reports_by_method(manifest: RunManifest) -> dict[str, list]:
    grouped: dict[str, list] = {}
    for entry in manifest.runs:
        if entry.get("report"):
            rep = read_report(entry["report"])
            grouped.setdefault(rep.method, []).append(rep)
    return grouped


def plot_metric_boxes(manifest: RunManifest, out: Path) -> Path | None:
    grouped = _reports_by_method(manifest)
    if not grouped:
        log.warning("no reports in manifest; skipping boxplot")
        return None
    methods = list(grouped)
    fig, axes = plt.subplots(1, len(BOX_METRICS), figsize=(3.2 * len(BOX_METRICS), 3.6),
                             sharey=False)
    for ax, metric in zip(axes, BOX_METRICS):
        data = [[getattr(r, metric) for r in grouped[m]] for m in methods]
        ax.boxplot(data, tick_labels=methods)
        ax.set_title(metric)
        ax.tick_params(axis="x", rotation=60)
        ax.grid(alpha=0.3)
    fig.suptitle(f"{manifest.name}: per-repeat metric spread")
    fig.tight_layout()
    path = out / "boxplot_metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectories(manifest: RunManifest, out: Path) -> Path | None:
    traced = [(entry["method"], entry["trace"]) for entry in manifest.runs
              if entry.get("trace") and Path(entry["trace"]).exists()]
    if not traced:
        log.warning("no traces in manifest; skipping trajectory plot")
        return None
    fig, (ax_f, ax_r) = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
    colors = {}
    for method, trace_path in traced:
        rows = read_trace_epochs(trace_path)
        if not rows:
            continue
        epochs = [r[0] for r in rows]
        color = colors.setdefault(method, f"C{len(colors)}")
        ax_f.plot(epochs, [r[1] for r in rows], color=color, alpha=0.6)
        ax_r.plot(epochs, [r[2] for r in rows], color=color, alpha=0.6)
    for ax, title in ((ax_f, "forget test accuracy"), (ax_r, "retain test accuracy")):
        ax.set_xlabel("epoch")
        ax.set_ylabel("%")
        ax.set_title(title)
        ax.grid(alpha=0.3)
    handles = [plt.Line2D([0], [0], color=c, label=m) for m, c in colors.items()]
    if handles:
        ax_r.legend(handles=handles, fontsize=8)
    fig.tight_layout()
    path = out / "trace_accuracy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _project_2d(inputs: np.ndarray) -> np.ndarray:
    flat = inputs.reshape(len(inputs), -1)
    if flat.shape[1] == 2:
        return flat
    from sklearn.decomposition import PCA

    return PCA(n_components=2, random_state=0).fit_transform(flat)


def plot_prediction_map(manifest: RunManifest, out: Path) -> Path | None:
    """Scatter of test inputs in a 2D projection, colored by each model's prediction."""
    seed = manifest.seeds[0]
    checkpoints = [("original", Path(manifest.config_path).parent / "checkpoints"
                    / f"original_seed{seed}.npz")]
    seen = set()
    for entry in manifest.runs:
        if entry["seed"] == seed and entry.get("checkpoint") and entry["method"] not in seen:
            seen.add(entry["method"])
            checkpoints.append((entry["method"], Path(entry["checkpoint"])))
    checkpoints = [(name, p) for name, p in checkpoints if p.exists()]
    if len(checkpoints) < 2:
        log.warning("not enough checkpoints for a prediction map; skipping")
        return None
    _, test_ds = build_datasets(manifest.dataset, seed)
    coords = _project_2d(test_ds.inputs)
    fig, axes = plt.subplots(1, len(checkpoints), figsize=(3.4 * len(checkpoints), 3.4),
                             sharex=True, sharey=True)
    axes = np.atleast_1d(axes)
    for ax, (name, path) in zip(axes, checkpoints):
        model = load_classifier(path)
        preds = predict(model, test_ds.inputs)
        ax.scatter(coords[:, 0], coords[:, 1], c=preds, cmap="tab10", s=8,
                   vmin=0, vmax=max(9, test_ds.class_count - 1))
        ax.set_title(name, fontsize=9)
    fig.suptitle("test-set predictions in 2D projection")
    fig.tight_layout()
    path = out / "prediction_map.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_plots(manifest: RunManifest | str | Path, out_dir=None) -> list[Path]:
    """Render every available figure for a finished run; skips missing inputs with warnings."""
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    out = Path(out_dir) if out_dir else Path(manifest.config_path).parent / "plots"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fn in (plot_metric_boxes, plot_trajectories, plot_prediction_map):
        path = fn(manifest, out)
        if path is not None:
            written.append(path)
    return written

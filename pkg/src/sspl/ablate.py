"""One training run per value of an ablation axis, summarised as a table."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UsageError
from .train import evaluate, train

AXES = {
    "scaling": ("relu", "sigmoid", "softmax", "relu_softmax", "minmax"),
    "stop_gradient": ("on", "off"),
    "pcm_T": (1, 3, 5, 6, 7, 8),
    "fusion": ("concat", "multiply", "add", "attention"),
    "augmentation": ("none", "default", "full"),
    "negatives": ("infonce", "infonce_masked"),
}


@dataclass
class AblationRow:
    value: object
    success: float
    auc: float
    collapse: float | None


def axis_config(base, axis, value):
    if axis == "scaling":
        return base.replace(scaling_method=value)
    if axis == "stop_gradient":
        return base.replace(use_stop_gradient=(value == "on"))
    if axis == "pcm_T":
        return base.replace(use_pcm=True, pcm_T=int(value))
    if axis == "fusion":
        return base.replace(fusion_mode=value)
    if axis == "augmentation":
        return base.replace(augmentation=value)
    if axis == "negatives":
        return base.replace(objective=value)
    raise UsageError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")


def ablate(axis, base_cfg, train_data, test_data, values=None, progress=None):
    """Train and evaluate once per axis value with shared seed and data."""
    if axis not in AXES:
        raise UsageError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    rows = []
    for value in values if values is not None else AXES[axis]:
        cfg = axis_config(base_cfg, axis, value)
        result = train(cfg, train_data)
        report = evaluate(result.model, test_data)
        collapses = [e["collapse"] for e in result.log if e.get("collapse") is not None]
        row = AblationRow(value, report.ciou_at_half, report.auc, collapses[-1] if collapses else None)
        rows.append(row)
        if progress:
            progress(row)
    return rows


def format_table(axis, rows):
    lines = [f"{axis},success@0.5,auc,collapse"]
    for r in rows:
        collapse = "" if r.collapse is None else f"{r.collapse:.6f}"
        lines.append(f"{r.value},{r.success:.6f},{r.auc:.6f},{collapse}")
    return "\n".join(lines) + "\n"

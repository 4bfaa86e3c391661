"""
Report Generator
Renders metric reports (rich summary table, JSON lines) and training loss curves.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from rich.console import Console  # noqa: E402
from rich.table import Table  # noqa: E402

from src.analyzers.metrics import INTERNAL_FIELDS, REFERENCE_NOTE, REFERENCE_ROWS, MetricReport  # noqa: E402
from src.utils.data_manager import DataManager  # noqa: E402

logger = logging.getLogger(__name__)

COLUMN_TITLES = {
    "mel_cepstral_distortion": "MCD (dB)",
    "speaker_cosine": "Cosine",
    "duration_error": "Dur. err (frames)",
    "hnr_db": "HNR (dB)",
    "dnsmos": "DNSMOS",
    "utmos": "UTMOS",
    "cer": "CER",
}


class ReportGenerator:
    """Generates metric summaries and loss-curve plots."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.colors = {
            "primary": "#667eea",
            "secondary": "#764ba2",
            "success": "#4facfe",
            "warning": "#f093fb",
            "danger": "#f5576c",
            "info": "#00f2fe",
        }

    def metric_table(self, report: MetricReport) -> Table:
        """One row per evaluated system, then the published reference rows greyed out."""
        fields = list(INTERNAL_FIELDS) + report.external_fields()
        for name in ("dnsmos", "utmos", "cer"):
            if name not in fields:
                fields.append(name)
        table = Table(title=f"Evaluation (cosine vs {report.cosine_reference})")
        table.add_column("System", style="bold")
        table.add_column("N", justify="right")
        for f in fields:
            table.add_column(COLUMN_TITLES.get(f, f), justify="right")

        for system, means in report.aggregate().items():
            table.add_row(system, str(means.get("n_utterances", 0)), *[_fmt(means.get(f)) for f in fields])
        for name, values in REFERENCE_ROWS.items():
            table.add_row(f"{name} (ref.)", "-", *[_fmt(values.get(f)) for f in fields], style="dim")
        table.caption = REFERENCE_NOTE
        return table

    def print_report(self, report: MetricReport) -> None:
        self.console.print(self.metric_table(report))
        for entry in report.errors():
            self.console.print(f"[red]{entry['pair_id']} ({entry['system']}): {entry['error']}[/red]")

    def write_report(self, report: MetricReport, output_path: str) -> str:
        """JSON lines: header, per-utterance records, per-system aggregates."""
        return DataManager.write_records(report.to_records(), output_path)

    def plot_history(self, history: Sequence[Dict[str, float]], stage: str, output_path: str) -> str:
        """
        Plot every loss component of a training history against the step.

        Args:
            history: per-step loss dicts as returned by the trainers
            stage: title for the figure
            output_path: PNG path

        Returns:
            Path to the saved figure
        """
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        keys = [k for k in (history[0] if history else {}) if k != "step"]
        steps = [h.get("step", i + 1) for i, h in enumerate(history)]
        palette = list(self.colors.values())

        fig, axes = plt.subplots(len(keys) or 1, 1, figsize=(10, 2.5 * max(len(keys), 1)), sharex=True, squeeze=False)
        for ax, key, color in zip(axes[:, 0], keys, _cycle(palette, len(keys))):
            ax.plot(steps, [h[key] for h in history], color=color, linewidth=1.2)
            ax.set_ylabel(key)
            ax.grid(True, alpha=0.3)
        axes[0, 0].set_title(f"{stage} training losses")
        axes[-1, 0].set_xlabel("step")
        plt.tight_layout()
        plt.savefig(output_path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        logger.info("wrote %s loss plot to %s", stage, output_path)
        return str(output_path)


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return f"{value:.3f}"


def _cycle(palette: List[str], n: int) -> List[str]:
    return [palette[i % len(palette)] for i in range(n)]

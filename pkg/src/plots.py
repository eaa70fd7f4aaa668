"""
Data visualization utilities.
"""
import os
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from matplotlib.backends.backend_pdf import PdfPages
from plotly.graph_objects import Figure

from src.analytics import ScoreReport, compare_reports, timestep_frame


def create_loss_curves(history: pd.DataFrame, terms: Optional[List[str]] = None, title: str = "Training losses") -> Figure:
    """
    Line chart of loss terms against the training step.

    Args:
        history: DataFrame returned by a trainer (``step`` plus one column per term)
        terms: Columns to draw (defaults to every column except ``step``)
        title: Figure title

    Returns:
        Plotly figure object
    """
    if "step" not in history.columns:
        raise ValueError("Column step not found in DataFrame")
    terms = terms or [col for col in history.columns if col != "step"]
    for col in terms:
        if col not in history.columns:
            raise ValueError(f"Column {col} not found in DataFrame")

    long = history.melt(id_vars="step", value_vars=terms, var_name="term", value_name="value")
    fig = px.line(long, x="step", y="value", color="term", title=title)
    fig.update_layout(xaxis_title="Step", yaxis_title="Loss")
    return fig


def create_timestep_curve(reports: Dict[str, ScoreReport]) -> Figure:
    """
    Frame-level Inception Score at each time index, one trace per batch.

    Args:
        reports: Batch name -> report

    Returns:
        Plotly figure object
    """
    fig = go.Figure()
    for name, report in reports.items():
        frame = timestep_frame(report)
        fig.add_trace(go.Scatter(x=frame["timestep"], y=frame["frame_is"], mode="lines+markers", name=name))

    fig.update_layout(
        title="Frame score over time",
        xaxis_title="Time index",
        yaxis_title="Inception Score",
    )
    return fig


def create_score_comparison(reports: Dict[str, ScoreReport]) -> Figure:
    """
    Grouped bars of frame and video scores with their split spread.

    Args:
        reports: Batch name -> report

    Returns:
        Plotly figure object
    """
    table = compare_reports(reports)
    fig = go.Figure()
    for level in ["frame", "video"]:
        fig.add_trace(
            go.Bar(
                x=table["batch"],
                y=table[f"{level}_is"],
                error_y=dict(type="data", array=table[f"{level}_is_std"]),
                name=level,
            )
        )
    fig.update_layout(title="Inception Scores", xaxis_title="Batch", yaxis_title="Score", barmode="group")
    return fig


def save_figure_html(fig: Figure, filename: str) -> None:
    """Write a plotly figure as a standalone HTML page."""
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.write_html(filename, include_plotlyjs="cdn")


def export_frames_to_pdf(frames: List[np.ndarray], filename: str, columns: int = 4, title: Optional[str] = None) -> None:
    """
    Export rendered frames as a contact sheet PDF.

    Args:
        frames: RGB images (H, W, 3) with values in [0, 1]
        filename: Output PDF filename
        columns: Images per row
        title: Optional page title

    Returns:
        None
    """
    if not frames:
        raise ValueError("No frames to export")
    rows = -(-len(frames) // columns)
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with PdfPages(filename) as pdf:
        fig, axes = plt.subplots(rows, columns, figsize=(2 * columns, 2 * rows), squeeze=False)
        for index, ax in enumerate(axes.flat):
            ax.axis("off")
            if index < len(frames):
                ax.imshow(np.clip(frames[index], 0.0, 1.0))
                ax.set_title(f"t={index}", fontsize=8)
        if title:
            fig.suptitle(title)
        pdf.savefig(fig)
        plt.close(fig)

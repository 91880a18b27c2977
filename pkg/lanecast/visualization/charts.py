"""
Chart Generator Module for lanecast

Builds plotly figures for offline inspection:
- Scene view of one prediction: lane centerlines, history, ground truth and the
  three candidate paths
- ADE / FDE against prediction horizon, one line per model variant

Figures are written as plotly JSON (or standalone HTML); rendering happens in
external tools.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from lanecast.core.types import Scene
from lanecast.errors import ParseError
from lanecast.reporting import horizon_columns

logger = logging.getLogger(__name__)


class ChartGenerator:
    """
    Generates prediction and metric charts using Plotly.

    Features:
    - Equal-aspect scene plots in metres
    - Masked lane slots drawn only as legend entries
    - Selected path emphasised
    """

    COLORS = {
        'lane': '#b0b7bf',
        'history': '#1e3a5f',
        'ground_truth': '#000000',
        'left': '#3d7ea6',
        'middle': '#5cb85c',
        'right': '#f0ad4e',
        'text': '#000000',
    }

    VARIANT_PALETTE = [
        '#1e3a5f', '#3d7ea6', '#5cb85c', '#f0ad4e', '#d9534f', '#6db3d5', '#8e44ad', '#16a085',
    ]

    def __init__(self, width: int = 800, height: int = 600):
        self.width = width
        self.height = height
        self.layout_defaults = {
            'font': {'family': 'Arial, sans-serif', 'size': 12, 'color': self.COLORS['text']},
            'paper_bgcolor': 'rgba(0,0,0,0)',
            'plot_bgcolor': 'rgba(0,0,0,0)',
            'margin': {'l': 50, 'r': 50, 't': 60, 'b': 50},
        }

    @staticmethod
    def _xy(frames: List[List[float]]):
        return [f[1] for f in frames], [f[2] for f in frames]

    def create_prediction_chart(
        self,
        prediction: Mapping[str, Any],
        scene: Optional[Scene] = None,
        title: Optional[str] = None,
    ) -> go.Figure:
        """
        Scene-frame plot of one prediction file.

        Args:
            prediction: payload written by ``predict`` (history, ground_truth, paths)
            scene: optional scene whose lane chunks are drawn underneath
            title: chart title, defaults to scene and agent id

        Returns:
            Plotly Figure object
        """
        try:
            history = prediction["history"]
            paths = prediction["paths"]
            selected = int(prediction["selected"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"prediction payload is missing {exc}") from exc

        fig = go.Figure()
        if scene is not None:
            for i, chunk in enumerate(scene.lane_chunks):
                points = chunk.points
                fig.add_trace(go.Scatter(
                    x=points[:, 0], y=points[:, 1], mode='lines',
                    line={'color': self.COLORS['lane'], 'width': 1},
                    name='Lane centerlines', legendgroup='lanes', showlegend=i == 0,
                    hovertext=chunk.chunk_id, hoverinfo='text',
                ))

        hx, hy = self._xy(history)
        fig.add_trace(go.Scatter(
            x=hx, y=hy, mode='lines+markers', name='History',
            line={'color': self.COLORS['history'], 'width': 2}, marker={'size': 5},
        ))
        truth = prediction.get("ground_truth") or []
        if truth:
            gx, gy = self._xy(truth)
            fig.add_trace(go.Scatter(
                x=gx, y=gy, mode='lines+markers', name='Ground truth',
                line={'color': self.COLORS['ground_truth'], 'width': 2, 'dash': 'dot'}, marker={'size': 4},
            ))

        for index, path in enumerate(paths):
            slot = path.get("slot", str(index))
            color = self.COLORS.get(slot, self.COLORS['middle'])
            if not path.get("present", False):
                fig.add_trace(go.Scatter(
                    x=[None], y=[None], mode='lines', name=f'{slot} (no lane)',
                    line={'color': color, 'dash': 'dash'}, visible='legendonly',
                ))
                continue
            px_, py_ = self._xy(path["frames"])
            chosen = index == selected
            fig.add_trace(go.Scatter(
                x=px_, y=py_, mode='lines+markers',
                name=f'{slot} p={path.get("probability", 0.0):.2f}' + (' (selected)' if chosen else ''),
                line={'color': color, 'width': 3 if chosen else 1.5},
                marker={'size': 6 if chosen else 3},
            ))

        default_title = f'{prediction.get("scene_id", "")} / {prediction.get("agent_id", "")}'
        fig.update_layout(
            **self.layout_defaults,
            title={'text': title or default_title, 'x': 0.5},
            width=self.width,
            height=self.height,
            xaxis={'title': 'x (m)'},
            yaxis={'title': 'y (m)', 'scaleanchor': 'x', 'scaleratio': 1},
            legend={'orientation': 'h', 'y': -0.15},
        )
        return fig

    def create_horizon_chart(self, report: pd.DataFrame, title: str = "Displacement error by horizon") -> go.Figure:
        """
        ADE and FDE against horizon side by side, one line per variant.

        Args:
            report: comparison table with columns variant, metric, 1s..6s
            title: chart title

        Returns:
            Plotly Figure object
        """
        horizons = horizon_columns(report.columns)
        if not horizons or report.empty:
            raise ParseError("report has no horizon columns to plot")
        seconds = [int(c[:-1]) for c in horizons]

        fig = make_subplots(rows=1, cols=2, subplot_titles=("ADE", "FDE"))
        variants = list(dict.fromkeys(report["variant"]))
        for i, variant in enumerate(variants):
            color = self.VARIANT_PALETTE[i % len(self.VARIANT_PALETTE)]
            for col, metric in enumerate(("ADE", "FDE"), start=1):
                rows = report[(report["variant"] == variant) & (report["metric"] == metric)]
                if rows.empty:
                    continue
                values = rows.iloc[0][horizons].astype(float).tolist()
                fig.add_trace(
                    go.Scatter(
                        x=seconds, y=values, mode='lines+markers', name=variant,
                        legendgroup=variant, showlegend=col == 1,
                        line={'color': color, 'width': 2},
                        text=[f'{v:.2f}' for v in values], hovertemplate='%{x}s: %{text} m',
                    ),
                    row=1, col=col,
                )

        fig.update_layout(
            **self.layout_defaults,
            title={'text': title, 'x': 0.5},
            width=self.width * 1.5,
            height=self.height * 0.75,
        )
        fig.update_xaxes(title_text='Horizon (s)', dtick=1)
        fig.update_yaxes(title_text='Error (m)', rangemode='tozero')
        return fig

    def save_chart(self, fig: go.Figure, filepath: Path, format: str = 'json') -> Path:
        """
        Save a chart to file.

        Args:
            fig: Plotly Figure object
            filepath: Output file path
            format: 'json' (figure data) or 'html' (standalone page)

        Returns:
            Path to saved file
        """
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        if format == 'html':
            fig.write_html(str(filepath))
        elif format == 'json':
            filepath.write_text(fig.to_json(), encoding='utf-8')
        else:
            raise ValueError(f"unsupported chart format {format!r}")
        logger.info("Saved chart to %s", filepath)
        return filepath

    def figure_summary(self, fig: go.Figure) -> Dict[str, int]:
        """Trace count per legend group, used for quick console reports."""
        summary: Dict[str, int] = {}
        for trace in fig.data:
            key = trace.legendgroup or trace.name or ''
            summary[key] = summary.get(key, 0) + 1
        return summary

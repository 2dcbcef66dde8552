"""
Output Utilities Module
Helper functions for result files: JSON, CSV grid export and SVG plots
"""

import io
import json
import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from utils.config import Config  # noqa: E402

logger = logging.getLogger(__name__)

SVG_RC = {
    'svg.hashsalt': Config.APP_NAME,
    'svg.fonttype': 'none',
    'path.simplify': False,
}


def _plain(value):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class ResultWriter:
    """
    Utility class for writing result documents
    """

    @staticmethod
    def to_json(result):
        """
        Serialize a result document

        Args:
            result: dict (numpy values allowed)

        Returns:
            str: JSON text with schema_version, keys sorted
        """
        doc = {'schema_version': Config.SCHEMA_VERSION}
        doc.update(_plain(result))
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"

    @staticmethod
    def write_json(result, path):
        """
        Write a result document to disk

        Args:
            result: dict
            path: Output file path

        Returns:
            Path: written file
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ResultWriter.to_json(result), encoding="utf-8")
        logger.info("Wrote %s", path)
        return path

    @staticmethod
    def grid_frame(result):
        """
        Flatten the evaluation grid (and band/model columns) to a table

        Returns:
            pandas.DataFrame: one row per grid point
        """
        line = result.get('line') or {}
        frame = pd.DataFrame({'x': line.get('grid', []), 'mu': line.get('mu', [])})
        bc = result.get('inference')
        if bc:
            frame['mu_bc'] = bc['mu']
            for key in ('omega', 'se', 'dof', 'ci_lower', 'ci_upper'):
                if key in bc:
                    frame[key] = bc[key]
        band = result.get('band')
        if band:
            frame['band_lower'] = band['lower']
            frame['band_upper'] = band['upper']
        model = result.get('model_curve')
        if model:
            frame['model'] = model['m']
        return frame

    @staticmethod
    def write_csv(result, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ResultWriter.grid_frame(result).to_csv(path, index=False, float_format="%.17g")
        logger.info("Wrote %s", path)
        return path


def emit_svg(result, path=None):
    """
    Render dots, line, band and parametric overlay as an SVG document

    Output is byte-identical for identical input: the SVG hash salt is
    fixed and no date metadata is written.

    Args:
        result: dict with optional 'dots', 'line', 'band', 'model_curve',
            'residualized_dots'
        path: Optional file to write

    Returns:
        str: SVG text
    """
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(6.4, 4.8))
        ax = fig.add_subplot(1, 1, 1)

        line = result.get('line')
        band = result.get('band')
        if band and line:
            ax.fill_between(line['grid'], band['lower'], band['upper'], color="tab:blue",
                            alpha=0.2, linewidth=0, gid="band")
            ax.plot(line['grid'], band['lower'], color="tab:blue", linewidth=0.6, gid="band_lower")
            ax.plot(line['grid'], band['upper'], color="tab:blue", linewidth=0.6, gid="band_upper")
        if line:
            ax.plot(line['grid'], line['mu'], color="tab:blue", linewidth=1.5, gid="line")
        model = result.get('model_curve')
        if model and line:
            ax.plot(line['grid'], model['m'], color="tab:red", linestyle="--", linewidth=1.2,
                    gid="model")
        dots = result.get('dots')
        if dots:
            ax.scatter([d['x'] for d in dots], [d['y'] for d in dots], s=18, color="black",
                       zorder=3, gid="dots")
        other = result.get('residualized_dots')
        if other:
            ax.scatter([d['x'] for d in other], [d['y'] for d in other], s=18,
                       facecolors="none", edgecolors="tab:orange", zorder=3, gid="residualized")

        labels = result.get('labels', {})
        ax.set_xlabel(labels.get('x') or "x")
        ax.set_ylabel(labels.get('y') or "y")

        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={'Date': None})
    svg = buffer.getvalue()

    if path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
        logger.info("Wrote %s", path)
    return svg

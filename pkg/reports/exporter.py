"""
Report Exporter module.
Writes run artifacts: results documents (JSON, HTML), score tables,
ablation tables and the per-step training log.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any

import pandas as pd

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ["path", "score", "label"]


class StepLogWriter:
    """
    Append-only JSON-lines log, one record per training step.

    Usable as a context manager; records are flushed as they are written.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = None

    def __enter__(self) -> "StepLogWriter":
        self._file = open(self.path, "a", encoding="utf-8")
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def write(self, record: dict[str, Any]) -> None:
        if self._file is None:
            self._file = open(self.path, "a", encoding="utf-8")
        self._file.write(json.dumps(record) + "\n")
        self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def read_step_log(path: str | Path) -> pd.DataFrame:
    """Load a step log written by StepLogWriter into a DataFrame."""
    return pd.read_json(path, lines=True)


class ReportExporter:
    """
    Exports run results to various formats.

    Supports:
    - JSON: Machine-readable results document
    - HTML: Human-readable summary page
    - CSV: Score tables (path,score,label) and ablation tables
    """

    def __init__(self, output_dir: str | Path = "reports"):
        """
        Initialize the exporter.

        Args:
            output_dir: Directory to save reports.
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def export_json(
        self,
        results: dict[str, Any],
        filename: str = "results.json",
        metadata: dict[str, Any] | None = None,
    ) -> Path:
        """
        Export a results document to JSON.

        Args:
            results: Results document (key-value).
            filename: Output filename.
            metadata: Optional metadata stored under "metadata".

        Returns:
            Path to the exported file.
        """
        output_path = self.output_dir / filename
        document = dict(results)
        if metadata:
            document["metadata"] = metadata

        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, ensure_ascii=False, sort_keys=True)

        logger.info(f"JSON results exported to: {output_path}")
        return output_path

    def export_score_table(
        self,
        rows: pd.DataFrame | list[dict[str, Any]],
        filename: str = "scores.csv",
        append: bool = False,
    ) -> Path:
        """
        Write (or append to) a path,score,label table.

        Extra columns in rows follow the three fixed ones.

        Args:
            rows: Records with at least path and score; label may be empty.
            filename: Output filename.
            append: Append without a header if the file already exists.

        Returns:
            Path to the table.
        """
        output_path = self.output_dir / filename
        frame = pd.DataFrame(rows)
        for column in SCORE_COLUMNS:
            if column not in frame:
                frame[column] = None
        frame = frame[SCORE_COLUMNS + [c for c in frame.columns if c not in SCORE_COLUMNS]]

        write_header = not (append and output_path.exists())
        frame.to_csv(output_path, mode="a" if append else "w", header=write_header, index=False)
        logger.debug(f"Wrote {len(frame)} score rows to {output_path}")
        return output_path

    def export_table(self, table: pd.DataFrame, filename: str) -> Path:
        output_path = self.output_dir / filename
        table.to_csv(output_path, index=False)
        logger.info(f"Table exported to: {output_path}")
        return output_path

    def export_html(
        self,
        results: dict[str, Any],
        filename: str = "results.html",
        metadata: dict[str, Any] | None = None,
    ) -> Path:
        """
        Export a results document to an HTML summary page.

        Returns:
            Path to the exported file.
        """
        output_path = self.output_dir / filename
        html_content = self._generate_html(results, metadata or {})

        with open(output_path, "w", encoding="utf-8") as f:
            f.write(html_content)

        logger.info(f"HTML results exported to: {output_path}")
        return output_path

    @staticmethod
    def _format_metric(value: Any) -> str:
        if value is None:
            return "n/a"
        if isinstance(value, float):
            return f"{value * 100:.1f}"
        return str(value)

    def _generate_html(self, results: dict[str, Any], metadata: dict[str, Any]) -> str:
        stat_boxes = "".join(
            f"""
            <div class="stat-box">
                <div class="value">{self._format_metric(results.get(key))}</div>
                <div class="label">{label}</div>
            </div>"""
            for key, label in (
                ("image_auroc", "Image AUROC"),
                ("pixel_auroc", "Pixel AUROC"),
                ("f1", "F1"),
                ("acc", "ACC"),
            )
        )

        defect_rows = "".join(
            f"<tr><td>{defect}</td><td>{self._format_metric(value)}</td></tr>"
            for defect, value in sorted(results.get("per_defect_image_auroc", {}).items())
        )
        defect_html = ""
        if defect_rows:
            defect_html = f"""
            <section class="details">
                <h2>Image AUROC per defect type</h2>
                <table>{defect_rows}</table>
            </section>
            """

        detail_keys = ("category", "variant", "threshold", "decision_rule", "num_test_images", "seed")
        detail_rows = "".join(
            f"<tr><td>{k}</td><td>{results[k]}</td></tr>" for k in detail_keys if k in results
        )
        detail_rows += "".join(f"<tr><td>{k}</td><td>{v}</td></tr>" for k, v in metadata.items())

        return f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>Anomaly Detection Results</title>
    <style>
        * {{
            box-sizing: border-box;
            margin: 0;
            padding: 0;
        }}
        body {{
            font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', Roboto, Oxygen, Ubuntu, sans-serif;
            line-height: 1.6;
            color: #333;
            background-color: #f5f5f5;
            padding: 20px;
        }}
        .container {{
            max-width: 900px;
            margin: 0 auto;
            background: white;
            border-radius: 8px;
            box-shadow: 0 2px 10px rgba(0,0,0,0.1);
            overflow: hidden;
        }}
        header {{
            background: linear-gradient(135deg, #667eea 0%, #764ba2 100%);
            color: white;
            padding: 30px;
            text-align: center;
        }}
        .stats {{
            padding: 20px 30px;
            display: flex;
            gap: 20px;
            flex-wrap: wrap;
            border-bottom: 1px solid #dee2e6;
        }}
        .stat-box {{
            flex: 1;
            min-width: 150px;
            padding: 15px;
            background: #e9ecef;
            border-radius: 8px;
            text-align: center;
        }}
        .stat-box .value {{
            font-size: 2rem;
            font-weight: bold;
            color: #495057;
        }}
        .stat-box .label {{
            font-size: 0.9rem;
            color: #6c757d;
        }}
        .details {{
            padding: 20px 30px;
        }}
        .details table {{
            width: 100%;
            border-collapse: collapse;
        }}
        .details td {{
            padding: 8px;
            border-bottom: 1px solid #dee2e6;
        }}
        footer {{
            text-align: center;
            padding: 20px;
            background: #f8f9fa;
            color: #6c757d;
            font-size: 0.9rem;
        }}
    </style>
</head>
<body>
    <div class="container">
        <header>
            <h1>Anomaly Detection Results</h1>
        </header>

        <section class="stats">{stat_boxes}
        </section>

        {defect_html}

        <section class="details">
            <h2>Run Details</h2>
            <table>{detail_rows}</table>
        </section>

        <footer>
            Generated on {datetime.now().strftime("%Y-%m-%d %H:%M:%S")}
        </footer>
    </div>
</body>
</html>"""

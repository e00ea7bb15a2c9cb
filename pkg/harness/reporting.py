"""
Report rendering of metrics streams (CSV via pandas, XLSX via openpyxl)
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Border, Font, PatternFill, Side

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = {
    'greedy_accuracy': 'last',
    'loss': 'last',
    'mean_length': 'mean',
    'p95_length': 'last',
    'informative_fraction': 'mean',
    'rho': 'last',
    'distinct_count': 'last',
    'preference_accuracy': 'last',
    'held_out_accuracy': 'last',
    'abstention_rate': 'last',
}


def load_metrics(paths: Sequence) -> pd.DataFrame:
    frames = []
    for path in paths:
        path = Path(path)
        if path.stat().st_size == 0:
            logger.warning(f"Metrics file {path} is empty")
            continue
        frame = pd.read_json(path, lines=True)
        frame.insert(0, 'source', path.name)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=['source', 'stage', 'iteration'])
    return pd.concat(frames, ignore_index=True)


def summarize(metrics: pd.DataFrame) -> pd.DataFrame:
    """One row per (source, stage): iteration count plus last/mean of the key metrics"""
    if metrics.empty:
        return pd.DataFrame(columns=['source', 'stage', 'iterations'])
    ordered = metrics.sort_values(['source', 'stage', 'iteration'])
    grouped = ordered.groupby(['source', 'stage'], sort=True)
    summary = grouped['iteration'].count().to_frame('iterations')
    for name, how in SUMMARY_COLUMNS.items():
        if name in ordered.columns:
            summary[name] = grouped[name].agg(how)
    if 'greedy_accuracy' in ordered.columns:
        summary['best_greedy_accuracy'] = grouped['greedy_accuracy'].max()
    return summary.reset_index()


def write_csv_report(paths: Sequence, out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = load_metrics(paths)
    iterations_path = out_dir / 'report_iterations.csv'
    summary_path = out_dir / 'report_summary.csv'
    metrics.to_csv(iterations_path, index=False)
    summarize(metrics).to_csv(summary_path, index=False)
    logger.info(f"Wrote CSV report for {len(metrics)} records to {out_dir}")
    return iterations_path, summary_path


def _write_sheet(ws, frame: pd.DataFrame):
    headers = [str(c) for c in frame.columns]
    ws.append(headers)

    header_font = Font(bold=True)
    header_fill = PatternFill(start_color="EEEEEE", end_color="EEEEEE", fill_type="solid")
    thin_border = Border(
        left=Side(style='thin'),
        right=Side(style='thin'),
        top=Side(style='thin'),
        bottom=Side(style='thin')
    )
    for col in range(1, len(headers) + 1):
        cell = ws.cell(row=1, column=col)
        cell.font = header_font
        cell.fill = header_fill
        cell.border = thin_border

    for row in frame.itertuples(index=False):
        ws.append([None if pd.isna(value) else value for value in row])

    # Auto-adjust column widths
    for column in ws.columns:
        max_length = max(len(str(cell.value)) for cell in column if cell.value is not None)
        ws.column_dimensions[column[0].column_letter].width = min(max_length + 2, 40)

    ws.freeze_panes = 'A2'


def write_xlsx_report(paths: Sequence, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = load_metrics(paths)

    wb = Workbook()
    ws = wb.active
    ws.title = "Summary"
    _write_sheet(ws, summarize(metrics))
    _write_sheet(wb.create_sheet("Iterations"), metrics)

    path = out_dir / 'report.xlsx'
    wb.save(path)
    logger.info(f"Wrote XLSX report for {len(metrics)} records to {path}")
    return path


def report_paths(fmt: str, paths: Sequence, out_dir) -> List[Path]:
    if fmt == 'csv':
        return list(write_csv_report(paths, out_dir))
    if fmt == 'xlsx':
        return [write_xlsx_report(paths, out_dir)]
    raise ValueError(f"Unknown report format: {fmt}")

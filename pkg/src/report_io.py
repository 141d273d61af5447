"""
Report Input/Output
JSON reports, residual-history and comparison CSVs, Matrix Market factors
and the residual spot-check that re-derives CSV rows from stored snapshots
"""

import json
import numpy as np
import pandas as pd
import scipy.io as sio
from datetime import datetime
from typing import Dict, List, Optional
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import TOOL_VERSION

from .eba_driver import LowRankSolution, residual_norm
from .exceptions import NDREError

logger = logging.getLogger(__name__)

REPORT_FILE = 'report.json'
RESIDUALS_FILE = 'residuals.csv'
COMPARISON_FILE = 'comparison.csv'
COMPARISON_TABLE_FILE = 'comparison.txt'
SNAPSHOT_FILE = 'snapshots.npz'
FACTORS_DIR = 'factors'
RESIDUAL_COLUMNS = ['m_or_step', 'time', 'residual_rel', 'rank', 'wall_seconds']


def convert_types(obj):
    """Numpy scalars and arrays to native Python types for JSON"""
    if isinstance(obj, dict):
        return {str(key): convert_types(value) for key, value in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [convert_types(item) for item in obj]
    elif hasattr(obj, 'item') and getattr(obj, 'size', 1) == 1 and not isinstance(obj, np.ndarray):
        return obj.item()
    elif hasattr(obj, 'tolist'):
        return obj.tolist()
    else:
        return obj


def save_report(report: Dict, filename: str) -> str:
    """Write a report dict as indented JSON with an export metadata block"""
    json_report = convert_types(report)
    json_report['metadata'] = {
        'tool_version': TOOL_VERSION,
        'export_date': datetime.now().isoformat(),
        'export_format': 'json'
    }
    with open(filename, 'w') as f:
        json.dump(json_report, f, indent=2, default=str)
    return filename


def load_report(filename: str) -> Dict:
    with open(filename) as f:
        return json.load(f)


def residual_history_frame(rows: List[Dict]) -> pd.DataFrame:
    """Residual history with the fixed leading columns, extra columns after them"""
    frame = pd.DataFrame(rows)
    for column in RESIDUAL_COLUMNS:
        if column not in frame.columns:
            frame[column] = np.nan
    extra = [c for c in frame.columns if c not in RESIDUAL_COLUMNS]
    return frame[RESIDUAL_COLUMNS + extra]


def write_residual_history(rows: List[Dict], filename: str) -> str:
    residual_history_frame(rows).to_csv(filename, index=False)
    return filename


def write_factors(solution: LowRankSolution, directory: str) -> List[str]:
    """Z1 and Z2 of every output time as Matrix Market arrays plus a times index"""
    os.makedirs(directory, exist_ok=True)
    written = []
    index_rows = []
    for i, (t, pair) in enumerate(zip(solution.times, solution.factors)):
        z1 = os.path.join(directory, f'Z1_{i:04d}.mtx')
        z2 = os.path.join(directory, f'Z2_{i:04d}.mtx')
        sio.mmwrite(z1, np.atleast_2d(pair.Z1))
        sio.mmwrite(z2, np.atleast_2d(pair.Z2))
        written.extend([z1, z2])
        index_rows.append({'index': i, 'time': float(t), 'rank': pair.rank,
                           'Z1': os.path.basename(z1), 'Z2': os.path.basename(z2)})
    index_file = os.path.join(directory, 'times.csv')
    pd.DataFrame(index_rows).to_csv(index_file, index=False)
    written.append(index_file)
    return written


def read_factors(directory: str) -> pd.DataFrame:
    """Times index of a factors directory with the loaded Z1/Z2 arrays attached"""
    index = pd.read_csv(os.path.join(directory, 'times.csv'))
    index['Z1'] = [np.asarray(sio.mmread(os.path.join(directory, name))) for name in index['Z1']]
    index['Z2'] = [np.asarray(sio.mmread(os.path.join(directory, name))) for name in index['Z2']]
    return index


def save_snapshots(snapshots: List[Dict[str, np.ndarray]], rows: List[Dict], filename: str) -> Optional[str]:
    """Residual snapshots of every check or step, keyed by m_or_step"""
    if not snapshots:
        return None
    arrays = {}
    for row, snapshot in zip(rows, snapshots):
        key = int(row['m_or_step'])
        for name, value in snapshot.items():
            arrays[f'{name}_{key}'] = np.asarray(value)
    np.savez_compressed(filename, **arrays)
    return filename


def recompute_residuals(report_dir: str, residual: str = 'fro') -> pd.DataFrame:
    """
    Re-derive every residual in residuals.csv from the stored snapshots

    Returns:
        DataFrame with m_or_step, stored and recomputed relative residuals and their difference
    """
    csv_path = os.path.join(report_dir, RESIDUALS_FILE)
    npz_path = os.path.join(report_dir, SNAPSHOT_FILE)
    if not os.path.exists(npz_path):
        raise NDREError(f"no residual snapshots in {report_dir}")

    history = pd.read_csv(csv_path)
    rows = []
    with np.load(npz_path) as data:
        for _, row in history.iterrows():
            key = int(row['m_or_step'])
            if f'Y_{key}' in data:
                two, fro = residual_norm(data[f'Y_{key}'], data[f'T_next_A_{key}'], data[f'T_next_D_{key}'])
                value = fro if residual == 'fro' else two
            elif f'R_left_{key}' in data:
                product = data[f'R_left_{key}'] @ data[f'R_right_{key}'].T
                value = float(np.linalg.norm(product, 'fro' if residual == 'fro' else 2))
            else:
                continue
            value /= float(data[f'scale_{key}'])
            rows.append({'m_or_step': key, 'stored': float(row['residual_rel']), 'recomputed': value,
                         'difference': abs(value - float(row['residual_rel']))})

    result = pd.DataFrame(rows, columns=['m_or_step', 'stored', 'recomputed', 'difference'])
    logger.info(f"recomputed {len(result)} residuals, max difference "
                f"{result['difference'].max() if len(result) else 0.0:.3e}")
    return result


def render_table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f'{v:.3e}')


def write_comparison(frame: pd.DataFrame, out_dir: str) -> Dict[str, str]:
    """comparison.csv plus the same table rendered as text"""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, COMPARISON_FILE)
    text_path = os.path.join(out_dir, COMPARISON_TABLE_FILE)
    frame.to_csv(csv_path, index=False)
    with open(text_path, 'w') as f:
        f.write(render_table(frame) + '\n')
    return {'csv': csv_path, 'table': text_path}


def write_solution_bundle(solution: LowRankSolution, out_dir: str, extra: Optional[Dict] = None) -> Dict[str, str]:
    """
    report.json, residuals.csv, snapshots.npz and factors/ for one solve

    Args:
        solution: Solver output
        out_dir: Target directory (created when missing)
        extra: Additional report sections (problem, options, oracle, bounds)

    Returns:
        Paths of the written artifacts
    """
    os.makedirs(out_dir, exist_ok=True)
    report = solution.report.to_dict()
    report.update({'times': solution.times, 'final_ranks': [pair.rank for pair in solution.factors]})
    if extra:
        report.update(extra)

    paths = {
        'report': save_report(report, os.path.join(out_dir, REPORT_FILE)),
        'residuals': write_residual_history(solution.report.residual_history,
                                            os.path.join(out_dir, RESIDUALS_FILE)),
    }
    snapshots = save_snapshots(solution.report.snapshots, solution.report.residual_history,
                               os.path.join(out_dir, SNAPSHOT_FILE))
    if snapshots:
        paths['snapshots'] = snapshots
    write_factors(solution, os.path.join(out_dir, FACTORS_DIR))
    paths['factors'] = os.path.join(out_dir, FACTORS_DIR)
    logger.info(f"wrote solve artifacts to {out_dir}")
    return paths

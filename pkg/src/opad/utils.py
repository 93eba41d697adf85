import io
import json
import logging
import os
import zipfile
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

# Fixed member timestamp so identical arrays give identical archive bytes
_ZIP_DATE_TIME = (1980, 1, 1, 0, 0, 0)
_META_KEY = "__meta__"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """
    Setup logging configuration

    Args:
        level: Root log level name
        log_file: Optional path of a log file written alongside the console
    """
    handlers = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )


def save_results(results: Dict[str, Any], output_path: str) -> bool:
    """
    Save a results dictionary to a JSON file

    Args:
        results: JSON-serialisable dictionary
        output_path: Output file path

    Returns:
        True if successful, False otherwise
    """
    try:
        os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
        with open(output_path, 'w', encoding='utf-8') as f:
            json.dump(results, f, indent=2, sort_keys=True, default=_json_default)
        return True
    except (OSError, TypeError) as e:
        logging.error(f"Error saving results: {str(e)}")
        return False


def save_results_csv(df: pd.DataFrame, output_path: str) -> str:
    """
    Save a results table as CSV with a stable float format

    Args:
        df: Table to write
        output_path: Output file path

    Returns:
        The path written
    """
    os.makedirs(os.path.dirname(os.path.abspath(output_path)), exist_ok=True)
    df.to_csv(output_path, index=False, float_format="%.10g", lineterminator="\n")
    return output_path


def write_npz(path: str, arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> str:
    """
    Write arrays plus a JSON metadata header as a deterministic ``.npz`` archive

    ``numpy.load`` reads the result; unlike ``numpy.savez`` the member
    timestamps are fixed, so the bytes depend only on the content.

    Args:
        path: Output archive path
        arrays: Named arrays (no object dtypes)
        metadata: JSON-serialisable header stored under ``__meta__``

    Returns:
        The path written
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    header = json.dumps(metadata, sort_keys=True, default=_json_default).encode('utf-8')
    members = dict(arrays)
    members[_META_KEY] = np.frombuffer(header, dtype=np.uint8)

    with zipfile.ZipFile(path, mode='w', compression=zipfile.ZIP_DEFLATED) as archive:
        for name in sorted(members):
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.ascontiguousarray(members[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE_TIME)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            archive.writestr(info, buffer.getvalue())
    return path


def read_npz(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read an archive written by ``write_npz``

    Returns:
        (arrays, metadata)
    """
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files if name != _META_KEY}
        if _META_KEY not in archive.files:
            raise ValueError(f"{path} has no metadata header")
        metadata = json.loads(archive[_META_KEY].tobytes().decode('utf-8'))
    return arrays, metadata


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")

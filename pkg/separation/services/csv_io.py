"""
CSV and manifest I/O for the management commands.

File conventions:
    - comma-separated, UTF-8, LF line endings, one header row
    - signal tables are samples × channels (the transpose of SignalMatrix)
    - matrices are written row-major under the header c1..cN
    - floats use the shortest repr that round-trips exactly

Every writer goes through a temporary file and os.replace, so a crashed run
never leaves a half-written output behind.
"""
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import hashlib
import logging
import os
import tempfile

import numpy as np
import pandas as pd

from separation.exceptions import CSVParseError
from separation.schemas import RunManifest
from separation.services.moments import SignalMatrix

logger = logging.getLogger(__name__)

MIN_CHANNELS = 2
MIN_SAMPLES = 100


def _format_frame(frame: pd.DataFrame) -> pd.DataFrame:
    def fmt(value):
        if value is None or (isinstance(value, float) and np.isnan(value)):
            return ""
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        return str(value)
    return frame.map(fmt)


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_frame(path: Path, frame: pd.DataFrame) -> None:
    _atomic_write_text(path, _format_frame(frame).to_csv(index=False, lineterminator="\n"))


def read_signals_csv(
    path: Path,
    min_channels: int = MIN_CHANNELS,
    min_samples: int = MIN_SAMPLES,
) -> Tuple[SignalMatrix, List[str]]:
    """
    Read a samples × channels CSV into a SignalMatrix.

    Returns:
        (signals, channel names from the header)

    Raises:
        CSVParseError: unreadable file, ragged rows, non-numeric or non-finite
            cells (with 1-based file row and column name), or too few
            channels/samples.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise CSVParseError(f"Input file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise CSVParseError(f"Input file is empty: {path}") from None
    except pd.errors.ParserError as exc:
        raise CSVParseError(f"Malformed CSV: {exc}") from None

    names = [str(name).strip() for name in frame.columns]
    for name in frame.columns:
        raw = frame[name].str.strip()
        values = pd.to_numeric(raw, errors="coerce").astype(float)
        bad = values.isna() | ~np.isfinite(values)
        if bad.any():
            index = int(np.argmax(bad.to_numpy()))
            # header is file row 1
            raise CSVParseError(
                f"Expected a finite number, got '{raw.iloc[index]}'", row=index + 2, column=str(name).strip()
            )
        frame[name] = values

    if len(names) < min_channels:
        raise CSVParseError(f"Need at least {min_channels} channels, found {len(names)}")
    if len(frame) < min_samples:
        raise CSVParseError(f"Need at least {min_samples} samples, found {len(frame)}")

    signals = SignalMatrix.from_samples(frame.to_numpy(dtype=float))
    logger.info(f"Read {signals.samples} samples x {signals.channels} channels from {path}")
    return signals, names


def matrix_header(n: int) -> List[str]:
    return [f"c{j + 1}" for j in range(n)]


def write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    _write_frame(path, pd.DataFrame(matrix, columns=matrix_header(matrix.shape[1])))


def read_matrix_csv(path: Path) -> np.ndarray:
    try:
        return pd.read_csv(path).to_numpy(dtype=float)
    except (FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise CSVParseError(f"Cannot read matrix from {path}: {exc}") from None


def write_signals_csv(path: Path, signals: SignalMatrix, names: Optional[Sequence[str]] = None) -> None:
    """Write a SignalMatrix as samples × channels."""
    names = list(names) if names is not None else matrix_header(signals.channels)
    _write_frame(path, pd.DataFrame(signals.data.T, columns=names))


def write_frame_csv(path: Path, frame: pd.DataFrame) -> None:
    _write_frame(path, frame)


def write_manifest(path: Path, manifest: RunManifest) -> None:
    _atomic_write_text(path, manifest.model_dump_json(indent=2) + "\n")


def read_manifest(path: Path) -> RunManifest:
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


def file_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def array_checksum(data: np.ndarray) -> str:
    """Checksum of a float array's bytes (used when the data did not come from a file)."""
    return f"sha256:{hashlib.sha256(np.ascontiguousarray(data, dtype=float).tobytes()).hexdigest()}"

"""
Matrix ingestion and artifact emission: dense and triplet CSV, binary PGM,
PNG heatmaps, trace CSV, JSON run reports and raw posterior-sample dumps.
"""
import json
import logging
import re
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from modules.errors import IndexOutOfGridError, MatrixFormatError  # noqa: E402
from modules.linalg import check_finite  # noqa: E402
from modules.smg_model import ObservationSet  # noqa: E402

logger = logging.getLogger(__name__)

FORMATS = ("dense-csv", "triplet-csv", "pgm")
PALETTES = {"grayscale": "gray", "diverging": "RdBu_r"}
FLOAT_FMT = "%.17g"
_SHAPE_RE = re.compile(r"#\s*shape\s*=\s*(\d+)\s*,\s*(\d+)")


class NormalizedImage(NamedTuple):
    """Zero-mean, unit-variance image plus the constants to undo the scaling."""

    matrix: np.ndarray
    raw: np.ndarray
    mean: float
    std: float

    def invert(self, M: np.ndarray) -> np.ndarray:
        return np.asarray(M) * self.std + self.mean


def infer_format(path: Union[str, Path]) -> str:
    """By suffix; a .csv whose first line is a `# shape=` header is a triplet file."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return "pgm"
    if suffix in (".csv", ".txt"):
        if Path(path).exists():
            with open(path, "r", encoding="utf-8") as f:
                if _SHAPE_RE.match(f.readline().strip()):
                    return "triplet-csv"
        return "dense-csv"
    raise MatrixFormatError(f"cannot infer matrix format from '{path}'; pass one of {FORMATS}")


def load_matrix(path: Union[str, Path], fmt: Optional[str] = None,
                shape: Optional[Tuple[int, int]] = None) -> Union[np.ndarray, ObservationSet, NormalizedImage]:
    path = Path(path)
    fmt = fmt or infer_format(path)
    if not path.exists():
        raise FileNotFoundError(f"Matrix file not found: {path}")
    if fmt == "dense-csv":
        return load_dense_csv(path)
    if fmt == "triplet-csv":
        return load_triplet_csv(path, shape)
    if fmt == "pgm":
        return normalize_image(read_pgm(path))
    raise MatrixFormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_dense_csv(path: Union[str, Path]) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise MatrixFormatError(f"malformed dense CSV '{path}': {exc}") from exc
    if M.size == 0:
        raise MatrixFormatError(f"dense CSV '{path}' is empty")
    if not np.all(np.isfinite(M)):
        raise MatrixFormatError(f"dense CSV '{path}' contains non-finite values")
    return M


def save_dense_csv(M: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(check_finite(M)), delimiter=",", fmt=FLOAT_FMT)
    logger.info(f"Saved matrix to {path}")
    return path


def load_triplet_csv(path: Union[str, Path], shape: Optional[Tuple[int, int]] = None) -> ObservationSet:
    """Rows `i,j,value` (0-based); the grid comes from a `# shape=m1,m2` line or `shape`."""
    rows, cols, vals = [], [], []
    declared = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                match = _SHAPE_RE.match(line)
                if match:
                    declared = (int(match.group(1)), int(match.group(2)))
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise MatrixFormatError(f"{path}:{lineno}: expected 'i,j,value', got {line!r}")
            try:
                rows.append(int(parts[0]))
                cols.append(int(parts[1]))
                vals.append(float(parts[2]))
            except ValueError as exc:
                raise MatrixFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise MatrixFormatError(f"triplet file '{path}' holds no entries")
    shape = shape or declared or (max(rows) + 1, max(cols) + 1)
    rows_a, cols_a = np.asarray(rows), np.asarray(cols)
    if rows_a.min() < 0 or cols_a.min() < 0 or rows_a.max() >= shape[0] or cols_a.max() >= shape[1]:
        raise IndexOutOfGridError(f"triplet indices in '{path}' fall outside the {shape[0]}x{shape[1]} grid")
    linear = cols_a * shape[0] + rows_a
    uniq, counts = np.unique(linear, return_counts=True)
    if np.any(counts > 1):
        dup = int(uniq[counts > 1][0])
        raise MatrixFormatError(f"duplicate triplet index ({dup % shape[0]}, {dup // shape[0]}) in '{path}'")
    return ObservationSet(shape[0], shape[1], rows_a, cols_a, np.asarray(vals))


def save_triplet_csv(obs: ObservationSet, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# shape={obs.m1},{obs.m2}\n")
        for (i, j), v in obs.entries:
            f.write(f"{i},{j},{FLOAT_FMT % v}\n")
    logger.info(f"Saved {obs.n} observations to {path}")
    return path


def write_table_csv(header: Sequence[str], rows: np.ndarray, path: Union[str, Path]) -> Path:
    """Numeric table with a plain header line (trace CSVs, coherence tables)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(rows), delimiter=",", fmt=FLOAT_FMT,
               header=",".join(header), comments="")
    logger.info(f"Saved {len(rows)} rows to {path}")
    return path


def write_rows_csv(rows: Sequence[Dict], path: Union[str, Path]) -> Path:
    """Records with identical keys; columns follow the first record's key order."""
    if not rows:
        raise MatrixFormatError(f"no rows to write to '{path}'")
    header = list(rows[0])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            if list(row) != header:
                raise MatrixFormatError(f"row keys {list(row)} do not match header {header}")
            f.write(",".join(_cell(row[k]) for k in header) + "\n")
    logger.info(f"Saved {len(rows)} rows to {path}")
    return path


def _cell(value) -> str:
    if isinstance(value, float):
        return FLOAT_FMT % value
    return str(value)


def write_report(report: Dict, path: Union[str, Path]) -> Path:
    """JSON run report; key order is the insertion order of `report`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, ensure_ascii=False, allow_nan=True)
        f.write("\n")
    logger.info(f"Saved run report to {path}")
    return path


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    while pos < len(data):
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Binary (P5) greymap with maxval <= 255, as a uint8 array."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise MatrixFormatError(f"'{path}' is not a binary PGM (magic {magic!r})")
    try:
        width_t, pos = _read_token(data, pos)
        height_t, pos = _read_token(data, pos)
        maxval_t, pos = _read_token(data, pos)
        width, height, maxval = int(width_t), int(height_t), int(maxval_t)
    except ValueError as exc:
        raise MatrixFormatError(f"malformed PGM header in '{path}'") from exc
    if not 0 < maxval <= 255:
        raise MatrixFormatError(f"only 8-bit PGM is supported, '{path}' has maxval {maxval}")
    pixels = data[pos + 1:pos + 1 + width * height]
    if len(pixels) != width * height:
        raise MatrixFormatError(f"'{path}' is truncated: expected {width * height} pixels, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(pixels: np.ndarray, path: Union[str, Path]) -> Path:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise MatrixFormatError("PGM output needs a 2-D uint8 array")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = pixels.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    logger.info(f"Saved PGM image to {path}")
    return path


def normalize_image(raw: np.ndarray) -> NormalizedImage:
    values = raw.astype(np.float64)
    mean = float(values.mean())
    std = float(values.std())
    if std == 0.0:
        std = 1.0
    return NormalizedImage((values - mean) / std, raw, mean, std)


def render_heatmap(M: np.ndarray, path: Union[str, Path], palette: str = "grayscale") -> Path:
    """8-bit PNG, one pixel per entry, linear over [min, max]; scale goes to <path>.scale.txt."""
    M = check_finite(M, "heatmap matrix")
    if M.ndim != 2:
        raise MatrixFormatError(f"heatmap needs a 2-D matrix, got shape {M.shape}")
    if palette not in PALETTES:
        raise MatrixFormatError(f"unknown palette {palette!r}; expected one of {sorted(PALETTES)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lo, hi = float(M.min()), float(M.max())
    scaled = (M - lo) / (hi - lo) if hi > lo else np.zeros_like(M)
    rgba = matplotlib.colormaps[PALETTES[palette]](scaled, bytes=True)
    plt.imsave(path, rgba, format="png", metadata={"Software": None})
    scale_path = path.with_name(path.name + ".scale.txt")
    scale_path.write_text(f"palette={palette}\nmin={FLOAT_FMT % lo}\nmax={FLOAT_FMT % hi}\n", encoding="utf-8")
    logger.info(f"Saved heatmap to {path}")
    return path


# ---------------------------------------------------------------------------
# raw posterior samples
# ---------------------------------------------------------------------------

def save_samples_binary(x_samples: np.ndarray, path: Union[str, Path]) -> Path:
    """16-byte header (m1, m2 as little-endian uint64), then T row-major float64 frames."""
    x_samples = np.asarray(x_samples, dtype=np.float64)
    if x_samples.ndim != 3:
        raise MatrixFormatError(f"expected a (T, m1, m2) array, got shape {x_samples.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array(x_samples.shape[1:], dtype="<u8").tobytes()
    path.write_bytes(header + np.ascontiguousarray(x_samples, dtype="<f8").tobytes())
    logger.info(f"Saved {x_samples.shape[0]} posterior samples to {path}")
    return path


def load_samples_binary(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise MatrixFormatError(f"'{path}' is too short for a sample header")
    m1, m2 = (int(v) for v in np.frombuffer(data[:16], dtype="<u8"))
    frame = m1 * m2 * 8
    body = data[16:]
    if frame == 0 or len(body) % frame:
        raise MatrixFormatError(f"'{path}' body is not a whole number of {m1}x{m2} frames")
    return np.frombuffer(body, dtype="<f8").reshape(-1, m1, m2).astype(np.float64)


def list_artifacts(out_dir: Union[str, Path]) -> List[Path]:
    return sorted(p for p in Path(out_dir).iterdir() if p.is_file())

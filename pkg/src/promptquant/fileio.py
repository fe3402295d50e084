"""On-disk formats for weight tensors, codebooks, and diagnostics.

Weights travel either as a raw little-endian float32 stream with a ``.meta``
sidecar (key/value lines: format, count, shape) or as plain text with one
value per line.  Codebooks and diagnostics are key/value text records, one
``key=value`` pair per line.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import BadConfig, LengthMismatch
from .quantizer import Codebook, NormStats, WeightTensor

SIDECAR_SUFFIX = ".meta"


def write_records(path: Path, records: dict[str, object]) -> None:
    lines = [f"{k}={format_value(v)}" for k, v in records.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(format_value(x) for x in np.asarray(v).tolist())
    return str(v)


def read_records(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def sidecar_path(data_path: Path) -> Path:
    return Path(str(data_path) + SIDECAR_SUFFIX)


def write_f32(path: Path, w: WeightTensor) -> None:
    """Raw little-endian float32 stream plus sidecar with shape and count."""
    path = Path(path)
    path.write_bytes(w.values.astype("<f4").tobytes())
    write_records(
        sidecar_path(path),
        {"format": "f32le", "count": w.count, "shape": ",".join(str(s) for s in w.shape)},
    )


def read_f32(path: Path) -> WeightTensor:
    """Read a raw float32 stream; the sidecar is honored when present."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 4 != 0:
        raise LengthMismatch(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    shape: tuple[int, ...] = (values.size,)
    meta = sidecar_path(path)
    if meta.exists():
        records = read_records(meta)
        if "count" in records and int(records["count"]) != values.size:
            raise LengthMismatch(
                f"{path}: sidecar declares {records['count']} values, file holds {values.size}"
            )
        if "shape" in records:
            shape = tuple(int(s) for s in records["shape"].split(",") if s)
    return WeightTensor(values, shape)


def write_text(path: Path, w: WeightTensor) -> None:
    """One value per line, full precision."""
    Path(path).write_text("\n".join(format(v, ".17g") for v in w.values) + "\n")


def read_text(path: Path) -> WeightTensor:
    values = [float(line) for line in Path(path).read_text().split()]
    return WeightTensor(np.array(values, dtype=np.float64))


def read_weights(path: Path, fmt: str = "auto") -> WeightTensor:
    """Dispatch on format: 'f32', 'text', or 'auto' (by file extension)."""
    path = Path(path)
    if fmt == "auto":
        fmt = "f32" if path.suffix in (".f32", ".bin", ".raw") else "text"
    if fmt == "f32":
        return read_f32(path)
    if fmt == "text":
        return read_text(path)
    raise BadConfig(f"unknown weight format {fmt!r}")


def write_weights(path: Path, w: WeightTensor, fmt: str = "auto") -> None:
    path = Path(path)
    if fmt == "auto":
        fmt = "f32" if path.suffix in (".f32", ".bin", ".raw") else "text"
    if fmt == "f32":
        write_f32(path, w)
    elif fmt == "text":
        write_text(path, w)
    else:
        raise BadConfig(f"unknown weight format {fmt!r}")


def codebook_records(cb: Codebook, n: int | None = None) -> dict[str, object]:
    rec: dict[str, object] = {
        "bits": cb.bits,
        "mu": float(cb.stats.mu),
        "sigma": float(cb.stats.sigma),
        "centers": cb.centers,
    }
    if n is not None:
        rec["count"] = n
    return rec


def write_codebook(path: Path, cb: Codebook, n: int | None = None) -> None:
    write_records(path, codebook_records(cb, n))


def read_codebook(path: Path) -> Codebook:
    rec = read_records(path)
    try:
        bits = int(rec["bits"])
        mu = float(rec["mu"])
        sigma = float(rec["sigma"])
        centers = np.array([float(c) for c in rec["centers"].split(",")])
    except KeyError as exc:
        raise BadConfig(f"{path}: codebook record missing field {exc}") from exc
    return Codebook(bits=bits, centers=centers, stats=NormStats(mu=mu, sigma=sigma))

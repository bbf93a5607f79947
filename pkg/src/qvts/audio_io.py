"""WAV, CSV and JSON input/output. Every writer replaces its target atomically."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .spectral import AudioBuffer


class AudioIOError(OSError):
    pass


def read_wav(path) -> AudioBuffer:
    """Read a PCM16, PCM32 or float WAV as floats in [-1, 1]; stereo is averaged to mono."""
    path = Path(path)
    if not path.is_file():
        raise AudioIOError(f"no such file: {path}")
    try:
        sr, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise AudioIOError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2.0**31
    elif data.dtype == np.uint8:
        x = (data.astype(float) - 128) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(float)
    else:
        raise AudioIOError(f"unsupported sample format {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioIOError(f"empty WAV {path}")
    return AudioBuffer(x, sr)


def _atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_wav(path, audio: AudioBuffer, fmt: str = "pcm16") -> Path:
    """Write mono WAV as ``pcm16`` (clipped to full scale) or ``float32``."""
    x = np.asarray(audio.samples, dtype=float)
    if fmt == "pcm16":
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    buf = io.BytesIO()
    wavfile.write(buf, int(audio.sample_rate), data)
    return _atomic_write(path, buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return _atomic_write(path, buf.getvalue().encode())


def write_json(path, obj) -> Path:
    return _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def write_text(path, text: str) -> Path:
    return _atomic_write(path, text.encode())

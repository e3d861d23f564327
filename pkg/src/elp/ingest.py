"""Reading ECG recordings and annotations, and cutting labelled examples.

Supports WFDB headers, signal files in formats 212 and 16, MIT binary
annotation files, and single-lead CSV conversions.  Labelled examples are cut
either as fixed-length rhythm segments (AFIB detection) or from beat
annotations grouped by AAMI class.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = (212, 16)
DEFAULT_GAIN = 200.0


class WfdbError(ValueError):
    """Malformed or unsupported WFDB input."""


class UnsupportedFormatError(WfdbError):
    pass


class DecodeError(WfdbError):
    pass


class CsvRecordError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Data types


@dataclass(frozen=True)
class Channel:
    name: str
    gain: float = DEFAULT_GAIN  # adu per mV
    baseline: int = 0
    resolution: int = 12
    fmt: int = 212
    filename: str = ""
    init_value: int = 0
    checksum: int | None = None


@dataclass(frozen=True)
class Annotation:
    sample: int
    symbol: str
    aux: str = ""


@dataclass(frozen=True)
class EcgRecord:
    record_id: str
    channels: tuple[Channel, ...]
    signal: np.ndarray  # shape (n_channels, n_samples), mV
    fs: float
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        if sig.ndim == 1:
            sig = sig[None, :]
        if sig.ndim != 2:
            raise ValueError("signal must be (n_channels, n_samples)")
        if sig.shape[0] != len(self.channels):
            raise ValueError(
                f"{sig.shape[0]} signal rows but {len(self.channels)} channel descriptors"
            )
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        n = sig.shape[1]
        prev = -1
        for ann in self.annotations:
            # equal indices occur in real files (rhythm + beat on one sample)
            if ann.sample < prev or ann.sample >= n or ann.sample < 0:
                raise ValueError(f"annotation at sample {ann.sample} out of order or range")
            prev = ann.sample
        sig.setflags(write=False)
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    def lead(self, index: int = 0) -> np.ndarray:
        return self.signal[index]


@dataclass(frozen=True)
class HeaderInfo:
    record_name: str
    n_channels: int
    fs: float
    n_samples: int | None
    channels: tuple[Channel, ...]
    comments: tuple[str, ...] = ()
    unsupported: tuple[int, ...] = ()


@dataclass(frozen=True)
class SegmentLabelConfig:
    segment_seconds: float = 5.0
    p_threshold: float = 0.5
    positive_rhythm_label: str = "AFIB"

    def __post_init__(self):
        if not 0.0 <= self.p_threshold <= 1.0:
            raise ValueError("p_threshold must lie in [0, 1]")
        if not self.segment_seconds > 0:
            raise ValueError("segment_seconds must be positive")


@dataclass
class LabeledExample:
    record_id: str
    channel_index: int
    start: int
    end: int
    label: int
    payload: np.ndarray | None = None
    beats: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty sample range [{self.start}, {self.end})")


# ---------------------------------------------------------------------------
# AAMI grouping

AAMI_GROUPS = ("N", "S", "V", "F", "Q")

AAMI_CLASS_MAP: dict[str, str] = {
    "N": "N", "L": "N", "R": "N", "e": "N", "j": "N",
    "A": "S", "a": "S", "J": "S", "S": "S",
    "V": "V", "E": "V",
    "F": "F",
    "/": "Q", "f": "Q", "U": "Q",
}

# WFDB writes unclassifiable beats with the 'Q' mnemonic
_SYMBOL_ALIASES = {"Q": "U"}


def aami_group(symbol: str) -> str | None:
    """AAMI group for a beat symbol, or None for non-beat annotations."""
    symbol = _SYMBOL_ALIASES.get(symbol, symbol)
    return AAMI_CLASS_MAP.get(symbol)


# ---------------------------------------------------------------------------
# Header


_RECORD_LINE = re.compile(
    r"^(?P<name>[^\s/]+)(?:/(?P<nseg>\d+))?\s+(?P<nsig>\d+)"
    r"(?:\s+(?P<fs>[0-9.eE+-]+)(?:/[0-9.eE+-]+)?(?:\([0-9.eE+-]+\))?"
    r"(?:\s+(?P<nsamp>\d+))?)?"
)
_FORMAT_FIELD = re.compile(r"^(?P<fmt>\d+)(?:x\d+)?(?::\d+)?(?:\+\d+)?$")
_GAIN_FIELD = re.compile(r"^(?P<gain>[0-9.eE+-]+)(?:\((?P<base>-?\d+)\))?(?:/(?P<units>\S+))?$")


def parse_wfdb_header(data: bytes | str) -> HeaderInfo:
    """Parse the text of a ``.hea`` file.

    Formats other than 212 and 16 are recorded in ``unsupported`` rather than
    rejected here; :func:`read_wfdb_record` refuses them.
    """
    text = data.decode("ascii", errors="replace") if isinstance(data, bytes) else data
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    comments = tuple(ln[1:].strip() for _, ln in lines if ln.startswith("#"))
    body = [(no, ln) for no, ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise WfdbError("header has no record line")

    line_no, rec_line = body[0]
    m = _RECORD_LINE.match(rec_line)
    if m is None:
        raise WfdbError(f"line {line_no}: malformed record line {rec_line!r}")
    n_channels = int(m["nsig"])
    if n_channels < 1:
        raise WfdbError(f"line {line_no}: record declares {n_channels} channels")
    fs = float(m["fs"]) if m["fs"] else 250.0
    if not fs > 0:
        raise WfdbError(f"line {line_no}: sampling frequency must be positive")
    n_samples = int(m["nsamp"]) if m["nsamp"] else None

    sig_lines = body[1:]
    if len(sig_lines) != n_channels:
        raise WfdbError(
            f"line {line_no}: record declares {n_channels} channels but "
            f"{len(sig_lines)} signal lines follow"
        )

    channels = []
    unsupported = []
    for no, ln in sig_lines:
        parts = ln.split()
        if len(parts) < 2:
            raise WfdbError(f"line {no}: signal line needs a file name and format")
        fm = _FORMAT_FIELD.match(parts[1])
        if fm is None:
            raise WfdbError(f"line {no}: bad format field {parts[1]!r}")
        fmt = int(fm["fmt"])
        if fmt not in SUPPORTED_FORMATS:
            unsupported.append(fmt)

        gain, baseline, resolution, adc_zero, init_value, checksum = DEFAULT_GAIN, None, 12, 0, 0, None
        try:
            if len(parts) > 2:
                gm = _GAIN_FIELD.match(parts[2])
                if gm is None:
                    raise ValueError(parts[2])
                gain = float(gm["gain"])
                if gm["base"] is not None:
                    baseline = int(gm["base"])
            if len(parts) > 3:
                resolution = int(parts[3])
            if len(parts) > 4:
                adc_zero = int(parts[4])
            if len(parts) > 5:
                init_value = int(parts[5])
            if len(parts) > 6:
                checksum = int(parts[6])
        except ValueError as exc:
            raise WfdbError(f"line {no}: malformed numeric field ({exc})") from None
        if gain == 0:
            logger.info("line %d: gain 0 in header, using %g adu/mV", no, DEFAULT_GAIN)
            gain = DEFAULT_GAIN
        # description starts after the block-size field
        name = " ".join(parts[8:]) if len(parts) > 8 else f"ch{len(channels)}"
        channels.append(
            Channel(
                name=name,
                gain=gain,
                baseline=adc_zero if baseline is None else baseline,
                resolution=resolution,
                fmt=fmt,
                filename=parts[0],
                init_value=init_value,
                checksum=checksum,
            )
        )

    return HeaderInfo(
        record_name=m["name"],
        n_channels=n_channels,
        fs=fs,
        n_samples=n_samples,
        channels=tuple(channels),
        comments=comments,
        unsupported=tuple(unsupported),
    )


def format_wfdb_header(record_name: str, fs: float, n_samples: int,
                       channels: Sequence[Channel], signal_file: str) -> str:
    def num(x):
        return f"{x:g}"

    lines = [f"{record_name} {len(channels)} {num(fs)} {n_samples}"]
    for ch in channels:
        lines.append(
            f"{signal_file} {ch.fmt} {num(ch.gain)}({ch.baseline}) {ch.resolution} "
            f"{ch.baseline} {ch.init_value} {ch.checksum or 0} 0 {ch.name}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Signal formats


def encode_format212(adu: np.ndarray) -> bytes:
    """Pack interleaved 12-bit samples, two per three bytes.

    ``adu`` is either a flat sequence already interleaved in frame order, or an
    ``(n_channels, n_samples)`` array.  An odd total count is padded with a
    zero sample (logged); the decoder drops it given the true sample count.
    """
    arr = np.asarray(adu)
    if arr.ndim == 2:
        arr = arr.T.reshape(-1)
    arr = arr.astype(np.int64).reshape(-1)
    if arr.size == 0:
        return b""
    if arr.min() < -2048 or arr.max() > 2047:
        bad = arr[(arr < -2048) | (arr > 2047)][0]
        raise ValueError(f"adu value {bad} outside 12-bit range [-2048, 2047]")
    if arr.size % 2:
        logger.warning("format 212: odd sample count %d, padding final half-pair", arr.size)
        arr = np.append(arr, 0)
    u = arr & 0xFFF
    a, b = u[0::2], u[1::2]
    out = np.empty((a.size, 3), dtype=np.uint8)
    out[:, 0] = a & 0xFF
    out[:, 1] = ((a >> 8) & 0x0F) | (((b >> 8) & 0x0F) << 4)
    out[:, 2] = b & 0xFF
    return out.tobytes()


def decode_format212_adu(data: bytes, n_total: int) -> np.ndarray:
    """Unpack ``n_total`` interleaved 12-bit samples (integer adu)."""
    need = math.ceil(n_total * 1.5)
    if len(data) < need:
        raise DecodeError(
            f"format 212 payload truncated at byte offset {len(data)}: "
            f"{need} bytes needed for {n_total} samples"
        )
    n_pairs = (n_total + 1) // 2
    raw = np.frombuffer(data, dtype=np.uint8, count=min(len(data), n_pairs * 3))
    if raw.size < n_pairs * 3:
        raw = np.concatenate([raw, np.zeros(n_pairs * 3 - raw.size, dtype=np.uint8)])
    raw = raw.reshape(-1, 3).astype(np.int64)
    a = raw[:, 0] | ((raw[:, 1] & 0x0F) << 8)
    b = raw[:, 2] | ((raw[:, 1] >> 4) << 8)
    out = np.empty(n_pairs * 2, dtype=np.int64)
    out[0::2], out[1::2] = a, b
    out = np.where(out >= 2048, out - 4096, out)
    return out[:n_total]


def decode_format212(data: bytes, n_samples: int, gains: Sequence[float],
                     baselines: Sequence[int]) -> np.ndarray:
    """Decode a format-212 payload into ``(n_channels, n_samples)`` mV."""
    n_ch = len(gains)
    adu = decode_format212_adu(data, n_samples * n_ch).reshape(n_samples, n_ch).T
    return adu_to_mv(adu, gains, baselines)


def encode_format16(adu: np.ndarray) -> bytes:
    arr = np.asarray(adu)
    if arr.ndim == 2:
        arr = arr.T.reshape(-1)
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < -32768 or arr.max() > 32767):
        raise ValueError("adu value outside 16-bit range")
    return arr.astype("<i2").tobytes()


def decode_format16_adu(data: bytes, n_total: int) -> np.ndarray:
    if len(data) < 2 * n_total:
        raise DecodeError(
            f"format 16 payload truncated at byte offset {len(data)}: "
            f"{2 * n_total} bytes needed"
        )
    return np.frombuffer(data, dtype="<i2", count=n_total).astype(np.int64)


def adu_to_mv(adu: np.ndarray, gains: Sequence[float], baselines: Sequence[int]) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)[:, None]
    b = np.asarray(baselines, dtype=np.float64)[:, None]
    return (np.asarray(adu, dtype=np.float64) - b) / g


def mv_to_adu(mv: np.ndarray, gains: Sequence[float], baselines: Sequence[int]) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)[:, None]
    b = np.asarray(baselines, dtype=np.float64)[:, None]
    return np.rint(np.asarray(mv, dtype=np.float64) * g + b).astype(np.int64)


# ---------------------------------------------------------------------------
# Annotations (MIT format)

# code -> mnemonic, from the WFDB ecgcodes table
ANNOTATION_CODES: dict[int, str] = {
    0: " ", 1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A",
    9: "S", 10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s",
    19: "T", 20: "*", 21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^",
    27: "t", 28: "+", 29: "u", 30: "?", 31: "!", 32: "[", 33: "]", 34: "e",
    35: "n", 36: "@", 37: "x", 38: "f", 39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {v: k for k, v in ANNOTATION_CODES.items()}
SYMBOL_CODES["U"] = 13

_SKIP, _NUM, _SUB, _CHN, _AUX = 59, 60, 61, 62, 63


def parse_wfdb_annotations(data: bytes) -> list[Annotation]:
    """Decode an MIT-format annotation stream (``.atr``, ``.qrs``)."""
    out: list[Annotation] = []
    n = len(data)
    pos = 0
    sample = 0
    pending: Annotation | None = None

    def flush():
        nonlocal pending
        if pending is not None:
            out.append(pending)
            pending = None

    while pos + 1 < n:
        word = data[pos] | (data[pos + 1] << 8)
        code, interval = word >> 10, word & 0x3FF
        pos += 2
        if code == 0 and interval == 0:
            break
        if code == _SKIP:
            if pos + 4 > n:
                raise WfdbError(f"SKIP at byte {pos - 2} truncated")
            hi = data[pos] | (data[pos + 1] << 8)
            lo = data[pos + 2] | (data[pos + 3] << 8)
            skip = (hi << 16) | lo
            if skip >= 1 << 31:
                skip -= 1 << 32
            sample += skip
            pos += 4
        elif code == _AUX:
            if pending is None:
                raise WfdbError(f"AUX at byte {pos - 2} precedes any annotation")
            length = interval
            if pos + length > n:
                raise WfdbError(
                    f"AUX at byte {pos - 2} declares {length} bytes, only {n - pos} remain"
                )
            aux = data[pos:pos + length].split(b"\x00", 1)[0].decode("latin-1")
            pending = Annotation(pending.sample, pending.symbol, aux)
            pos += length + (length & 1)
        elif code in (_NUM, _SUB, _CHN):
            continue
        else:
            flush()
            sample += interval
            pending = Annotation(sample, ANNOTATION_CODES.get(code, "?"), "")
    flush()
    return out


def encode_wfdb_annotations(annotations: Iterable[Annotation]) -> bytes:
    buf = bytearray()
    prev = 0
    for ann in annotations:
        code = SYMBOL_CODES.get(ann.symbol)
        if code is None:
            raise ValueError(f"no annotation code for symbol {ann.symbol!r}")
        delta = ann.sample - prev
        if delta < 0:
            raise ValueError("annotations must be in non-decreasing sample order")
        if delta > 0x3FF:
            buf += (_SKIP << 10).to_bytes(2, "little")
            buf += ((delta >> 16) & 0xFFFF).to_bytes(2, "little")
            buf += (delta & 0xFFFF).to_bytes(2, "little")
            delta = 0
        buf += ((code << 10) | delta).to_bytes(2, "little")
        if ann.aux:
            raw = ann.aux.encode("latin-1")
            if len(raw) > 0x3FF:
                raise ValueError("aux string too long")
            buf += ((_AUX << 10) | len(raw)).to_bytes(2, "little")
            buf += raw + (b"\x00" if len(raw) & 1 else b"")
        prev = ann.sample
    buf += b"\x00\x00"
    return bytes(buf)


# ---------------------------------------------------------------------------
# Whole records


def read_wfdb_record(base: str | Path, channels: Sequence[int] | None = None,
                     annotator: str | None = "atr") -> EcgRecord:
    """Read ``<base>.hea`` with its signal file and optional annotation file."""
    base = Path(base)
    header = parse_wfdb_header(base.with_suffix(".hea").read_bytes())
    if header.unsupported:
        raise UnsupportedFormatError(f"unsupported format {header.unsupported[0]}")
    fmts = {ch.fmt for ch in header.channels}
    files = {ch.filename for ch in header.channels}
    if len(fmts) != 1 or len(files) != 1:
        raise WfdbError("channels spread over several files or formats are not supported")
    fmt = fmts.pop()
    payload = (base.parent / files.pop()).read_bytes()
    n_ch = header.n_channels
    if header.n_samples is None:
        per_frame = 1.5 * n_ch if fmt == 212 else 2 * n_ch
        n_samples = int(len(payload) // per_frame)
    else:
        n_samples = header.n_samples
    if fmt == 212:
        adu = decode_format212_adu(payload, n_samples * n_ch)
    else:
        adu = decode_format16_adu(payload, n_samples * n_ch)
    adu = adu.reshape(n_samples, n_ch).T
    mv = adu_to_mv(adu, [c.gain for c in header.channels], [c.baseline for c in header.channels])
    chans = header.channels
    if channels is not None:
        mv = mv[list(channels)]
        chans = tuple(chans[i] for i in channels)

    anns: tuple[Annotation, ...] = ()
    if annotator:
        ann_path = base.with_suffix("." + annotator)
        if ann_path.exists():
            anns = tuple(a for a in parse_wfdb_annotations(ann_path.read_bytes())
                         if 0 <= a.sample < n_samples)
    return EcgRecord(header.record_name, chans, mv, header.fs, anns)


def write_wfdb_record(record: EcgRecord, directory: str | Path, fmt: int = 212,
                      annotator: str | None = "atr") -> Path:
    """Write a record as ``.hea`` + ``.dat`` (+ annotations); returns the base path."""
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(f"unsupported format {fmt}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    chans = tuple(
        Channel(c.name, c.gain, c.baseline, c.resolution if fmt == 212 else 16, fmt)
        for c in record.channels
    )
    adu = mv_to_adu(record.signal, [c.gain for c in chans], [c.baseline for c in chans])
    if fmt == 212:
        adu = np.clip(adu, -2048, 2047)
        payload = encode_format212(adu)
    else:
        payload = encode_format16(adu)
    dat = f"{record.record_id}.dat"
    (directory / dat).write_bytes(payload)
    (directory / f"{record.record_id}.hea").write_text(
        format_wfdb_header(record.record_id, record.fs, record.n_samples, chans, dat)
    )
    if annotator and record.annotations:
        (directory / f"{record.record_id}.{annotator}").write_bytes(
            encode_wfdb_annotations(record.annotations)
        )
    return directory / record.record_id


def parse_csv_record(text: str, fs: float, record_id: str = "record") -> EcgRecord:
    """Single-lead record from CSV: one mV value per row, or ``index,value`` rows.

    A non-numeric first row is taken as a header.
    """
    if not fs > 0:
        raise CsvRecordError("fs must be positive")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise CsvRecordError("empty CSV record")
    values = []
    for row_no, row in enumerate(rows, start=1):
        cell = row[-1].strip()
        try:
            values.append(float(cell))
        except ValueError:
            if row_no == 1:
                continue
            raise CsvRecordError(f"row {row_no}: non-numeric value {cell!r}") from None
    if not values:
        raise CsvRecordError("CSV record has a header but no samples")
    return EcgRecord(record_id, (Channel("lead", gain=DEFAULT_GAIN),), np.array([values]), fs)


def read_csv_record(path: str | Path, fs: float | None = None) -> EcgRecord:
    """Read a CSV record; ``fs`` falls back to a ``<name>.json`` sidecar with an ``fs`` key."""
    path = Path(path)
    if fs is None:
        side = path.with_suffix(".json")
        if not side.exists():
            raise CsvRecordError(f"{path}: no fs given and no sidecar {side.name}")
        fs = float(json.loads(side.read_text())["fs"])
    return parse_csv_record(path.read_text(encoding="utf-8"), fs, record_id=path.stem)


def dump_record_csv(record: EcgRecord) -> str:
    """Canonical CSV dump: ``index,<channel names...>`` with mV values."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["index"] + [c.name for c in record.channels])
    for i in range(record.n_samples):
        w.writerow([i] + [repr(float(v)) for v in record.signal[:, i]])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Labelled examples


def rhythm_intervals(annotations: Iterable[Annotation], n_samples: int) -> list[tuple[int, int, str]]:
    """Rhythm spans ``(start, end, label)`` from ``'+'`` annotations such as ``"(AFIB"``."""
    changes = [(a.sample, a.aux.strip().lstrip("(").strip("\x00"))
               for a in annotations if a.symbol == "+" and a.aux]
    spans = []
    for i, (start, label) in enumerate(changes):
        end = changes[i + 1][0] if i + 1 < len(changes) else n_samples
        if end > start:
            spans.append((start, end, label))
    return spans


def label_beats(beat_samples: np.ndarray, spans: Sequence[tuple[int, int, str]],
                positive_label: str) -> np.ndarray:
    """Boolean mask: beat falls inside a span carrying ``positive_label``."""
    beats = np.asarray(beat_samples, dtype=np.int64)
    mask = np.zeros(beats.size, dtype=bool)
    for start, end, label in spans:
        if label == positive_label:
            mask |= (beats >= start) & (beats < end)
    return mask


def segment_is_positive(n_beats: int, n_positive: int, p_threshold: float) -> bool:
    """The segment labelling rule: positive fraction of beats ``>= p``.

    Compared in integers where possible so that exact ties (e.g. 5/10 at 0.5)
    are never lost to rounding.
    """
    if n_beats <= 0:
        raise ValueError("segment has no beats")
    frac = n_positive / n_beats
    return frac >= p_threshold or math.isclose(frac, p_threshold, rel_tol=0, abs_tol=1e-12)


def cut_afib_segments(record: EcgRecord, rhythm_annotations: Iterable[Annotation],
                      config: SegmentLabelConfig = SegmentLabelConfig(),
                      beat_samples: np.ndarray | None = None,
                      channel: int = 0) -> tuple[list[LabeledExample], int]:
    """Cut non-overlapping segments from sample 0 and label them.

    Beats default to the record's beat annotations.  Returns the examples and
    the number of segments discarded for having no beats.  Label 1 marks the
    positive rhythm.
    """
    anns = list(rhythm_annotations)
    if beat_samples is None:
        beat_samples = np.array([a.sample for a in record.annotations
                                 if aami_group(a.symbol) is not None], dtype=np.int64)
    beats = np.sort(np.asarray(beat_samples, dtype=np.int64))
    spans = rhythm_intervals(anns, record.n_samples)
    positive = label_beats(beats, spans, config.positive_rhythm_label)

    seg_len = int(round(config.segment_seconds * record.fs))
    n_segments = record.n_samples // seg_len
    examples = []
    empty = 0
    lead = record.lead(channel)
    for s in range(n_segments):
        start, end = s * seg_len, (s + 1) * seg_len
        lo, hi = np.searchsorted(beats, [start, end])
        if hi == lo:
            empty += 1
            continue
        label = int(segment_is_positive(int(hi - lo), int(positive[lo:hi].sum()),
                                        config.p_threshold))
        examples.append(LabeledExample(record.record_id, channel, start, end, label,
                                       payload=lead[start:end], beats=beats[lo:hi] - start))
    if empty:
        logger.info("%s: %d segments without beats discarded", record.record_id, empty)
    return examples, empty


def beat_group_counts(annotations: Iterable[Annotation]) -> dict[str, int]:
    counts = {g: 0 for g in AAMI_GROUPS}
    for a in annotations:
        g = aami_group(a.symbol)
        if g is not None:
            counts[g] += 1
    counts["total"] = sum(counts[g] for g in AAMI_GROUPS)
    return counts


def balance_undersample(examples: Sequence, seed: int, labels: Sequence[int] | None = None) -> list:
    """Reduce every class to the minority count by seeded sampling without replacement.

    Input order is preserved among the kept examples.
    """
    if labels is None:
        labels = [ex.label for ex in examples]
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("balancing needs at least two classes")
    n_min = min(int((labels == c).sum()) for c in classes)
    rng = np.random.default_rng(seed)
    keep = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        keep.append(rng.choice(idx, size=n_min, replace=False))
    keep = np.sort(np.concatenate(keep))
    return [examples[i] for i in keep]


def ingest_manifest(examples: Sequence[LabeledExample], class_names: Sequence[str],
                    extra: dict | None = None) -> dict:
    counts = {name: 0 for name in class_names}
    records = []
    for ex in examples:
        counts[class_names[ex.label]] += 1
        if not records or records[-1] != ex.record_id:
            records.append(ex.record_id)
    out = {"records": sorted(set(records)), "counts": counts, "total": len(examples)}
    if extra:
        out.update(extra)
    return out

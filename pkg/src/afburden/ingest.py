"""Record ingestion: canonical CSV records and MIT-format annotation files.

A canonical record is a CSV file with header ``beat_time_s,rhythm`` plus an
optional JSON sidecar ``<file>.meta.json`` holding patient metadata. MIT
annotation files are sequences of 16-bit little-endian words where the top
six bits carry an annotation code and the low ten bits a sample interval.
"""
from __future__ import annotations

import csv
import enum
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError

CANONICAL_HEADER = ("beat_time_s", "rhythm")


class RhythmLabel(str, enum.Enum):
    N = "N"
    AF = "AF"
    SBR = "SBR"
    SVTA = "SVTA"
    B = "B"
    T = "T"
    OTHER = "OTHER"
    UNKNOWN = "UNKNOWN"

    def __str__(self):
        return self.value


# Integer codes used for vectorised label arithmetic; order is arbitrary but fixed.
LABEL_ORDER = tuple(RhythmLabel)
LABEL_CODE = {lab: i for i, lab in enumerate(LABEL_ORDER)}

_TEXT_LABELS = {
    "N": RhythmLabel.N,
    "NSR": RhythmLabel.N,
    "AF": RhythmLabel.AF,
    "AFIB": RhythmLabel.AF,
    "AFL": RhythmLabel.AF,
    "SBR": RhythmLabel.SBR,
    "SVTA": RhythmLabel.SVTA,
    "B": RhythmLabel.B,
    "T": RhythmLabel.T,
    "X": RhythmLabel.UNKNOWN,
    "UNKNOWN": RhythmLabel.UNKNOWN,
    "OTHER": RhythmLabel.OTHER,
}


def normalize_label(text: str) -> RhythmLabel:
    """Map a free-text rhythm string onto :class:`RhythmLabel`.

    Atrial flutter collapses into AF; ``X`` marks a missing annotation;
    anything unrecognised becomes OTHER.
    """
    return _TEXT_LABELS.get(text.strip().upper(), RhythmLabel.OTHER)


@dataclass(frozen=True, eq=False)
class PatientRecord:
    patient_id: str
    beat_times: np.ndarray
    labels: tuple
    reviewed: bool = False
    age: float | None = None
    sex: str | None = None
    aux_beat_times: np.ndarray | None = None

    def __post_init__(self):
        times = np.array(self.beat_times, dtype=np.float64)
        times.setflags(write=False)
        object.__setattr__(self, "beat_times", times)
        object.__setattr__(self, "labels", tuple(
            lab if isinstance(lab, RhythmLabel) else normalize_label(lab) for lab in self.labels))
        if times.ndim != 1:
            raise ValidationError("beat_times must be one-dimensional")
        if len(self.labels) != len(times):
            raise ValidationError(
                f"labels length {len(self.labels)} != beat_times length {len(times)}"
            )
        if not np.all(np.isfinite(times)):
            raise ValidationError("beat_times contain non-finite values")
        if len(times) and times[0] < 0:
            raise ValidationError("beat_times must be >= 0 (index 0 is negative)")
        bad = np.flatnonzero(np.diff(times) <= 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise ValidationError(
                f"beat_times not strictly increasing at index {i} "
                f"({times[i - 1]!r} -> {times[i]!r})"
            )
        if self.sex is not None and self.sex not in ("M", "F"):
            raise ValidationError(f"sex must be 'M' or 'F', got {self.sex!r}")
        if self.aux_beat_times is not None:
            aux = np.array(self.aux_beat_times, dtype=np.float64)
            if aux.ndim != 1 or np.any(np.diff(aux) < 0):
                raise ValidationError("aux_beat_times must be a sorted 1-D sequence")
            aux.setflags(write=False)
            object.__setattr__(self, "aux_beat_times", aux)

    @property
    def n_beats(self) -> int:
        return len(self.beat_times)

    @property
    def rr(self) -> np.ndarray:
        return np.diff(self.beat_times)

    @cached_property
    def label_codes(self) -> np.ndarray:
        codes = np.fromiter((LABEL_CODE[lab] for lab in self.labels), dtype=np.int8,
                            count=len(self.labels))
        codes.setflags(write=False)
        return codes

    def metadata(self) -> dict:
        meta = {"patient_id": self.patient_id, "reviewed": bool(self.reviewed),
                "age": self.age, "sex": self.sex}
        if self.aux_beat_times is not None:
            meta["aux_beat_times"] = [float(t) for t in self.aux_beat_times]
        return meta


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def parse_canonical(path) -> PatientRecord:
    """Read a canonical CSV record (and its sidecar, when present)."""
    path = Path(path)
    times, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CANONICAL_HEADER:
            raise ParseError(f"{path}: expected header 'beat_time_s,rhythm'", location=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 2 fields, got {len(row)}", location=line)
            try:
                t = float(row[0])
            except ValueError:
                raise ParseError(f"{path}: bad timestamp {row[0]!r}", location=line) from None
            times.append(t)
            labels.append(normalize_label(row[1]))

    meta = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{side}: invalid JSON: {exc.msg}", location=exc.lineno) from None
    return PatientRecord(
        patient_id=str(meta.get("patient_id", path.stem)),
        beat_times=np.asarray(times, dtype=np.float64),
        labels=labels,
        reviewed=bool(meta.get("reviewed", False)),
        age=meta.get("age"),
        sex=meta.get("sex"),
        aux_beat_times=meta.get("aux_beat_times"),
    )


def write_canonical(record: PatientRecord, path) -> None:
    """Write ``record`` as canonical CSV plus sidecar. Floats use ``repr`` so
    re-reading is exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("beat_time_s,rhythm\n")
        for t, lab in zip(record.beat_times.tolist(), record.labels):
            fh.write(f"{t!r},{lab.value}\n")
    sidecar_path(path).write_text(json.dumps(record.metadata(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# MIT annotation format

SKIP, NUM, SUB, CHAN, AUX = 59, 60, 61, 62, 63
MAX_BEAT_CODE = 49

DEFAULT_BEAT_CODES = frozenset({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 25, 38})

DEFAULT_RHYTHM_TABLE = {
    "(AFIB": RhythmLabel.AF,
    "(AFL": RhythmLabel.AF,
    "(N": RhythmLabel.N,
    "(SBR": RhythmLabel.SBR,
    "(SVTA": RhythmLabel.SVTA,
    "(B": RhythmLabel.B,
    "(T": RhythmLabel.T,
}


@dataclass(frozen=True)
class AnnotationEvent:
    time_samples: int
    type_code: int
    subtype: int = 0
    channel: int = 0
    num: int = 0
    aux: bytes | None = None

    def __post_init__(self):
        if self.time_samples < 0:
            raise ValidationError(f"time_samples must be >= 0, got {self.time_samples}")
        if not 1 <= self.type_code <= MAX_BEAT_CODE:
            raise ValidationError(f"type_code must be in 1..{MAX_BEAT_CODE}, got {self.type_code}")
        if not -128 <= self.subtype <= 127:
            raise ValidationError(f"subtype out of signed 8-bit range: {self.subtype}")
        if not -128 <= self.num <= 127:
            raise ValidationError(f"num out of signed 8-bit range: {self.num}")
        if not 0 <= self.channel <= 255:
            raise ValidationError(f"channel out of unsigned 8-bit range: {self.channel}")
        if self.aux is not None and len(self.aux) > 255:
            raise ValidationError(f"aux longer than 255 bytes ({len(self.aux)})")

    @property
    def aux_text(self) -> str | None:
        if self.aux is None:
            return None
        return self.aux.rstrip(b"\x00").decode("latin-1")


def _signed8(value: int) -> int:
    value &= 0xFF
    return value - 256 if value > 127 else value


def decode_mit_annotations(data: bytes) -> list[AnnotationEvent]:
    """Decode an in-memory MIT annotation byte string.

    SKIP words precede the annotation they shift; NUM/SUB/CHAN/AUX words
    follow and modify the annotation just emitted. ``num`` and ``channel``
    carry over from the previous annotation unless overridden.
    """
    n = len(data)
    if n % 2:
        raise ParseError("annotation file has odd length; truncated word", location=n - 1)

    events: list[dict] = []
    t = 0
    num = chan = 0
    pos = 0
    while pos + 2 <= n:
        word = data[pos] | (data[pos + 1] << 8)
        code, interval = word >> 10, word & 0x3FF
        if code == 0 and interval == 0:
            break
        if code == SKIP:
            if pos + 6 > n:
                raise ParseError("truncated SKIP offset", location=pos)
            hi, lo = struct.unpack_from("<HH", data, pos + 2)
            t += struct.unpack("<i", struct.pack("<I", (hi << 16) | lo))[0]
            pos += 6
            continue
        if code in (NUM, SUB, CHAN, AUX):
            if not events:
                raise ParseError(f"modifier code {code} before any annotation", location=pos)
            ev = events[-1]
            if code == NUM:
                ev["num"] = num = _signed8(interval)
            elif code == SUB:
                ev["subtype"] = _signed8(interval)
            elif code == CHAN:
                ev["channel"] = chan = interval & 0xFF
            else:
                padded = interval + (interval & 1)
                if pos + 2 + padded > n:
                    raise ParseError("truncated AUX payload", location=pos)
                ev["aux"] = bytes(data[pos + 2:pos + 2 + interval])
                pos += padded
            pos += 2
            continue
        if code == 0 or code > MAX_BEAT_CODE:
            raise ParseError(f"unsupported annotation code {code}", location=pos)
        t += interval
        if t < 0:
            raise ParseError("negative cumulative annotation time", location=pos)
        events.append({"time_samples": t, "type_code": code, "subtype": 0,
                       "channel": chan, "num": num, "aux": None})
        pos += 2
    return [AnnotationEvent(**ev) for ev in events]


def parse_mit_annotations(path, sampling_frequency: float) -> list[AnnotationEvent]:
    """Parse an MIT annotation file. ``sampling_frequency`` is only validated
    here; it is needed to convert sample indices with :func:`mit_to_record`."""
    if not sampling_frequency > 0:
        raise ValidationError(f"sampling_frequency must be > 0, got {sampling_frequency}")
    return decode_mit_annotations(Path(path).read_bytes())


def encode_mit_annotations(events: Sequence[AnnotationEvent]) -> bytes:
    out = bytearray()

    def word(code, value):
        out.extend(struct.pack("<H", (code << 10) | (value & 0x3FF)))

    prev_t = 0
    num = chan = 0
    for ev in events:
        delta = ev.time_samples - prev_t
        if delta < 0:
            raise ValidationError(
                f"events not time-ordered: {ev.time_samples} after {prev_t}")
        if delta > 0x3FF:
            if delta > 0x7FFFFFFF:
                raise ValidationError(f"interval {delta} exceeds the SKIP range")
            word(SKIP, 0)
            out.extend(struct.pack("<HH", delta >> 16, delta & 0xFFFF))
            word(ev.type_code, 0)
        else:
            word(ev.type_code, delta)
        if ev.subtype != 0:
            word(SUB, ev.subtype & 0xFF)
        if ev.num != num:
            word(NUM, ev.num & 0xFF)
            num = ev.num
        if ev.channel != chan:
            word(CHAN, ev.channel)
            chan = ev.channel
        if ev.aux is not None:
            word(AUX, len(ev.aux))
            out.extend(ev.aux)
            if len(ev.aux) & 1:
                out.append(0)
        prev_t = ev.time_samples
    word(0, 0)
    return bytes(out)


def write_mit_annotations(events: Sequence[AnnotationEvent], path) -> None:
    Path(path).write_bytes(encode_mit_annotations(events))


def mit_to_record(
    events: Iterable[AnnotationEvent],
    sampling_frequency: float,
    patient_id: str = "",
    beat_codes: Iterable[int] = DEFAULT_BEAT_CODES,
    rhythm_table: Mapping[str, RhythmLabel] = DEFAULT_RHYTHM_TABLE,
    reviewed: bool = False,
) -> PatientRecord:
    """Turn decoded annotations into a :class:`PatientRecord`.

    Rhythm-change strings (aux text starting with ``(``) set a running label
    for all subsequent beats. Beats before the first marker are UNKNOWN.
    """
    if not sampling_frequency > 0:
        raise ValidationError(f"sampling_frequency must be > 0, got {sampling_frequency}")
    beat_codes = frozenset(beat_codes)
    current = RhythmLabel.UNKNOWN
    times, labels = [], []
    for ev in events:
        text = ev.aux_text
        if text and text.startswith("("):
            current = rhythm_table.get(text.strip(), RhythmLabel.OTHER)
        if ev.type_code in beat_codes:
            times.append(ev.time_samples / sampling_frequency)
            labels.append(current)
    return PatientRecord(patient_id=patient_id, beat_times=np.asarray(times, dtype=np.float64),
                         labels=labels, reviewed=reviewed)

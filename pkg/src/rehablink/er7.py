"""HL7 v2 ER7 text encoding: structural parse and canonical serialization.

The value tree is fields -> repetitions -> components -> subcomponents, all
plain nested lists with strings at the leaves. Instances are kept in normal
form (trailing empty units stripped at every level), so structural equality
is plain ``==`` and serialization is canonical: segments end with CR, values
escape the five reserved characters, trailing empty fields are trimmed.

MSH is special-cased per the standard: MSH-1 is the field separator itself
and MSH-2 the remaining four encoding characters; neither is ever escaped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field

from .errors import InvalidMessage, MalformedMessage, TruncatedMessage

Component = list[str]
Repetition = list[Component]
Field = list[Repetition]

_SEGMENT_ID_RE = re.compile(r"^[A-Z][A-Z0-9]{2}$")
_SEGMENT_SPLIT_RE = re.compile(r"\r\n|\r|\n")

DEFAULT_FIELD_SEP = "|"
DEFAULT_ENCODING = "^~\\&"  # component, repetition, escape, subcomponent


@dataclass(frozen=True)
class EncodingChars:
    field_sep: str = DEFAULT_FIELD_SEP
    component_sep: str = "^"
    repetition_sep: str = "~"
    escape: str = "\\"
    subcomponent_sep: str = "&"

    @classmethod
    def from_msh(cls, field_sep: str, encoding: str) -> "EncodingChars":
        if len(field_sep) != 1 or len(encoding) != 4:
            raise MalformedMessage("MSH-2 must hold exactly four encoding characters")
        chars = [field_sep, *encoding]
        if len(set(chars)) != 5:
            raise MalformedMessage("encoding characters must be distinct")
        return cls(field_sep, encoding[0], encoding[1], encoding[2], encoding[3])

    @property
    def msh_2(self) -> str:
        return (self.component_sep + self.repetition_sep
                + self.escape + self.subcomponent_sep)

    def reserved(self) -> str:
        return (self.field_sep + self.component_sep + self.repetition_sep
                + self.escape + self.subcomponent_sep)


def escape_value(value: str, enc: EncodingChars) -> str:
    out = []
    for ch in value:
        if ch == enc.escape:
            out.append(enc.escape + "E" + enc.escape)
        elif ch == enc.field_sep:
            out.append(enc.escape + "F" + enc.escape)
        elif ch == enc.component_sep:
            out.append(enc.escape + "S" + enc.escape)
        elif ch == enc.subcomponent_sep:
            out.append(enc.escape + "T" + enc.escape)
        elif ch == enc.repetition_sep:
            out.append(enc.escape + "R" + enc.escape)
        else:
            out.append(ch)
    return "".join(out)


def unescape_value(value: str, enc: EncodingChars) -> str:
    esc = enc.escape
    if esc not in value:
        return value
    known = {"E": esc, "F": enc.field_sep, "S": enc.component_sep,
             "T": enc.subcomponent_sep, "R": enc.repetition_sep}
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch != esc:
            out.append(ch)
            i += 1
            continue
        end = value.find(esc, i + 1)
        if end == -1:  # dangling escape: keep verbatim
            out.append(value[i:])
            break
        body = value[i + 1:end]
        if body in known:
            out.append(known[body])
        else:  # unknown escape sequence: preserved verbatim
            out.append(value[i:end + 1])
        i = end + 1
    return "".join(out)


def _empty_component(c: Component) -> bool:
    return all(s == "" for s in c)


def _empty_repetition(r: Repetition) -> bool:
    return all(_empty_component(c) for c in r)


def _empty_field(f: Field) -> bool:
    return all(_empty_repetition(r) for r in f)


def _norm_component(c: Component) -> Component:
    c = [str(s) for s in c] or [""]
    while len(c) > 1 and c[-1] == "":
        c.pop()
    return c


def _norm_repetition(r: Repetition) -> Repetition:
    r = [_norm_component(c) for c in r] or [[""]]
    while len(r) > 1 and _empty_component(r[-1]):
        r.pop()
    return r


def _norm_field(f: Field) -> Field:
    f = [_norm_repetition(r) for r in f] or [[[""]]]
    while len(f) > 1 and _empty_repetition(f[-1]):
        f.pop()
    return f


def fld(value) -> Field:
    """Build a normalized field from a string, component list, or field tree."""
    if isinstance(value, str):
        return [[[value]]]
    if isinstance(value, (list, tuple)):
        if all(isinstance(v, str) for v in value):  # components
            return [[[v] for v in value]]
        return _norm_field([list(map(list, rep)) for rep in value])
    raise TypeError(f"cannot build a field from {type(value).__name__}")


@dataclass(frozen=True)
class Segment:
    id: str
    fields: tuple = ()

    def __post_init__(self):
        if not _SEGMENT_ID_RE.match(self.id):
            raise InvalidMessage(f"segment id {self.id!r} must be exactly 3 characters")
        normd = [_norm_field([list(map(list, r)) for r in f]) for f in self.fields]
        while normd and _empty_field(normd[-1]):
            normd.pop()
        object.__setattr__(self, "fields", tuple(
            tuple(tuple(tuple(c) for c in r) for r in f) for f in normd))

    def field(self, n: int) -> Field | None:
        """1-based field access (HL7 numbering, MSH offset already applied)."""
        if 1 <= n <= len(self.fields):
            return [ [list(c) for c in r] for r in self.fields[n - 1] ]
        return None

    def value(self, n: int, component: int = 1) -> str:
        """First-repetition component value, '' when absent."""
        f = self.field(n)
        if f is None:
            return ""
        comps = f[0]
        if 1 <= component <= len(comps):
            return comps[component - 1][0]
        return ""


@dataclass(frozen=True)
class Hl7Message:
    segments: tuple[Segment, ...]
    encoding: EncodingChars = dc_field(default_factory=EncodingChars)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments or self.segments[0].id != "MSH":
            raise InvalidMessage("first segment must be MSH")

    def msh(self) -> Segment:
        return self.segments[0]

    def find(self, segment_id: str) -> list[Segment]:
        return [s for s in self.segments if s.id == segment_id]

    def value(self, segment_id: str, field: int, component: int = 1) -> str:
        segs = self.find(segment_id)
        if not segs:
            return ""
        return _msh_aware_value(segs[0], field, component)


def _msh_aware_value(seg: Segment, n: int, component: int = 1) -> str:
    if seg.id != "MSH":
        return seg.value(n, component)
    # stored fields start at MSH-3; MSH-1/MSH-2 are the separators
    if n == 1 or n == 2:
        raise ValueError("MSH-1/MSH-2 are the encoding characters; read them from the message encoding")
    return seg.value(n - 2, component)


def msh_segment(fields: list, field_sep: str = DEFAULT_FIELD_SEP,
                encoding: str = DEFAULT_ENCODING) -> Segment:
    """MSH from the fields AFTER MSH-2 (i.e. starting at MSH-3)."""
    del field_sep, encoding  # encoding travels on the message, not the segment
    return Segment("MSH", tuple(fld(f) for f in fields))


def message(segments: list[Segment],
            encoding: EncodingChars | None = None) -> Hl7Message:
    return Hl7Message(tuple(segments), encoding or EncodingChars())


# --- parse --------------------------------------------------------------------

def parse_er7(data: bytes | str) -> Hl7Message:
    """Lossless structural parse of one ER7 message."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedMessage(f"not valid utf-8: {exc}") from None
    else:
        text = data
    text = text.strip("\r\n")
    if not text:
        raise MalformedMessage("empty input")
    lines = [ln for ln in _SEGMENT_SPLIT_RE.split(text) if ln != ""]
    head = lines[0]
    if not head.startswith("MSH"):
        raise MalformedMessage("first segment must be MSH")
    if len(head) < 8:
        raise TruncatedMessage("MSH segment cut off before the encoding characters")
    enc = EncodingChars.from_msh(head[3], head[4:8])
    segments = [_parse_msh(head, enc)]
    for ln in lines[1:]:
        segments.append(_parse_segment(ln, enc))
    return Hl7Message(tuple(segments), enc)


def _parse_msh(line: str, enc: EncodingChars) -> Segment:
    rest = line[8:]
    if rest and not rest.startswith(enc.field_sep):
        raise MalformedMessage("MSH-2 runs past four encoding characters")
    raw_fields = rest.split(enc.field_sep)[1:] if rest else []
    return Segment("MSH", tuple(_parse_field(f, enc) for f in raw_fields))


def _parse_segment(line: str, enc: EncodingChars) -> Segment:
    parts = line.split(enc.field_sep)
    seg_id = parts[0]
    if not _SEGMENT_ID_RE.match(seg_id):
        raise MalformedMessage(f"segment id {seg_id!r} is not 3 characters")
    try:
        return Segment(seg_id, tuple(_parse_field(f, enc) for f in parts[1:]))
    except InvalidMessage as exc:
        raise MalformedMessage(str(exc)) from None


def _parse_field(raw: str, enc: EncodingChars) -> Field:
    return [
        [
            [unescape_value(sub, enc) for sub in comp.split(enc.subcomponent_sep)]
            for comp in rep.split(enc.component_sep)
        ]
        for rep in raw.split(enc.repetition_sep)
    ]


# --- serialize ----------------------------------------------------------------

def serialize_er7(msg: Hl7Message) -> bytes:
    """Canonical ER7 bytes: CR-terminated segments, escaped values."""
    enc = msg.encoding
    if not msg.segments or msg.segments[0].id != "MSH":
        raise InvalidMessage("first segment must be MSH")
    out = []
    for i, seg in enumerate(msg.segments):
        rendered = [_render_field(f, enc) for f in seg.fields]
        if i == 0:
            body = enc.field_sep.join([f"MSH{enc.field_sep}{enc.msh_2}"] + rendered)
        else:
            body = enc.field_sep.join([seg.id] + rendered)
        out.append(body + "\r")
    return "".join(out).encode("utf-8")


def _render_field(f, enc: EncodingChars) -> str:
    return enc.repetition_sep.join(
        enc.component_sep.join(
            enc.subcomponent_sep.join(escape_value(s, enc) for s in comp)
            for comp in rep)
        for rep in f)

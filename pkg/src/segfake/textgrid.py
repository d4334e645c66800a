"""Praat TextGrid reading (long and short text forms) and vowel queries.

The reader is token based, like Praat's own text reader: every quoted string,
number and ``<exists>`` flag is a token; keys such as ``xmin =`` and bracketed
indices such as ``item [1]:`` are skipped.  Long and short forms therefore
produce the same token stream.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

SILENCE_LABELS = frozenset({"", "sil", "sp", "spn"})

# ARPABET vowels (monophthongs and diphthongs) as emitted by common aligners.
ARPABET_VOWELS = frozenset(
    {"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"}
)

ARPABET_TO_IPA = {
    "AA": "ɑ", "AE": "æ", "AH": "ʌ", "AO": "ɔ", "AW": "aʊ", "AY": "aɪ",
    "EH": "ɛ", "ER": "ɝ", "EY": "eɪ", "IH": "ɪ", "IY": "i", "OW": "oʊ",
    "OY": "ɔɪ", "UH": "ʊ", "UW": "u",
}

_STRESS = re.compile(r"[012]$")


class TextGridError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"TextGrid parse error at line {line}: {message}")


@dataclass(frozen=True)
class PhoneInterval:
    label: str
    start_s: float
    end_s: float

    @property
    def is_silence(self) -> bool:
        return self.label.strip().lower() in SILENCE_LABELS

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class SegmentInventory:
    phones: list[PhoneInterval] = field(default_factory=list)
    words: list[PhoneInterval] = field(default_factory=list)
    total_duration_s: float = 0.0


@dataclass
class Tier:
    name: str
    kind: str  # "IntervalTier" or "TextTier"
    xmin: float
    xmax: float
    intervals: list[PhoneInterval] = field(default_factory=list)


def strip_stress(label: str) -> str:
    return _STRESS.sub("", label.strip())


def to_ipa(label: str, table: dict[str, str] | None = None) -> str:
    """Render a phone label in IPA; labels missing from the table pass through."""
    table = ARPABET_TO_IPA if table is None else table
    base = strip_stress(label)
    return table.get(base, table.get(base.upper(), base))


# --- tokenizer -------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<string>"(?:[^"]|"")*")
  | (?P<flag><exists>|<absent>)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<bracket>\[[^\]\n]*\])
  | (?P<comment>![^\n]*)
  | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<newline>\n)
  | (?P<other>[^\s])
  | (?P<space>[ \t\r\f\v]+)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    value: object
    line: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line = 1
    for m in _TOKEN.finditer(text):
        kind = m.lastgroup
        s = m.group()
        if kind == "string":
            toks.append(_Tok("string", s[1:-1].replace('""', '"'), line))
            line += s.count("\n")
        elif kind == "number":
            toks.append(_Tok("number", float(s), line))
        elif kind == "flag":
            toks.append(_Tok("flag", s == "<exists>", line))
        elif kind == "newline":
            line += 1
        # keys, brackets, '=', ':' and comments carry no data
    return toks


class _Stream:
    def __init__(self, toks: list[_Tok], n_lines: int):
        self.toks = toks
        self.pos = 0
        self.n_lines = n_lines

    def _next(self, what: str) -> _Tok:
        if self.pos >= len(self.toks):
            raise TextGridError(f"unexpected end of file while reading {what} (truncated file?)", self.n_lines)
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def number(self, what: str) -> tuple[float, int]:
        t = self._next(what)
        if t.kind != "number":
            raise TextGridError(f"expected a number for {what}, found {t.kind} {t.value!r}", t.line)
        return t.value, t.line

    def string(self, what: str) -> tuple[str, int]:
        t = self._next(what)
        if t.kind != "string":
            raise TextGridError(f"expected a quoted string for {what}, found {t.kind} {t.value!r}", t.line)
        return t.value, t.line

    def count(self, what: str) -> int:
        v, line = self.number(what)
        if v < 0 or v != int(v):
            raise TextGridError(f"{what} must be a non-negative integer, got {v}", line)
        return int(v)


def _decode(raw: bytes) -> str:
    if raw.startswith(b"\xef\xbb\xbf"):
        return raw[3:].decode("utf-8")
    if raw.startswith((b"\xff\xfe", b"\xfe\xff")):
        return raw.decode("utf-16")
    if b"\x00" in raw[:200]:
        # BOM-less UTF-16: ASCII header puts the zero byte on one side
        return raw.decode("utf-16-le" if raw[1:2] == b"\x00" else "utf-16-be")
    return raw.decode("utf-8")


def parse_tiers(text: str) -> tuple[float, float, list[Tier]]:
    """Parse TextGrid text into ``(xmin, xmax, tiers)``."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    st = _Stream(_tokenize(text), text.count("\n") + 1)
    file_type, line = st.string("file type")
    if file_type != "ooTextFile":
        raise TextGridError(f"not a Praat text file (file type {file_type!r})", line)
    obj, line = st.string("object class")
    if obj != "TextGrid":
        raise TextGridError(f"object class {obj!r} is not TextGrid", line)
    xmin, _ = st.number("xmin")
    xmax, line = st.number("xmax")
    if xmin >= xmax:
        raise TextGridError(f"xmin {xmin} >= xmax {xmax}", line)

    tiers: list[Tier] = []
    if st.pos < len(st.toks) and st.toks[st.pos].kind == "flag":
        exists = st._next("tiers flag").value
    else:
        exists = True
    n_tiers = st.count("tier count") if exists else 0

    for ti in range(n_tiers):
        kind, kline = st.string(f"class of tier {ti + 1}")
        name, _ = st.string(f"name of tier {ti + 1}")
        t_min, _ = st.number(f"xmin of tier {name!r}")
        t_max, tline = st.number(f"xmax of tier {name!r}")
        if t_min >= t_max:
            raise TextGridError(f"tier {name!r}: xmin {t_min} >= xmax {t_max}", tline)
        n = st.count(f"size of tier {name!r}")
        tier = Tier(name, kind, t_min, t_max)
        if kind == "IntervalTier":
            prev_end = None
            for i in range(n):
                a, _ = st.number(f"interval {i + 1} xmin in tier {name!r}")
                b, bline = st.number(f"interval {i + 1} xmax in tier {name!r}")
                label, _ = st.string(f"interval {i + 1} text in tier {name!r}")
                if a >= b:
                    raise TextGridError(f"tier {name!r} interval {i + 1}: xmin {a} >= xmax {b}", bline)
                if prev_end is not None and a < prev_end - 1e-9:
                    raise TextGridError(f"tier {name!r} interval {i + 1} overlaps its predecessor", bline)
                if a < xmin - 1e-9 or b > xmax + 1e-9:
                    raise TextGridError(f"tier {name!r} interval {i + 1} lies outside [{xmin}, {xmax}]", bline)
                prev_end = b
                tier.intervals.append(PhoneInterval(label, a, b))
        elif kind == "TextTier":
            for i in range(n):
                st.number(f"point {i + 1} time in tier {name!r}")
                st.string(f"point {i + 1} mark in tier {name!r}")
        else:
            raise TextGridError(f"unknown tier class {kind!r}", kline)
        tiers.append(tier)

    if st.pos != len(st.toks):
        t = st.toks[st.pos]
        raise TextGridError(
            f"{len(st.toks) - st.pos} unexpected trailing tokens (tier or interval counts inconsistent)", t.line
        )
    return xmin, xmax, tiers


def _pick(tiers: list[Tier], key: str) -> Tier | None:
    key = key.lower()
    exact = [t for t in tiers if t.name.strip().lower() == key]
    if exact:
        return exact[0]
    loose = [t for t in tiers if t.name.strip().lower().endswith(key)]
    return loose[0] if loose else None


def inventory_from_text(text: str, source: str = "<string>") -> SegmentInventory:
    xmin, xmax, tiers = parse_tiers(text)
    for t in tiers:
        if t.kind == "TextTier":
            log.warning("%s: skipping point tier %r", source, t.name)
    tiers = [t for t in tiers if t.kind == "IntervalTier"]
    phones = _pick(tiers, "phones")
    words = _pick(tiers, "words")
    if phones is None:
        raise TextGridError(f"no interval tier named 'phones' (tiers: {[t.name for t in tiers]})", 1)
    return SegmentInventory(
        phones=list(phones.intervals),
        words=list(words.intervals) if words is not None else [],
        total_duration_s=xmax,
    )


def parse_textgrid(path) -> SegmentInventory:
    """Read the phone and word tiers of a TextGrid file (UTF-8 or UTF-16)."""
    path = Path(path)
    try:
        text = _decode(path.read_bytes())
    except UnicodeDecodeError as exc:
        raise TextGridError(f"cannot decode as UTF-8/UTF-16: {exc}", 1) from None
    return inventory_from_text(text, str(path))


def _fmt(x: float) -> str:
    return repr(float(x))


def _q(s: str) -> str:
    return '"' + s.replace('"', '""') + '"'


def serialize_textgrid(inv: SegmentInventory, short: bool = False) -> str:
    """Write an inventory back out as a Praat TextGrid (long form by default)."""
    tiers = [("phones", inv.phones)]
    if inv.words:
        tiers.insert(0, ("words", inv.words))
    xmax = inv.total_duration_s
    if short:
        out = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "", "0", _fmt(xmax), "<exists>", str(len(tiers))]
        for name, ivs in tiers:
            out += ['"IntervalTier"', _q(name), "0", _fmt(xmax), str(len(ivs))]
            for iv in ivs:
                out += [_fmt(iv.start_s), _fmt(iv.end_s), _q(iv.label)]
        return "\n".join(out) + "\n"

    out = [
        'File type = "ooTextFile"',
        'Object class = "TextGrid"',
        "",
        "xmin = 0",
        f"xmax = {_fmt(xmax)}",
        "tiers? <exists>",
        f"size = {len(tiers)}",
        "item []:",
    ]
    for k, (name, ivs) in enumerate(tiers, 1):
        out += [
            f"    item [{k}]:",
            '        class = "IntervalTier"',
            f"        name = {_q(name)}",
            "        xmin = 0",
            f"        xmax = {_fmt(xmax)}",
            f"        intervals: size = {len(ivs)}",
        ]
        for i, iv in enumerate(ivs, 1):
            out += [
                f"        intervals [{i}]:",
                f"            xmin = {_fmt(iv.start_s)}",
                f"            xmax = {_fmt(iv.end_s)}",
                f"            text = {_q(iv.label)}",
            ]
    return "\n".join(out) + "\n"


def write_textgrid(path, inv: SegmentInventory, short: bool = False) -> None:
    Path(path).write_text(serialize_textgrid(inv, short=short), encoding="utf-8")


def vocalic_segments(inv: SegmentInventory, vowel_set) -> list[PhoneInterval]:
    """Phone intervals whose stress-stripped label is in ``vowel_set``."""
    vowel_set = set(vowel_set)
    if not vowel_set:
        raise ValueError("vowel_set must not be empty")
    return [p for p in inv.phones if strip_stress(p.label) in vowel_set]

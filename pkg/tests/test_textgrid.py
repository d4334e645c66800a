import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segfake.textgrid import (
    ARPABET_VOWELS,
    PhoneInterval,
    SegmentInventory,
    TextGridError,
    inventory_from_text,
    parse_textgrid,
    serialize_textgrid,
    strip_stress,
    to_ipa,
    vocalic_segments,
)

MINIMAL = """File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.5
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.5
        intervals: size = 1
        intervals [1]:
            xmin = 0.0
            xmax = 0.5
            text = "AH0"
"""

PHONES = ["AH0", "T", "IY1", "sil", "UH1", "K", "AW2", "OW0", "", "S", "EH1", "N", "spn", "ER0", "D", "AY1"]


def long_form(tiers, xmax):
    """Independent long-form writer for fixtures: tiers = [(name, [(a, b, label)])]."""
    out = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "", "xmin = 0", f"xmax = {xmax}",
           "tiers? <exists>", f"size = {len(tiers)}", "item []:"]
    for i, (name, ivs) in enumerate(tiers, 1):
        out += [f"    item [{i}]:", '        class = "IntervalTier"', f'        name = "{name}"',
                "        xmin = 0", f"        xmax = {xmax}", f"        intervals: size = {len(ivs)}"]
        for j, (a, b, lab) in enumerate(ivs, 1):
            out += [f"        intervals [{j}]:", f"            xmin = {a}", f"            xmax = {b}",
                    f'            text = "{lab}"']
    return "\n".join(out) + "\n"


def generated(n, seed=0):
    rng = np.random.default_rng(seed)
    bounds = np.concatenate([[0.0], np.cumsum(rng.uniform(0.03, 0.2, n))])
    labels = [PHONES[i] for i in rng.integers(len(PHONES), size=n)]
    ivs = [(float(bounds[i]), float(bounds[i + 1]), labels[i]) for i in range(n)]
    return ivs, float(bounds[-1])


def test_minimal_long_form():
    inv = inventory_from_text(MINIMAL)
    assert inv.phones == [PhoneInterval("AH0", 0.0, 0.5)]
    assert inv.total_duration_s == 0.5


def test_utf16_identical(tmp_path):
    a, b = tmp_path / "a.TextGrid", tmp_path / "b.TextGrid"
    a.write_text(MINIMAL, encoding="utf-8")
    b.write_text(MINIMAL, encoding="utf-16")
    assert parse_textgrid(a) == parse_textgrid(b)


def test_crlf_line_endings():
    assert inventory_from_text(MINIMAL.replace("\n", "\r\n")) == inventory_from_text(MINIMAL)


def test_short_form_matches_long_form():
    ivs, xmax = generated(30, seed=4)
    inv = inventory_from_text(long_form([("words", ivs[:1] + [(ivs[0][1], xmax, "w")]), ("phones", ivs)], xmax))
    short = serialize_textgrid(inv, short=True)
    assert "item [" not in short
    assert inventory_from_text(short) == inv


def test_round_trip_100_intervals():
    ivs, xmax = generated(100, seed=1)
    inv = inventory_from_text(long_form([("phones", ivs)], xmax))
    assert len(inv.phones) == 100
    assert inventory_from_text(serialize_textgrid(inv)) == inv


def test_tier_name_match_is_case_insensitive():
    ivs, xmax = generated(5)
    inv = inventory_from_text(long_form([("Words", [(0, xmax, "x")]), ("PHONES", ivs)], xmax))
    assert len(inv.phones) == 5 and len(inv.words) == 1


def test_silence_flag():
    ivs = [(0, 0.1, ""), (0.1, 0.2, "sil"), (0.2, 0.3, "AA1")]
    inv = inventory_from_text(long_form([("phones", ivs)], 0.3))
    assert [p.is_silence for p in inv.phones] == [True, True, False]


def test_truncated_file_reports_line():
    text = MINIMAL[: MINIMAL.index("text =")]
    with pytest.raises(TextGridError) as e:
        inventory_from_text(text)
    assert e.value.line >= 1


def test_count_mismatch_rejected():
    with pytest.raises(TextGridError):
        inventory_from_text(MINIMAL.replace("intervals: size = 1", "intervals: size = 2"))


def test_xmin_not_below_xmax_rejected():
    with pytest.raises(TextGridError) as e:
        inventory_from_text(MINIMAL.replace("            xmin = 0.0", "            xmin = 0.5"))
    assert e.value.line in (16, 17)  # the xmin or xmax line of the bad interval


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 10_000), cut=st.floats(0.05, 0.95))
def test_parsing_total_and_mutants_rejected(n, seed, cut):
    ivs, xmax = generated(n, seed)
    text = long_form([("phones", ivs)], xmax)
    inv = inventory_from_text(text)
    assert len(inv.phones) == n
    with pytest.raises(TextGridError):
        inventory_from_text(text.replace(f"intervals: size = {n}", f"intervals: size = {n + 1}"))
    # a truncated document must never parse, whatever the cut point
    truncated = text[: int(cut * len(text))]
    with pytest.raises(TextGridError):
        inventory_from_text(truncated)


def test_strip_stress_and_ipa():
    assert strip_stress("IY1") == "IY"
    assert strip_stress("T") == "T"
    assert to_ipa("UH1") == "ʊ"
    assert to_ipa("XX") == "XX"
    assert to_ipa("UH1", {"UH": "U"}) == "U"


def test_vocalic_segments_membership():
    ivs = [(0, 0.1, "AH0"), (0.1, 0.2, "T"), (0.2, 0.3, "IY1")]
    inv = inventory_from_text(long_form([("phones", ivs)], 0.3))
    got = vocalic_segments(inv, {"AH", "IY"})
    assert [p.label for p in got] == ["AH0", "IY1"]
    assert vocalic_segments(inv, {"UW"}) == []
    with pytest.raises(ValueError):
        vocalic_segments(inv, set())


def test_vocalic_count_matches_brute_force_scan():
    rng = np.random.default_rng(7)
    arpabet = sorted(ARPABET_VOWELS) + ["P", "T", "K", "S", "Z", "M", "N", "L", "R", "HH"]
    labels = [arpabet[i] + (str(rng.integers(3)) if arpabet[i] in ARPABET_VOWELS else "") for i in rng.integers(len(arpabet), size=40)]
    ivs = [(i * 0.1, (i + 1) * 0.1, lab) for i, lab in enumerate(labels)]
    inv = inventory_from_text(long_form([("phones", ivs)], 4.0))
    expected = sum(1 for lab in labels if lab.rstrip("012") in ARPABET_VOWELS)
    got = vocalic_segments(inv, ARPABET_VOWELS)
    assert len(got) == expected
    # subsequence of the phones tier, order preserved
    it = iter(inv.phones)
    assert all(any(p == q for q in it) for p in got)


def test_point_tier_skipped_with_warning(caplog):
    text = long_form([("phones", [(0, 0.5, "AA1")])], 0.5)
    text = text.replace("size = 1\nitem []:", "size = 2\nitem []:") + (
        '    item [2]:\n        class = "TextTier"\n        name = "tones"\n        xmin = 0\n        xmax = 0.5\n'
        '        points: size = 1\n        points [1]:\n            number = 0.25\n            mark = "H"\n'
    )
    inv = inventory_from_text(text)
    assert len(inv.phones) == 1
    assert any("tones" in r.message or "point" in r.message.lower() for r in caplog.records)


def test_missing_phones_tier_is_error():
    with pytest.raises(TextGridError):
        inventory_from_text(long_form([("words", [(0, 0.5, "x")])], 0.5))


def test_inventory_invariants_hold_for_serializer():
    inv = SegmentInventory([PhoneInterval("", 0.0, 0.2), PhoneInterval("AA1", 0.2, 0.4)], [], 0.4)
    back = inventory_from_text(serialize_textgrid(inv))
    assert back.phones == inv.phones

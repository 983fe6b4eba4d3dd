import json

import pytest
from hypothesis import given, settings, strategies as st

from sdoh_forge.corpus import (
    CategoryConfig,
    Disposition,
    Label,
    LabeledExample,
    NoteRecord,
    SectionGrammar,
    SplitSpec,
    balanced_prefix,
    balanced_split,
    concat_sections,
    extract_social_history,
    extract_with_flags,
    field_filter,
    labeled_pool,
    merge_label,
    read_notes,
    segment_sentences,
)
from sdoh_forge.errors import (
    ConfigError,
    DataError,
    InsufficientClass,
    MissingSection,
    UnknownRawValue,
)

from conftest import write_jsonl


# extraction ----------------------------------------------------------------

def test_extract_between_headers():
    note = "HPI: fever.\nSocial History:\nLives alone, retired.\n\nFamily History:\nNone."
    assert extract_social_history(note) == "Lives alone, retired."


def test_extract_absent():
    assert extract_social_history("HPI: fever for 3 days.") is None


def test_extract_to_end_of_input_is_suspect():
    res = extract_with_flags("Social History:\nSmokes 1ppd.")
    assert res.text == "Smokes 1ppd."
    assert res.suspect


def test_extract_first_header_wins_and_case_insensitive():
    note = "  SOCIAL HISTORY: first body here\nPlan:\nx\nSocial History:\nsecond"
    assert extract_social_history(note) == "first body here"


def test_extract_short_section_flagged():
    res = extract_with_flags("Social History:\nNone.\nPlan:\nrest")
    assert res.text == "None." and res.suspect
    res = extract_with_flags("Social History:\nLives with his wife.\nPlan:\nrest")
    assert not res.suspect


def test_prose_colon_is_not_a_terminator():
    note = "Social History:\nshe reports: no alcohol. Lives alone.\nPhysical Exam:\nok"
    assert extract_social_history(note) == "she reports: no alcohol. Lives alone."


def test_malformed_grammar_rejected():
    with pytest.raises(ConfigError):
        SectionGrammar(start="(unclosed")


@settings(max_examples=200)
@given(st.text(alphabet="abcdefgh ,.;\n", min_size=1, max_size=60))
def test_extraction_idempotence(body):
    # a body without headers never re-matches the start header
    section = extract_social_history("Social History:\n" + body + "\nPlan:\nx")
    assert section is not None
    assert extract_social_history(section) is None


# sentences -----------------------------------------------------------------

def test_segment_basic():
    assert segment_sentences("Pt sleeps poorly. Snores loudly.") == ["Pt sleeps poorly.", "Snores loudly."]


def test_segment_empty():
    assert segment_sentences("") == []


def test_segment_abbreviation_guard():
    assert segment_sentences("Dr. Smith saw the patient.") == ["Dr. Smith saw the patient."]


def test_segment_three_units():
    assert segment_sentences("A. B. C.") == ["A.", "B.", "C."]


@settings(max_examples=300)
@given(st.text(alphabet="aAbB .!?\n\t", max_size=80))
def test_segment_preserves_characters(text):
    parts = segment_sentences(text)
    assert all(p and p == p.strip() for p in parts)
    squash = lambda s: "".join(s.split())
    assert squash(" ".join(parts)) == squash(text)


# concat --------------------------------------------------------------------

def test_concat_sections():
    note = NoteRecord("n1", "full", sections={"A": "x", "B": "y"})
    assert concat_sections(note, ["A", "B"]) == "x\n\ny"
    assert concat_sections(note, ["A"]) == "x"
    with pytest.raises(MissingSection) as exc:
        concat_sections(note, ["A", "C"])
    assert exc.value.name == "C"


# labels --------------------------------------------------------------------

def test_merge_label(tobacco_cfg):
    assert merge_label("Past", tobacco_cfg) is Disposition.POSITIVE
    assert merge_label("Unsure", tobacco_cfg) is Disposition.DROP
    with pytest.raises(UnknownRawValue):
        merge_label("Vaping", tobacco_cfg)


def test_merge_label_partitions(tobacco_cfg):
    for raw in tobacco_cfg.merge_map:
        assert merge_label(raw, tobacco_cfg) in set(Disposition)


def test_category_answers_must_differ():
    with pytest.raises(ConfigError):
        CategoryConfig("x", {}, "r", "t", "s", positive_answer="Yes", negative_answer="yes")


def test_labeled_pool_drops_and_skips(tobacco_cfg):
    notes = [
        NoteRecord("a", "smokes", gold={"tobacco": "Present"}),
        NoteRecord("b", "unclear", gold={"tobacco": "Unsure"}),
        NoteRecord("c", "never", gold={"tobacco": "Never"}),
        NoteRecord("d", "no gold"),
    ]
    pool = labeled_pool(notes, tobacco_cfg)
    assert [(ex.note_id, ex.label) for ex in pool] == [("a", Label.POSITIVE), ("c", Label.NEGATIVE)]


def test_labeled_example_rejects_blank_text():
    with pytest.raises(DataError):
        LabeledExample("x", "   ", Label.POSITIVE)


# splits --------------------------------------------------------------------

def _pool(n_pos, n_neg):
    return ([LabeledExample(f"p{i}", f"pos {i}", Label.POSITIVE) for i in range(n_pos)]
            + [LabeledExample(f"n{i}", f"neg {i}", Label.NEGATIVE) for i in range(n_neg)])


def test_balanced_split_counts():
    train, test = balanced_split(_pool(10, 10), SplitSpec(4, 4, 2, 2, seed=7))
    assert len(train) == 8 and sum(ex.label is Label.POSITIVE for ex in train) == 4
    assert len(test) == 4 and sum(ex.label is Label.POSITIVE for ex in test) == 2
    assert not {ex.note_id for ex in train} & {ex.note_id for ex in test}


def test_balanced_split_insufficient():
    with pytest.raises(InsufficientClass) as exc:
        balanced_split(_pool(3, 10), SplitSpec(4, 4, 2, 2, seed=7))
    assert (exc.value.label, exc.value.have, exc.value.need) == ("POSITIVE", 3, 6)


def test_balanced_split_deterministic():
    a = balanced_split(_pool(10, 10), SplitSpec(4, 4, 2, 2, seed=7))
    b = balanced_split(_pool(10, 10), SplitSpec(4, 4, 2, 2, seed=7))
    assert [[e.note_id for e in part] for part in a] == [[e.note_id for e in part] for part in b]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 5), st.integers(0, 5))
def test_balanced_split_property(seed, tp, te):
    train, test = balanced_split(_pool(12, 15), SplitSpec(tp, tp, te, te, seed))
    for part, k in ((train, tp), (test, te)):
        assert sum(e.label is Label.POSITIVE for e in part) == k
        assert sum(e.label is Label.NEGATIVE for e in part) == k


def test_balanced_prefix_nested():
    train, _ = balanced_split(_pool(20, 20), SplitSpec(16, 16, 0, 0, seed=1))
    small = balanced_prefix(train, 8)
    big = balanced_prefix(train, 16)
    assert {e.note_id for e in small} <= {e.note_id for e in big}
    assert sum(e.label is Label.POSITIVE for e in small) == 4
    with pytest.raises(InsufficientClass):
        balanced_prefix(train, 64)


def test_split_spec_rejects_negative():
    with pytest.raises(ConfigError):
        SplitSpec(-1, 0, 0, 0)


# files ---------------------------------------------------------------------

def test_read_notes_and_filter(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [
        {"id": "1", "text": "a", "gold": {"age_group": "adult", "tobacco": "Never"}},
        {"id": "2", "text": "b", "gold": {"age_group": "neonate", "tobacco": "Never"}},
        {"id": "3", "text": "c", "gold": {"age_group": "adult"}},
    ])
    keep = field_filter({"age_group": ["neonate"], "tobacco": [None]})
    assert [n.id for n in read_notes(path, keep)] == ["1"]
    assert len(read_notes(path)) == 3


def test_read_notes_duplicate_and_bad_json(tmp_path):
    p = write_jsonl(tmp_path / "d.jsonl", [{"id": "1", "text": "a"}, {"id": "1", "text": "b"}])
    with pytest.raises(DataError):
        read_notes(p)
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "1", "text": "a"}\nnot json\n')
    with pytest.raises(DataError):
        read_notes(bad)


def test_note_record_roundtrip():
    note = NoteRecord("x", "t", sections={"A": "t"}, gold={"tobacco": "Past"}, source_tag="s",
                      extraction_suspect=True)
    assert NoteRecord.from_json(json.loads(json.dumps(note.to_json()))) == note

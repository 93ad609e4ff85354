import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from distilqa.corpus import (
    Dataset,
    PAD_ID,
    PAD_TOKEN,
    QaExample,
    UNK_ID,
    UNK_TOKEN,
    Vocabulary,
    build_vocab,
    generate_toy_corpus,
    import_squad,
    load_jsonl,
    save_jsonl,
    tokenize,
)
from distilqa.evaluation import exact_match

# ---------------------------------------------------------------------------
# tokenize


def test_tokenize_basic_sentence():
    assert tokenize("The cat sat.") == ["the", "cat", "sat"]


def test_tokenize_empty_string():
    assert tokenize("") == []


def test_tokenize_keeps_internal_punctuation():
    assert tokenize("Mother-in-law's house, obviously!") == \
        ["mother-in-law's", "house", "obviously"]


def test_tokenize_drops_punctuation_only_tokens():
    assert tokenize("wait -- what ?!") == ["wait", "what"]


def test_tokenize_splits_on_unicode_whitespace():
    assert tokenize("a b c\nd") == ["a", "b", "c", "d"]


@given(st.text(max_size=80))
def test_tokenize_idempotent_on_its_own_output(text):
    once = tokenize(text)
    again = tokenize(" ".join(once))
    assert once == again


# ---------------------------------------------------------------------------
# QaExample / Dataset


def _example(**overrides):
    base = dict(id="x1", question_tokens=["what", "is", "it"],
                document_tokens=["it", "is", "blue", "today"],
                answer_start=2, answer_end=2)
    base.update(overrides)
    return QaExample(**base)


def test_example_fills_answer_text_from_span():
    ex = _example(answer_start=2, answer_end=3)
    assert ex.answer_text == "blue today"


def test_example_allows_diverged_answer_text():
    ex = _example(answer_text="originally something else")
    assert ex.answer_text == "originally something else"


@pytest.mark.parametrize("start,end", [(-1, 1), (2, 1), (0, 4), (4, 4)])
def test_example_rejects_bad_spans_naming_id(start, end):
    with pytest.raises(ValueError) as err:
        _example(id="bad-span-ex", answer_start=start, answer_end=end)
    assert "bad-span-ex" in str(err.value)


def test_example_rejects_empty_document():
    with pytest.raises(ValueError):
        _example(document_tokens=[], answer_start=0, answer_end=0)


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(ValueError) as err:
        Dataset([_example(), _example()])
    assert "x1" in str(err.value)


# ---------------------------------------------------------------------------
# vocabulary


def test_vocabulary_reserved_slots():
    v = Vocabulary()
    assert v.token_to_id[PAD_TOKEN] == PAD_ID
    assert v.token_to_id[UNK_TOKEN] == UNK_ID
    assert len(v) == 2


def test_vocabulary_encode_decode_and_unknowns():
    v = Vocabulary(["cat", "dog"])
    assert v.encode(["cat", "dog", "bird"]) == [2, 3, UNK_ID]
    assert v.decode([2, 3]) == ["cat", "dog"]
    assert "cat" in v and "bird" not in v


def test_vocabulary_save_load_round_trip(tmp_path):
    v = Vocabulary(["cat", "dog", "émile"])
    path = str(tmp_path / "vocab.json")
    v.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.id_to_token == v.id_to_token
    assert loaded.token_to_id == v.token_to_id


def test_vocabulary_load_rejects_missing_reserved(tmp_path):
    path = tmp_path / "vocab.json"
    path.write_text(json.dumps({"tokens": ["cat", "dog"]}))
    with pytest.raises(ValueError):
        Vocabulary.load(str(path))


def _dataset_from_docs(docs, name="d"):
    examples = [
        QaExample(id=f"{name}-{i}", question_tokens=["q"],
                  document_tokens=doc, answer_start=0, answer_end=0)
        for i, doc in enumerate(docs)
    ]
    return Dataset(examples, split_name=name)


def test_build_vocab_empty_corpus_is_reserved_only():
    assert len(build_vocab([])) == 2


def test_build_vocab_min_count_filters():
    ds = _dataset_from_docs([["a", "a", "b"]])
    v = build_vocab([ds], min_count=2)
    assert "a" in v and "b" not in v and "q" not in v


def test_build_vocab_order_matches_brute_force():
    docs = [["pear", "apple", "apple"], ["pear", "kiwi", "apple"],
            ["kiwi", "fig", "fig"]]
    ds = _dataset_from_docs(docs)
    v = build_vocab([ds])
    counts = {}
    for doc in docs:
        for tok in doc:
            counts[tok] = counts.get(tok, 0) + 1
    counts["q"] = len(docs)
    expected = [PAD_TOKEN, UNK_TOKEN] + sorted(
        counts, key=lambda t: (-counts[t], t))
    assert v.id_to_token == expected


def test_build_vocab_invariant_to_dataset_order():
    a = _dataset_from_docs([["x", "y"], ["y", "z"]], "a")
    b = _dataset_from_docs([["z", "w"]], "b")
    assert build_vocab([a, b]).id_to_token == build_vocab([b, a]).id_to_token


# ---------------------------------------------------------------------------
# toy corpus


def test_toy_corpus_deterministic():
    a_train, a_dev = generate_toy_corpus(5, 3, seed=7)
    b_train, b_dev = generate_toy_corpus(5, 3, seed=7)
    assert a_train == b_train and a_dev == b_dev


def test_toy_corpus_seeds_differ():
    a, _ = generate_toy_corpus(5, 1, seed=1)
    b, _ = generate_toy_corpus(5, 1, seed=2)
    assert a != b


def test_toy_corpus_sizes_and_unique_ids():
    train, dev = generate_toy_corpus(12, 4, seed=0)
    assert len(train) == 12 and len(dev) == 4
    ids = [ex.id for ex in train] + [ex.id for ex in dev]
    assert len(set(ids)) == len(ids)


def _occurrences(haystack, needle):
    return sum(1 for i in range(len(haystack) - len(needle) + 1)
               if haystack[i:i + len(needle)] == needle)


def test_toy_corpus_invariants_scan():
    train, dev = generate_toy_corpus(120, 40, seed=3)
    pairs = set()
    for ex in list(train) + list(dev):
        assert 0 <= ex.answer_start <= ex.answer_end < len(ex.document_tokens)
        span = ex.document_tokens[ex.answer_start:ex.answer_end + 1]
        assert " ".join(span) == ex.answer_text
        # The answer sequence occurs exactly once in the document.
        assert _occurrences(ex.document_tokens, span) == 1
        pair = (tuple(ex.question_tokens), tuple(ex.document_tokens))
        assert pair not in pairs
        pairs.add(pair)


def test_toy_corpus_entity_pools_overlap_across_splits():
    train, dev = generate_toy_corpus(60, 60, seed=5)

    def entities(ds):
        # Question shape: what is the <attr> of the <entity>
        return {ex.question_tokens[-1] for ex in ds}

    assert entities(train) & entities(dev)


def _sentence_overlap_prediction(example):
    """The stated learnability baseline: split the document at each 'the'
    (sentences are templated 'the ENT ATTR is VALUE...'), score each
    sentence's first four tokens against the question bag, and return the
    value tokens of the best-scoring sentence."""
    doc = example.document_tokens
    starts = [i for i, tok in enumerate(doc) if tok == "the"]
    bounds = list(zip(starts, starts[1:] + [len(doc)]))
    qset = set(example.question_tokens)
    best, best_score = None, -1
    for s, e in bounds:
        score = len(qset & set(doc[s:s + 4]))
        if score > best_score:
            best, best_score = (s, e), score
    s, e = best
    return " ".join(doc[s + 4:e])


def test_toy_corpus_solvable_by_overlap_heuristic():
    train, dev = generate_toy_corpus(2000, 500, seed=0)
    examples = list(train) + list(dev)
    hits = sum(exact_match(_sentence_overlap_prediction(ex), ex.answer_text)
               for ex in examples)
    assert hits / len(examples) >= 0.60


# ---------------------------------------------------------------------------
# JSONL round trip


def test_jsonl_round_trip(tmp_path):
    train, _ = generate_toy_corpus(8, 1, seed=11)
    path = str(tmp_path / "train.jsonl")
    save_jsonl(path, train)
    loaded = load_jsonl(path, split_name="train")
    assert loaded.examples == train.examples
    assert loaded.split_name == "train"


def test_jsonl_save_then_save_is_byte_identical(tmp_path):
    train, _ = generate_toy_corpus(4, 1, seed=2)
    p1, p2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    save_jsonl(p1, train)
    save_jsonl(p2, train)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_load_jsonl_names_line_number_for_malformed_json(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"id": "a", "question": ["q"], "document": ["d"],
                       "answer_start": 0, "answer_end": 0,
                       "answer_text": "d"})
    path.write_text(good + "\n{not json}\n")
    with pytest.raises(ValueError) as err:
        load_jsonl(str(path))
    assert "line 2" in str(err.value)


def test_load_jsonl_names_line_for_missing_field(tmp_path):
    path = tmp_path / "missing.jsonl"
    obj = {"id": "a", "question": ["q"], "document": ["d"],
           "answer_start": 0, "answer_text": "d"}
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(ValueError) as err:
        load_jsonl(str(path))
    assert "line 1" in str(err.value) and "answer_end" in str(err.value)


def test_load_jsonl_names_example_id_for_bad_span(tmp_path):
    path = tmp_path / "span.jsonl"
    obj = {"id": "ex-42", "question": ["q"], "document": ["d", "e"],
           "answer_start": 1, "answer_end": 0, "answer_text": "d"}
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(ValueError) as err:
        load_jsonl(str(path))
    assert "ex-42" in str(err.value)


# ---------------------------------------------------------------------------
# SQuAD import

SQUAD_FIXTURE = {
    "version": "1.1",
    "data": [{
        "title": "Fixture",
        "paragraphs": [{
            "context": "The quick brown fox jumps over the lazy dog.",
            "qas": [
                {"id": "q1", "question": "What kind of fox?",
                 "answers": [{"text": "quick brown", "answer_start": 4}]},
                {"id": "q2", "question": "Over what does it jump?",
                 "answers": [{"text": "lazy dog", "answer_start": 35}]},
            ],
        }],
    }],
}


def _write_squad(tmp_path, payload):
    path = tmp_path / "squad.json"
    path.write_text(json.dumps(payload))
    return str(path)


def test_import_squad_aligns_char_offsets_to_token_spans(tmp_path):
    ds, skipped = import_squad(_write_squad(tmp_path, SQUAD_FIXTURE))
    assert skipped == 0
    assert len(ds) == 2
    by_id = {ex.id: ex for ex in ds}
    assert by_id["q1"].document_tokens == \
        ["the", "quick", "brown", "fox", "jumps", "over", "the", "lazy", "dog"]
    assert (by_id["q1"].answer_start, by_id["q1"].answer_end) == (1, 2)
    assert by_id["q1"].answer_text == "quick brown"
    assert (by_id["q2"].answer_start, by_id["q2"].answer_end) == (7, 8)
    assert by_id["q2"].answer_text == "lazy dog"


def test_import_squad_drops_unalignable_answer(tmp_path):
    payload = json.loads(json.dumps(SQUAD_FIXTURE))
    payload["data"][0]["paragraphs"][0]["qas"][0]["answers"] = \
        [{"text": "purple", "answer_start": 4}]
    ds, skipped = import_squad(_write_squad(tmp_path, payload))
    assert skipped == 1
    assert [ex.id for ex in ds] == ["q2"]


def test_import_squad_empty_data(tmp_path):
    ds, skipped = import_squad(_write_squad(tmp_path, {"data": []}))
    assert len(ds) == 0 and skipped == 0

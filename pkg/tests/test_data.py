import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seglatent.data import (
    DEFAULT_LEXICON,
    POLARITIES,
    DataError,
    LabelVocab,
    SentenceRecord,
    build_relation_matrix,
    build_segment_signal,
    clause_spans,
    format_record,
    generate_synthetic,
    layer_segments,
    load_dataset,
    parse_bracketed_tree,
    save_dataset,
)
from seglatent.encoder import WordVocab

THREE_CLAUSES = (
    "(ROOT (S (S (NP The atmosphere) (VP (VBZ is) (ADJP unheralded))) (, ,) "
    "(S (NP the service) (VP (VBZ is) (ADJP terrible))) (, ,) (CC and) "
    "(S (NP the food) (VP (VBZ is) (ADJP great)))))"
)


def five_token_record(**overrides):
    fields = dict(
        tokens="the food is very good".split(),
        aspect_from=1,
        aspect_to=1,
        polarity="positive",
        dep_head=[2, 5, 5, 5, 0],
        dep_label=["det", "nsubj", "cop", "advmod", "root"],
        constituency="(S (NP (DT the) (NN food)) (VP (VBZ is) (ADJP (RB very) (JJ good))))",
    )
    fields.update(overrides)
    return SentenceRecord(**fields)


# ----------------------------------------------------------------- file I/O


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    assert load_dataset(path) == []


def test_load_single_record(tmp_path):
    path = tmp_path / "one.tsv"
    path.write_text(format_record(five_token_record()) + "\n")
    records = load_dataset(path)
    assert len(records) == 1 and records[0].n == 5


def test_load_rejects_aspect_past_end_with_line_number(tmp_path):
    good = format_record(five_token_record())
    bad = good.replace("\t1\t1\t", "\t1\t5\t", 1)
    path = tmp_path / "bad.tsv"
    path.write_text(good + "\n" + bad + "\n")
    with pytest.raises(DataError, match=":2:"):
        load_dataset(path)


@pytest.mark.parametrize(
    "line",
    [
        "only\tthree\tfields",
        "a b\tx\t0\tpositive\t0 1\tr d\t(S (A a) (B b))",
        "a b\t0\t0\tpositive\t0 0\tr r\t(S (A a) (B b))",
        "a b\t0\t0\thappy\t0 1\tr d\t(S (A a) (B b))",
        "a b\t0\t0\tpositive\t0 1\tr d\t(S (A a))",
    ],
)
def test_load_rejects_malformed_lines(tmp_path, line):
    path = tmp_path / "bad.tsv"
    path.write_text(line + "\n")
    with pytest.raises(DataError, match=":1:"):
        load_dataset(path)


def test_round_trip(tmp_path):
    records = generate_synthetic(3, 25)
    path = tmp_path / "rt.tsv"
    save_dataset(records, path)
    assert load_dataset(path) == records


def test_vocab_files_round_trip(tmp_path):
    records = generate_synthetic(0, 20)
    labels = LabelVocab.from_records(records)
    labels.save(tmp_path / "labels.txt")
    assert LabelVocab.load(tmp_path / "labels.txt").labels == labels.labels
    assert (tmp_path / "labels.txt").read_text().splitlines()[0] == "<none>"
    words = WordVocab.from_records(records)
    words.save(tmp_path / "words.txt")
    assert WordVocab.load(tmp_path / "words.txt").words == words.words


# ------------------------------------------------------------ constituency


def test_parse_small_tree():
    tree = parse_bracketed_tree("(S (NP a) (VP b))")
    assert tree.root.span == (0, 1)
    assert [c.depth for c in tree.root.children] == [2, 2]
    assert all(c.is_leaf for c in tree.root.children)
    assert tree.words == ["a", "b"]


@pytest.mark.parametrize("text", ["((a)", "", "   ", "(S (A a)", "(S a))", "()"])
def test_parse_rejects_malformed(text):
    with pytest.raises(DataError):
        parse_bracketed_tree(text)


def test_three_clause_sentence_has_three_segments_at_layer_three():
    tree = parse_bracketed_tree(THREE_CLAUSES)
    spans = layer_segments(tree, 3)
    multi = [s for s in spans if s[1] > s[0]]
    assert len(multi) == 3
    assert multi == [(0, 3), (5, 8), (11, 14)]
    y = build_segment_signal(tree, 3)[2]
    for start, end in multi:
        assert y[start : end + 1, start : end + 1].all()
    assert y[0, 5] == 0 and y[5, 11] == 0


def test_layer_one_is_whole_sentence():
    tree = parse_bracketed_tree(THREE_CLAUSES)
    assert layer_segments(tree, 1) == [(0, tree.n - 1)]
    np.testing.assert_array_equal(build_segment_signal(tree, 1)[0], np.ones((tree.n, tree.n)))


def test_layer_must_be_positive():
    with pytest.raises(ValueError):
        layer_segments(parse_bracketed_tree("(S a b)"), 0)


def test_two_block_signal():
    tree = parse_bracketed_tree("(S (A (x a) (y b)) (B c))")
    assert layer_segments(tree, 2) == [(0, 1), (2, 2)]
    np.testing.assert_array_equal(build_segment_signal(tree, 2)[1], [[1, 1, 0], [1, 1, 0], [0, 0, 1]])


def _path_spans(tree, layer):
    """Oracle: for each token, walk from the root towards its leaf and keep
    the node at depth ``layer`` or the leaf, whichever comes first."""
    spans = set()
    for tok in range(tree.n):
        node = tree.root
        while node.depth < layer and node.children:
            node = next(c for c in node.children if c.start <= tok <= c.end)
        spans.add(node.span)
    return sorted(spans)


def test_chain_tree_deeper_than_layers():
    tree = parse_bracketed_tree("(A (B (C (D x) y) z) w)")
    for layer in range(1, 8):
        assert layer_segments(tree, layer) == _path_spans(tree, layer)
    assert layer_segments(tree, 7) == [(0, 0), (1, 1), (2, 2), (3, 3)]


@st.composite
def bracket_trees(draw, depth=0):
    if depth >= 4 or draw(st.booleans()) and depth > 0:
        return f"(L w{draw(st.integers(0, 9))})"
    kids = draw(st.lists(bracket_trees(depth=depth + 1), min_size=1, max_size=3))
    return "(N " + " ".join(kids) + ")"


@settings(max_examples=80, deadline=None)
@given(text=bracket_trees(), layers=st.integers(1, 6))
def test_segments_partition_and_match_oracle(text, layers):
    tree = parse_bracketed_tree(text)
    signal = build_segment_signal(tree, layers)
    previous = None
    for layer in range(1, layers + 1):
        spans = layer_segments(tree, layer)
        assert spans[0][0] == 0 and spans[-1][1] == tree.n - 1
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            assert s1 == e0 + 1
        assert spans == _path_spans(tree, layer)
        # block-diagonal expansion, checked cell by cell
        y = signal[layer - 1]
        owner = np.empty(tree.n, dtype=int)
        for idx, (s, e) in enumerate(spans):
            owner[s : e + 1] = idx
        np.testing.assert_array_equal(y, (owner[:, None] == owner[None, :]).astype(float))
        assert np.array_equal(y, y.T) and np.all(np.diag(y) == 1)
        # deeper layers refine shallower ones
        if previous is not None:
            assert np.all(y <= previous)
        previous = y


# ---------------------------------------------------------------- relations


def test_relation_matrix_single_token():
    record = SentenceRecord(["x"], 0, 0, "neutral", [0], ["root"], "(X x)")
    np.testing.assert_array_equal(build_relation_matrix(record, LabelVocab()), [[0]])


def test_relation_matrix_nsubj_pair_is_symmetric():
    record = SentenceRecord(
        "The atmosphere is unheralded".split(),
        1,
        1,
        "positive",
        [2, 4, 4, 0],
        ["det", "nsubj", "cop", "root"],
        "(S (NP The atmosphere) (VP is unheralded))",
    )
    vocab = LabelVocab(["det", "nsubj", "cop"])
    rel = build_relation_matrix(record, vocab)
    assert rel[1, 3] == rel[3, 1] == vocab["nsubj"]
    assert np.all(np.diag(rel) == 0)


def test_relation_matrix_unknown_label():
    record = five_token_record()
    with pytest.raises(KeyError):
        build_relation_matrix(record, LabelVocab(["det"]))
    vocab = LabelVocab(["<unk>"])
    assert set(build_relation_matrix(record, vocab).ravel()) == {0, vocab["<unk>"]}


@pytest.mark.parametrize("seed", range(10))
def test_relation_matrix_random_tree_edge_count(seed):
    rng = np.random.default_rng(seed)
    n = 5
    order = rng.permutation(n)
    heads = [0] * n
    for k in range(1, n):
        heads[order[k]] = int(order[rng.integers(k)]) + 1
    labels = [str(rng.choice(["a", "b", "c"])) for _ in range(n)]
    record = SentenceRecord(list("abcde"), 0, 0, "neutral", heads, labels, "(S a b c d e)").validate()
    rel = build_relation_matrix(record, LabelVocab(["a", "b", "c"]))
    assert np.count_nonzero(rel) == 2 * (n - 1)
    np.testing.assert_array_equal(rel, rel.T)


# ---------------------------------------------------------------- synthetic


def test_synthetic_deterministic():
    assert generate_synthetic(0, 1) == generate_synthetic(0, 1)
    assert generate_synthetic(0, 30) == generate_synthetic(0, 30)
    assert generate_synthetic(0, 30) != generate_synthetic(1, 30)


def test_synthetic_classes_balanced():
    counts = np.bincount([r.label for r in generate_synthetic(0, 200)], minlength=3)
    assert counts.sum() == 200
    assert counts.max() - counts.min() <= 1


def _read_polarity(record):
    """Rule-based reader that only looks inside the aspect's own clause."""
    for start, end in clause_spans(record):
        if start <= record.aspect_from <= end:
            words = record.tokens[start : end + 1]
            for polarity in POLARITIES:
                if any(w in DEFAULT_LEXICON[polarity] for w in words):
                    return polarity
    return None


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synthetic_structure_audit(seed):
    for record in generate_synthetic(seed, 150):
        spans = [s for s in clause_spans(record) if s[1] > s[0]]
        assert 1 <= len(spans) <= 3
        nsubj = [(i, h - 1) for i, (h, lab) in enumerate(zip(record.dep_head, record.dep_label)) if lab == "nsubj"]
        assert len(nsubj) == len(spans)
        for start, end in spans:
            inside = [(dep, head) for dep, head in nsubj if start <= dep <= end]
            assert len(inside) == 1
            dep, head = inside[0]
            assert dep == start and record.tokens[dep] in DEFAULT_LEXICON["aspects"]
            assert start <= head <= end
        assert _read_polarity(record) == record.polarity
        # every other clause carries a different polarity
        for start, end in spans:
            if not start <= record.aspect_from <= end:
                opinion = record.tokens[end]
                assert opinion not in DEFAULT_LEXICON[record.polarity]


def test_synthetic_multi_aspect_split():
    records = generate_synthetic(5, 60, min_clauses=2)
    assert all(len([s for s in clause_spans(r) if s[1] > s[0]]) >= 2 for r in records)


def test_synthetic_rejects_bad_size():
    with pytest.raises(ValueError):
        generate_synthetic(0, 0)

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hctree.errors import CorpusDecodeError, CorpusReadError, EmptyDocument, IngestError
from hctree.ingest import (
    ChunkConfig,
    Document,
    chunk_spans,
    expand_corpus_paths,
    load_corpus,
    read_documents,
    split_text,
)

CFG = ChunkConfig()


def spans(text, cfg=CFG):
    return [(c.start, c.end) for c in split_text(Document("d", text), cfg)]


class TestExamples:
    def test_short_document(self):
        assert spans("字" * 150) == [(0, 150)]

    def test_separator_free_360(self):
        assert spans("a" * 360) == [(0, 200), (160, 360)]

    def test_empty(self):
        with pytest.raises(EmptyDocument):
            split_text(Document("d", ""), CFG)

    def test_prefers_paragraph_breaks(self):
        text = "甲" * 120 + "\n\n" + "乙" * 120
        got = split_text(Document("d", text), CFG)
        assert [(c.start, c.end) for c in got] == [(0, 122), (82, 242)]
        assert got[0].text.endswith("\n\n")

    def test_falls_back_to_chinese_punctuation(self):
        sentence = "天" * 59 + "。"
        text = sentence * 5
        got = spans(text)
        assert got[0] == (0, 180)
        assert all(e % 60 == 0 or e == len(text) for _, e in got)

    def test_whitespace_only_span_dropped(self):
        text = "a" * 150 + " " * 300 + "b" * 10
        got = split_text(Document("d", text), ChunkConfig(200, 0))
        assert all(c.text.strip() for c in got)
        assert [c.chunk_id for c in got] == list(range(1, len(got) + 1))

    def test_overlap_zero(self):
        assert spans("x" * 450, ChunkConfig(200, 0)) == [(0, 200), (200, 400), (400, 450)]

    def test_code_points_not_bytes(self):
        text = "😀" * 200
        assert spans(text) == [(0, 200)]

    @pytest.mark.parametrize("size,overlap", [(0, 0), (10, 10), (10, -1)])
    def test_bad_config(self, size, overlap):
        with pytest.raises(ValueError):
            ChunkConfig(size, overlap)


alphabet = st.sampled_from(list("ab 字。；，\n") + ["\n\n", "😀", "\t"])
texts = st.lists(alphabet, min_size=1, max_size=900).map("".join)
configs = st.tuples(st.integers(1, 250), st.integers(0, 249)).filter(lambda t: t[1] < t[0])


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(st.text(min_size=1, max_size=1200), configs)
    def test_spans_cover_and_bound(self, text, cfg):
        cfg = ChunkConfig(*cfg)
        got = chunk_spans(text, cfg)
        assert got[0][0] == 0 and got[-1][1] == len(text)
        for (s0, e0), (s1, e1) in zip(got, got[1:]):
            assert s0 < s1 and s1 <= e0          # ordered, no gap
            assert e0 - s1 <= cfg.chunk_overlap  # overlap bounded
        assert all(0 < e - s <= cfg.chunk_size for s, e in got)

    @settings(max_examples=300, deadline=None)
    @given(texts, configs)
    def test_chunks_cover_visible_text(self, text, cfg):
        cfg = ChunkConfig(*cfg)
        if not text.strip():
            return
        chunks = split_text(Document("d", text), cfg)
        covered = set()
        for c in chunks:
            assert c.text == text[c.start:c.end]
            assert 1 <= len(c.text) <= cfg.chunk_size
            covered.update(range(c.start, c.end))
        assert all(i in covered for i, ch in enumerate(text) if not ch.isspace())

    @settings(max_examples=100, deadline=None)
    @given(texts)
    def test_deterministic(self, text):
        if text.strip():
            assert split_text(Document("d", text), CFG) == split_text(Document("d", text), CFG)


class TestCorpus:
    def test_two_files(self, tmp_path):
        (tmp_path / "a.txt").write_text("甲文档", encoding="utf-8")
        (tmp_path / "b.txt").write_text("乙文档", encoding="utf-8")
        docs, chunks = load_corpus(expand_corpus_paths([tmp_path]))
        assert [d.doc_id for d in docs] == ["a", "b"]
        assert [c.chunk_id for c in chunks] == [1, 2]

    def test_long_file(self, tmp_path):
        p = tmp_path / "long.txt"
        p.write_text("z" * 360, encoding="utf-8")
        _, chunks = load_corpus([p])
        assert [c.chunk_id for c in chunks] == [1, 2]

    def test_jsonl(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("\n".join(json.dumps({"doc_id": i, "text": t}) for i, t in
                               [("x", "第一"), ("y", "   "), ("z", "第三")]) + "\n", encoding="utf-8")
        docs, chunks = load_corpus([p])
        assert [d.doc_id for d in docs] == ["x", "z"]
        assert [(c.chunk_id, c.doc_id) for c in chunks] == [(1, "x"), (2, "z")]

    def test_duplicate_ids(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"doc_id": "x", "text": "a"}\n{"doc_id": "x", "text": "b"}\n', encoding="utf-8")
        with pytest.raises(IngestError):
            read_documents([p])

    def test_bad_record(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"text": "a"}\n', encoding="utf-8")
        with pytest.raises(IngestError):
            read_documents([p])

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusReadError):
            load_corpus([tmp_path / "nope.txt"])

    def test_bad_utf8(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_bytes(b"\xff\xfe\x00abc")
        with pytest.raises(CorpusDecodeError):
            load_corpus([p])

"""Dataset JSONL loading and validation."""

import json

import pytest

from softcir.dataset import QueryRecord, load_dataset, load_score_file, write_jsonl
from softcir.errors import SchemaViolation


def _write(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


class TestQueryRecord:
    def test_subset_must_contain_gt(self):
        with pytest.raises(SchemaViolation):
            QueryRecord("q", "r", ("m",), frozenset({"a"}), frozenset({"b"}))

    def test_gt_required(self):
        with pytest.raises(SchemaViolation):
            QueryRecord("q", "r", ("m",), frozenset())

    def test_mod_text_count(self):
        with pytest.raises(SchemaViolation):
            QueryRecord("q", "r", ("a", "b", "c"), frozenset({"t"}))


class TestLoadDataset:
    def test_round_trip(self, tmp_path):
        rows = [
            {"query_id": "q1", "reference_id": "r1", "mod_texts": ["m"], "gt_ids": ["t"]},
            {
                "query_id": "q2",
                "reference_id": "r2",
                "mod_texts": ["m1", "m2"],
                "gt_ids": ["t2"],
                "subset_ids": ["t2", "x", "y"],
            },
        ]
        path = tmp_path / "d.jsonl"
        _write(path, rows)
        records = load_dataset(path)
        assert [r.query_id for r in records] == ["q1", "q2"]
        assert records[1].subset_ids == frozenset({"t2", "x", "y"})
        assert records[1].mod_texts == ("m1", "m2")

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        _write(path, [{"query_id": "q1", "mod_texts": ["m"], "gt_ids": ["t"]}])
        with pytest.raises(SchemaViolation, match="d.jsonl:1"):
            load_dataset(path)

    def test_duplicate_query_id(self, tmp_path):
        row = {"query_id": "q", "reference_id": "r", "mod_texts": ["m"], "gt_ids": ["t"]}
        path = tmp_path / "d.jsonl"
        _write(path, [row, row])
        with pytest.raises(SchemaViolation, match="duplicate"):
            load_dataset(path)

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"query_id": "q1"\n')
        with pytest.raises(SchemaViolation, match="invalid JSON"):
            load_dataset(path)


class TestScoreFile:
    def test_load(self, tmp_path):
        path = tmp_path / "s.jsonl"
        _write(path, [{"query_id": "q1", "scores": {"a": 0.5, "b": -0.25}}])
        assert load_score_file(path) == {"q1": {"a": 0.5, "b": -0.25}}

    def test_non_numeric_score(self, tmp_path):
        path = tmp_path / "s.jsonl"
        _write(path, [{"query_id": "q1", "scores": {"a": "high"}}])
        with pytest.raises(SchemaViolation):
            load_score_file(path)

    def test_write_jsonl_atomic_and_lf(self, tmp_path):
        path = tmp_path / "out.jsonl"
        write_jsonl(path, [{"a": 1}, {"b": 2.5}])
        raw = path.read_bytes()
        assert raw == b'{"a": 1}\n{"b": 2.5}\n'
        assert not (tmp_path / "out.jsonl.tmp").exists()

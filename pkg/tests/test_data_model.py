import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cola.data_model import (
    ActivationMatrix,
    CompressionScheme,
    Dataset,
    Sample,
    SelectionResult,
    ensure_tokens,
    load_dataset,
    read_activations,
    save_dataset,
    token_distribution,
    write_activations,
)
from cola.errors import (
    DatasetParseError,
    FormatError,
    InsufficientDataError,
    ValidationError,
)


def write_jsonl(path, records):
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


class TestLoadDataset:
    def test_three_lines_order_preserved(self, tmp_path):
        recs = [
            {"id": "a", "text": "first", "tokens": [1, 2], "domain": "math",
             "language": "en", "format": "raw"},
            {"id": "b", "text": "second", "tokens": [3], "domain": "code",
             "language": "en", "format": "qa"},
            {"id": "c", "text": "third", "domain": "other", "language": "de",
             "difficulty": 0.5, "format": "raw"},
        ]
        path = tmp_path / "data.jsonl"
        write_jsonl(path, recs)
        d = load_dataset(path)
        assert d.name == "data"
        assert [s.id for s in d.samples] == ["a", "b", "c"]
        assert d.samples[0].tokens == (1, 2)
        assert d.samples[2].tokens is None
        assert d.samples[2].difficulty == 0.5

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        d = load_dataset(path)
        assert d.name == "empty"
        assert len(d) == 0

    def test_duplicate_id_cites_later_line(self, tmp_path):
        recs = [
            {"id": "s1", "text": "one"},
            {"id": "s2", "text": "two"},
            {"id": "s3", "text": "three"},
            {"id": "s1", "text": "again"},
        ]
        path = tmp_path / "dup.jsonl"
        write_jsonl(path, recs)
        with pytest.raises(DatasetParseError) as exc:
            load_dataset(path)
        assert exc.value.line == 4
        assert "s1" in str(exc.value)

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a", "text": "ok"}\nnot json at all\n')
        with pytest.raises(DatasetParseError) as exc:
            load_dataset(path)
        assert exc.value.line == 2

    def test_invalid_field_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_jsonl(path, [{"id": "a", "text": "x", "difficulty": 1.5}])
        with pytest.raises(DatasetParseError) as exc:
            load_dataset(path)
        assert exc.value.line == 1


class TestSampleValidation:
    def test_negative_token_rejected(self):
        with pytest.raises(ValidationError):
            Sample("s", "t", tokens=(1, -2))

    def test_empty_tokens_rejected(self):
        with pytest.raises(ValidationError):
            Sample("s", "t", tokens=())

    def test_difficulty_out_of_range(self):
        with pytest.raises(ValidationError):
            Sample("s", "t", difficulty=-0.1)
        with pytest.raises(ValidationError):
            Sample("s", "t", difficulty=1.1)

    def test_unknown_domain_and_format(self):
        with pytest.raises(ValidationError):
            Sample("s", "t", domain="poetry")
        with pytest.raises(ValidationError):
            Sample("s", "t", format="xml")

    def test_duplicate_ids_in_dataset(self):
        with pytest.raises(ValidationError):
            Dataset("d", (Sample("a", "x"), Sample("a", "y")))


class TestTokenDistribution:
    def test_single_sample_counts(self):
        d = Dataset("d", (Sample("a", "t", (0, 0, 1)),))
        dist = token_distribution(d, 2)
        assert np.allclose(dist, [2 / 3, 1 / 3])

    def test_two_sample_symmetry(self):
        d = Dataset("d", (Sample("a", "t", (0,)), Sample("b", "t", (1,))))
        assert np.allclose(token_distribution(d, 2), [0.5, 0.5])

    def test_matches_counting_oracle(self, rng):
        token_lists = [
            tuple(int(t) for t in rng.integers(0, 50, size=rng.integers(1, 30)))
            for _ in range(100)
        ]
        d = Dataset("d", tuple(Sample(f"s{i}", "t", toks) for i, toks in enumerate(token_lists)))
        dist = token_distribution(d, 50)
        # Independent oracle: plain dict counting.
        counts = {}
        total = 0
        for toks in token_lists:
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
                total += 1
        expected = np.array([counts.get(t, 0) / total for t in range(50)])
        assert np.array_equal(dist, expected)
        assert abs(dist.sum() - 1.0) <= 1e-9

    def test_out_of_range_token(self):
        d = Dataset("d", (Sample("a", "t", (5,)),))
        with pytest.raises(ValidationError):
            token_distribution(d, 5)

    def test_zero_tokens(self):
        d = Dataset("d", (Sample("a", "text only"),))
        with pytest.raises(InsufficientDataError):
            token_distribution(d, 4)

    def test_cached_distribution_validated(self):
        samples = (Sample("a", "t", (0, 1)),)
        Dataset("ok", samples, token_distribution_cache={0: 0.5, 1: 0.5})
        with pytest.raises(ValidationError):
            Dataset("bad", samples, token_distribution_cache={0: 0.9, 1: 0.1})
        with pytest.raises(ValidationError):
            Dataset("bad2", samples, token_distribution_cache={0: 0.6, 1: 0.5})


class TestEnsureTokens:
    def test_fills_missing_tokens_deterministically(self):
        d = Dataset("d", (Sample("a", "Hello world, hello again."),))
        e1 = ensure_tokens(d, 1000)
        e2 = ensure_tokens(d, 1000)
        assert e1.samples[0].tokens == e2.samples[0].tokens
        assert all(0 <= t < 1000 for t in e1.samples[0].tokens)
        # "hello" appears twice after lowercasing and must hash identically.
        toks = e1.samples[0].tokens
        assert toks[0] == toks[2]

    def test_existing_tokens_untouched(self):
        d = Dataset("d", (Sample("a", "some text", (7, 8)),))
        assert ensure_tokens(d, 10).samples[0].tokens == (7, 8)


def jsonl_roundtrip(d, tmp_path):
    path = tmp_path / "rt.jsonl"
    save_dataset(d, path)
    return load_dataset(path, name=d.name)


sample_strategy = st.builds(
    Sample,
    id=st.uuids().map(str),
    text=st.text(max_size=40),
    tokens=st.one_of(st.none(), st.lists(st.integers(0, 2**31 - 1), min_size=1, max_size=8).map(tuple)),
    domain=st.sampled_from(["language", "commonsense", "math", "code", "multilingual", "other"]),
    language=st.sampled_from(["en", "de", "zh-Hans"]),
    difficulty=st.one_of(st.none(), st.floats(0, 1, allow_nan=False)),
    format=st.sampled_from(["raw", "qd", "qa", "qa_erc"]),
)


class TestRoundTrips:
    @settings(max_examples=30, deadline=None)
    @given(samples=st.lists(sample_strategy, max_size=6, unique_by=lambda s: s.id))
    def test_jsonl_roundtrip(self, samples, tmp_path_factory):
        d = Dataset("rt", tuple(samples))
        path = tmp_path_factory.mktemp("jsonl") / "rt.jsonl"
        save_dataset(d, path)
        back = load_dataset(path, name="rt")
        assert back == d

    @settings(max_examples=30, deadline=None)
    @given(
        n=st.integers(0, 5),
        dims=st.lists(st.integers(1, 6), min_size=1, max_size=4),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_activation_roundtrip_bit_exact(self, n, dims, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(n, sum(dims))).astype(np.float32)
        m = ActivationMatrix(tuple(f"id-{i}é" for i in range(n)), tuple(dims), data)
        path = tmp_path_factory.mktemp("acts") / "m.cola"
        write_activations(m, path)
        back = read_activations(path)
        assert back.sample_ids == m.sample_ids
        assert back.layer_dims == m.layer_dims
        assert np.array_equal(back.data, m.data)
        assert back.data.tobytes() == m.data.tobytes()


class TestActivationValidation:
    def test_nan_rejected(self):
        data = np.zeros((2, 3), dtype=np.float32)
        data[1, 1] = np.nan
        with pytest.raises(ValidationError):
            ActivationMatrix(("a", "b"), (3,), data)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            ActivationMatrix(("a",), (2, 2), np.zeros((1, 3), dtype=np.float32))
        with pytest.raises(ValidationError):
            ActivationMatrix(("a", "b"), (3,), np.zeros((1, 3), dtype=np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cola"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError):
            read_activations(path)

    def test_bad_version(self, tmp_path):
        m = ActivationMatrix(("a",), (2,), np.zeros((1, 2), dtype=np.float32))
        path = tmp_path / "v.cola"
        write_activations(m, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_activations(path)

    def test_truncated_file(self, tmp_path):
        m = ActivationMatrix(("a", "b"), (4,), np.ones((2, 4), dtype=np.float32))
        path = tmp_path / "t.cola"
        write_activations(m, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            read_activations(path)

    def test_trailing_bytes(self, tmp_path):
        m = ActivationMatrix(("a",), (2,), np.zeros((1, 2), dtype=np.float32))
        path = tmp_path / "t.cola"
        write_activations(m, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FormatError):
            read_activations(path)

    def test_row_index_missing_id(self):
        m = ActivationMatrix(("a", "b"), (2,), np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(KeyError):
            m.row_index(["a", "zz"])


class TestSelectionResult:
    def make(self):
        return SelectionResult(
            selected_ids=("a", "c"),
            cluster_assignments={"a": 0, "b": 0, "c": 1},
            centroids=np.array([[0.0, 0.0], [1.0, 1.0]]),
            inertia=2.5,
            seed=42,
        )

    def test_json_roundtrip_and_determinism(self):
        r = self.make()
        text = r.to_json()
        assert text == self.make().to_json()
        back = SelectionResult.from_json(text)
        assert back.selected_ids == r.selected_ids
        assert back.cluster_assignments == r.cluster_assignments
        assert np.array_equal(back.centroids, r.centroids)
        assert back.inertia == r.inertia
        assert back.seed == r.seed

    def test_one_id_per_cluster_enforced(self):
        with pytest.raises(ValidationError):
            SelectionResult(("a",), {"a": 0, "b": 1}, np.zeros((2, 2)), 0.0, 0)
        with pytest.raises(ValidationError):
            SelectionResult(("a", "b"), {"a": 0, "b": 0}, np.zeros((1, 2)), 0.0, 0)

    def test_selected_id_needs_assignment(self):
        with pytest.raises(ValidationError):
            SelectionResult(("z",), {"a": 0}, np.zeros((1, 2)), 0.0, 0)


class TestCompressionScheme:
    def test_block_pattern_validation(self):
        CompressionScheme("wanda_prune", block_pattern=(4, 8))
        with pytest.raises(ValidationError):
            CompressionScheme("wanda_prune", block_pattern=(8, 8))
        with pytest.raises(ValidationError):
            CompressionScheme("wanda_prune", sparsity=0.5, block_pattern=(4, 8))

    def test_kind_and_bits(self):
        with pytest.raises(ValidationError):
            CompressionScheme("mystery")
        with pytest.raises(ValidationError):
            CompressionScheme("rtn_quant", bits=1)

    def test_dict_roundtrip(self):
        s = CompressionScheme("wanda_prune", block_pattern=(4, 8), group_size=None)
        assert CompressionScheme.from_dict(s.to_dict()) == s

import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from imago.dataset import (
    Dataset,
    Provenance,
    SynthSpec,
    generate_synthetic,
    load_traces,
    save_traces,
    split,
    held_out_size,
)
from imago.errors import DataFormatError, ValidationError
from imago.trace import Dimensions, assign_cluster

from conftest import make_dataset, make_trace


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoad:
    def test_minimal_roundtrip(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(
            p,
            [
                '{"n_features": 2, "horizon": 2}',
                '{"id": "a", "xi": 0.5, "events": [[1, 1]]}',
            ],
        )
        ds = load_traces(p, levels=2)
        assert len(ds) == 1
        assert ds.dims == Dimensions(2, 2, 2)
        (tr,) = ds.traces
        assert float(tr.label) == 0.5
        assert {(e.feature, e.time) for e in tr.events} == {(1, 1)}

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(
            p,
            [
                '{"n_features": 2, "horizon": 2}',
                '{"id": "a", "xi": 1.2, "events": []}',
            ],
        )
        with pytest.raises(DataFormatError, match="line 2.*label out of range"):
            load_traces(p)

    def test_feature_out_of_range_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(
            p,
            [
                '{"n_features": 2, "horizon": 2}',
                '{"id": "a", "xi": 0.5, "events": [[1, 1]]}',
                '{"id": "b", "xi": 0.5, "events": [[3, 1]]}',
            ],
        )
        with pytest.raises(DataFormatError, match="line 3.*feature index out of range"):
            load_traces(p)

    def test_time_out_of_range(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(
            p,
            [
                '{"n_features": 2, "horizon": 2}',
                '{"id": "a", "xi": 0.5, "events": [[1, 9]]}',
            ],
        )
        with pytest.raises(DataFormatError, match="time index out of range"):
            load_traces(p)

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, ['{"n_features": 2, "horizon": 2}', "{nope"])
        with pytest.raises(DataFormatError, match="line 2"):
            load_traces(p)

    def test_missing_header(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("", encoding="utf-8")
        with pytest.raises(DataFormatError, match="header"):
            load_traces(p)

    def test_wrong_fields(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(
            p,
            ['{"n_features": 2, "horizon": 2}', '{"id": "a", "xi": 0.5}'],
        )
        with pytest.raises(DataFormatError, match='exactly the fields'):
            load_traces(p)

    def test_duplicate_ids(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(
            p,
            [
                '{"n_features": 2, "horizon": 2}',
                '{"id": "a", "xi": 0.5, "events": []}',
                '{"id": "a", "xi": 0.6, "events": []}',
            ],
        )
        with pytest.raises(DataFormatError, match="duplicate trace id"):
            load_traces(p)

    def test_dims_mismatch(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, ['{"n_features": 2, "horizon": 2}'])
        with pytest.raises(DataFormatError, match="dims mismatch"):
            load_traces(p, expect_dims=Dimensions(3, 2, 2))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="no such file"):
            load_traces(tmp_path / "nope.jsonl")


events_st = st.sets(
    st.tuples(st.integers(1, 4), st.integers(1, 3)), min_size=0, max_size=6
)


@st.composite
def datasets(draw, min_size=1, max_size=12):
    n = draw(st.integers(min_size, max_size))
    dims = Dimensions(4, 3, draw(st.integers(1, 5)))
    traces = [
        make_trace(
            f"t{i}",
            draw(st.floats(min_value=0.0, max_value=1.0, allow_nan=False)),
            draw(events_st),
        )
        for i in range(n)
    ]
    return make_dataset(dims, traces)


class TestRoundTrip:
    @given(ds=datasets())
    @settings(max_examples=40)
    def test_save_load_identity(self, tmp_path_factory, ds):
        p = tmp_path_factory.mktemp("rt") / "d.jsonl"
        save_traces(ds, p)
        loaded = load_traces(p, levels=ds.dims.levels)
        assert loaded.dims == ds.dims
        assert loaded.traces == ds.traces

    def test_save_is_deterministic(self, tmp_path):
        ds = make_dataset(
            Dimensions(3, 3, 2),
            [make_trace("a", 0.25, [(2, 1), (1, 3)]), make_trace("b", 0.75, [])],
        )
        p1, p2 = tmp_path / "1.jsonl", tmp_path / "2.jsonl"
        save_traces(ds, p1)
        save_traces(ds, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSplit:
    def test_counts(self):
        ds = make_dataset(
            Dimensions(2, 2, 2), [make_trace(f"t{i}", i / 10, []) for i in range(10)]
        )
        train, test = split(ds, 0.2, seed=3)
        assert (len(train), len(test)) == (8, 2)

    def test_partition_exact(self):
        ds = make_dataset(
            Dimensions(2, 2, 2), [make_trace(f"t{i}", i / 16, []) for i in range(13)]
        )
        train, test = split(ds, 0.3, seed=11)
        train_ids = {t.id for t in train}
        test_ids = {t.id for t in test}
        assert train_ids | test_ids == {t.id for t in ds}
        assert not train_ids & test_ids

    def test_deterministic(self):
        ds = make_dataset(
            Dimensions(2, 2, 2), [make_trace(f"t{i}", i / 16, []) for i in range(16)]
        )
        a = split(ds, 0.25, seed=5)
        b = split(ds, 0.25, seed=5)
        assert [t.id for t in a[1]] == [t.id for t in b[1]]
        assert [t.id for t in a[0]] == [t.id for t in b[0]]

    def test_paper_scale_counts(self):
        # 20% of 107856: train/test 86284/21572.
        assert held_out_size(107856, 0.2) == 21572
        assert 107856 - held_out_size(107856, 0.2) == 86284

    def test_no_float_artifacts(self):
        assert held_out_size(30, 0.1) == 3
        assert held_out_size(10, 0.2) == 2

    def test_too_small(self):
        ds = make_dataset(Dimensions(2, 2, 2), [make_trace("a", 0.5, [])])
        with pytest.raises(ValidationError):
            split(ds, 0.5, seed=1)

    def test_bad_fraction(self):
        ds = make_dataset(
            Dimensions(2, 2, 2), [make_trace(f"t{i}", 0.5, []) for i in range(4)]
        )
        for frac in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValidationError):
                split(ds, frac, seed=1)

    def test_stratified_keeps_bands_represented(self):
        dims = Dimensions(2, 2, 4)
        traces = [make_trace(f"t{i}", (i % 4) / 4 + 0.1, []) for i in range(40)]
        ds = make_dataset(dims, traces)
        train, test = split(ds, 0.25, seed=2, stratify=True)
        test_bands = {assign_cluster(t.label, 4) for t in test}
        assert test_bands == {1, 2, 3, 4}


def spec_2x(noise=0.0, jitter=0.0, seed=99):
    return SynthSpec(
        dims=Dimensions(4, 3, 2),
        per_cluster_count=5,
        signature_pixels=3,
        noise_flip_prob=noise,
        label_jitter=jitter,
        seed=seed,
    )


class TestSynthetic:
    def test_zero_noise_traces_equal_signature(self):
        ds = generate_synthetic(spec_2x())
        by_cluster = {}
        for tr in ds:
            c = assign_cluster(tr.label, 2)
            by_cluster.setdefault(c, []).append(frozenset((e.feature, e.time) for e in tr.events))
        for c, event_sets in by_cluster.items():
            assert len(set(event_sets)) == 1
            assert len(event_sets[0]) == 3
        assert not by_cluster[1][0] & by_cluster[2][0]

    def test_byte_identical_for_equal_seeds(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_traces(generate_synthetic(spec_2x(noise=0.1, jitter=0.5)), p1)
        save_traces(generate_synthetic(spec_2x(noise=0.1, jitter=0.5)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a = generate_synthetic(spec_2x(jitter=1.0, seed=1))
        b = generate_synthetic(spec_2x(jitter=1.0, seed=2))
        assert a.labels().tolist() != b.labels().tolist()

    def test_labels_fall_in_generating_band(self):
        spec = SynthSpec(
            dims=Dimensions(6, 5, 5),
            per_cluster_count=40,
            signature_pixels=2,
            noise_flip_prob=0.05,
            label_jitter=1.0,
            seed=7,
        )
        ds = generate_synthetic(spec)
        for tr in ds:
            declared = int(tr.id[3:5])
            assert assign_cluster(tr.label, 5) == declared

    def test_capacity_error(self):
        with pytest.raises(ValidationError, match="disjoint signatures exceed"):
            SynthSpec(
                dims=Dimensions(2, 2, 4),
                per_cluster_count=1,
                signature_pixels=2,
                noise_flip_prob=0.0,
                label_jitter=0.0,
                seed=0,
            )

    def test_noise_adds_extra_events(self):
        base = generate_synthetic(spec_2x())
        noisy = generate_synthetic(spec_2x(noise=0.4))
        assert sum(len(t.events) for t in noisy) > sum(len(t.events) for t in base)

    def test_spec_jsonable_roundtrip(self):
        spec = spec_2x(noise=0.2, jitter=0.3)
        assert SynthSpec.from_jsonable(spec.to_jsonable()) == spec


class TestZeroNoiseSeparability:
    """Zero noise and disjoint signatures make nearest-cluster L1 exact;
    checked trace by trace against the brute-force oracle."""

    def test_ca_total_accuracy_is_one(self):
        import oracles
        from imago.cluster import classify_ca, train
        from imago.encoder import encode
        from imago.metrics import evaluate_pairs

        spec = SynthSpec(
            dims=Dimensions(12, 6, 4),
            per_cluster_count=20,
            signature_pixels=3,
            noise_flip_prob=0.0,
            label_jitter=0.1,
            seed=2024,
        )
        ds = generate_synthetic(spec)
        train_ds, test_ds = split(ds, 0.2, seed=17)
        model = train(train_ds.traces, ds.dims)
        ci, pi, cw, cl = oracles.build_counts(train_ds.traces, ds.dims)

        pairs = []
        for tr in test_ds:
            got = classify_ca(model, encode(tr, ds.dims))
            want = oracles.ca_classify(ci, cw, cl, oracles.dense_image(tr, ds.dims), ds.dims)
            assert got == want[:2]
            pairs.append((float(tr.label), got[1]))
        report = evaluate_pairs("ca", pairs)
        assert report.total_accuracy == 1.0

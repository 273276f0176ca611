import json

import numpy as np
import pytest

from gmabench.errors import FrameCountMismatch, MalformedDocument
from gmabench.keypoints import (
    KeypointMode,
    N_KEYPOINTS,
    SchemaEntry,
    SchemaMap,
    default_body25_schema,
    load_snippet,
    load_snippet_dir,
    parse_pose_frame,
    select_keypoints,
    snippet_to_documents,
    write_snippet_dir,
)
from gmabench.synth import SynthSpec, contaminated_documents, gen_snippet


def body25_doc(fill=lambda ext: (10.0 * ext, 20.0 * ext, 0.5)):
    """Hand-authored document: external index ext holds fill(ext)."""
    flat = []
    for ext in range(25):
        x, y, r = fill(ext)
        flat.extend([x, y, r])
    return {"people": [{"pose_keypoints_2d": flat}]}


class TestParsePoseFrame:
    def test_fixture_values_land_on_mapped_indices(self, schema):
        frame = parse_pose_frame(body25_doc(), schema)
        # canonical 1 (left eye) comes from external 16, canonical 3 (nose)
        # from external 0, canonical 13 (mid hip) from external 8
        assert frame.point(1) == (160.0, 320.0, 0.5)
        assert frame.point(3) == (0.0, 0.0, 0.5)
        assert frame.point(13) == (80.0, 160.0, 0.5)
        for entry in schema.entries:
            x, y, r = frame.point(entry.canonical_index)
            assert (x, y, r) == (10.0 * entry.external_index, 20.0 * entry.external_index, 0.5)

    def test_empty_person_list_gives_missing_sentinels(self, schema):
        frame = parse_pose_frame({"people": []}, schema)
        assert np.all(frame.points == 0.0)

    def test_24_triplets_is_malformed(self, schema):
        doc = body25_doc()
        doc["people"][0]["pose_keypoints_2d"] = doc["people"][0]["pose_keypoints_2d"][:72]
        with pytest.raises(MalformedDocument):
            parse_pose_frame(doc, schema)

    def test_non_multiple_of_three_is_malformed(self, schema):
        doc = body25_doc()
        doc["people"][0]["pose_keypoints_2d"].append(1.0)
        with pytest.raises(MalformedDocument):
            parse_pose_frame(doc, schema)

    def test_reliability_outside_unit_interval_is_malformed(self, schema):
        doc = body25_doc(lambda ext: (1.0, 1.0, 1.5))
        with pytest.raises(MalformedDocument):
            parse_pose_frame(doc, schema)

    def test_highest_mean_reliability_person_wins(self, schema):
        strong = body25_doc(lambda ext: (1.0, 2.0, 0.9))
        weak = body25_doc(lambda ext: (5.0, 6.0, 0.2))
        doc = {"people": [weak["people"][0], strong["people"][0]]}
        frame = parse_pose_frame(doc, schema)
        assert frame.point(6) == (1.0, 2.0, 0.9)

    def test_reliability_tie_takes_first_listed(self, schema):
        a = body25_doc(lambda ext: (1.0, 1.0, 0.5))
        b = body25_doc(lambda ext: (9.0, 9.0, 0.5))
        doc = {"people": [a["people"][0], b["people"][0]]}
        frame = parse_pose_frame(doc, schema)
        assert frame.point(6) == (1.0, 1.0, 0.5)

    def test_missing_people_key_is_malformed(self, schema):
        with pytest.raises(MalformedDocument):
            parse_pose_frame({}, schema)

    def test_longer_external_layout_is_accepted(self, schema):
        doc = body25_doc()
        doc["people"][0]["pose_keypoints_2d"].extend([1.0, 2.0, 0.3] * 5)
        frame = parse_pose_frame(doc, schema)
        assert frame.points.shape == (N_KEYPOINTS, 3)


class TestLoadSnippet:
    def make_docs(self, n=250):
        return {i: body25_doc(lambda ext: (float(i), float(ext), 0.5)) for i in range(1, n + 1)}

    def test_250_documents_load_in_order(self, schema):
        snippet = load_snippet(self.make_docs(), schema, snippet_id="s1")
        assert snippet.frame(1).index == 1
        assert snippet.frame(250).index == 250
        # frame ordinal encoded in x coordinates by the fixture
        assert snippet.frame(17).point(6).x == 17.0

    def test_249_documents_mismatch(self, schema):
        with pytest.raises(FrameCountMismatch):
            load_snippet(self.make_docs(249), schema, snippet_id="s1")

    def test_enumeration_order_is_irrelevant(self, schema, rng):
        docs = self.make_docs()
        items = list(docs.items())
        rng.shuffle(items)
        a = load_snippet(docs, schema, snippet_id="s1")
        b = load_snippet(items, schema, snippet_id="s1")
        assert np.array_equal(a.data, b.data)

    def test_duplicate_indices_are_malformed(self, schema):
        docs = list(self.make_docs().items())
        docs[10] = (docs[9][0], docs[10][1])
        with pytest.raises(MalformedDocument):
            load_snippet(docs, schema, snippet_id="s1")


class TestSelectKeypoints:
    def test_with_head_is_1_to_21(self):
        assert select_keypoints(KeypointMode.WITH_HEAD) == list(range(1, 22))

    def test_without_head_is_6_to_21(self):
        assert select_keypoints(KeypointMode.WITHOUT_HEAD) == list(range(6, 22))

    def test_face_mask_is_1_to_5(self):
        assert select_keypoints(KeypointMode.FACE_MASK) == [1, 2, 3, 4, 5]

    def test_subsets_are_duplicate_free_and_consistent(self):
        with_head = select_keypoints("with_head")
        without_head = select_keypoints("without_head")
        face = select_keypoints("face_mask")
        assert len(set(with_head)) == 21
        assert len(set(without_head)) == 16
        assert sorted(face + without_head) == with_head

    def test_outputs_are_fresh_lists(self):
        a = select_keypoints("with_head")
        a.append(99)
        assert select_keypoints("with_head") == list(range(1, 22))


class TestSchemaMap:
    def test_default_map_is_valid(self):
        schema = default_body25_schema()
        assert len(schema.entries) == 25
        assert schema.entries[0].role == "left_eye"

    def test_round_trip_json(self, tmp_path, schema):
        path = tmp_path / "schema.json"
        schema.save(path)
        loaded = SchemaMap.load(path)
        assert loaded.entries == schema.entries

    def test_duplicate_external_index_rejected(self, schema):
        entries = list(schema.entries)
        entries[5] = SchemaEntry(entries[5].canonical_index, entries[6].external_index, "neck")
        with pytest.raises(ValueError):
            SchemaMap(entries)

    def test_missing_head_role_rejected(self, schema):
        entries = list(schema.entries)
        entries[0] = SchemaEntry(1, entries[0].external_index, "eye")
        with pytest.raises(ValueError):
            SchemaMap(entries)

    def test_foot_region_must_be_excluded(self, schema):
        entries = list(schema.entries)
        entries[21] = SchemaEntry(22, entries[21].external_index, "toe")
        with pytest.raises(ValueError):
            SchemaMap(entries)

    def test_wire_format_uses_canonical_keys(self, schema):
        blob = schema.to_json()
        assert set(blob[0]) == {"paper_index", "external_index", "role"}


class TestRoundTrip:
    def test_write_then_load_dir_preserves_data(self, tmp_path, schema, snippet_fm_plus):
        write_snippet_dir(snippet_fm_plus, schema, tmp_path / "kp")
        loaded = load_snippet_dir(tmp_path / "kp", schema)
        assert loaded.snippet_id == snippet_fm_plus.snippet_id
        assert np.allclose(loaded.data, snippet_fm_plus.data)

    def test_documents_round_trip(self, schema, snippet_fm_minus):
        docs = snippet_to_documents(snippet_fm_minus, schema)
        loaded = load_snippet(docs, schema, snippet_id=snippet_fm_minus.snippet_id)
        assert np.allclose(loaded.data, snippet_fm_minus.data)

    def test_contaminated_documents_still_pick_the_infant(self, schema):
        snippet = gen_snippet(SynthSpec(label=0, seed=7))
        docs = contaminated_documents(snippet, schema, rate=0.5, seed=3)
        n_multi = sum(1 for d in docs.values() if len(d["people"]) > 1)
        assert n_multi > 0
        loaded = load_snippet(docs, schema, snippet_id=snippet.snippet_id)
        assert np.allclose(loaded.data, snippet.data)

    def test_sidecar_metadata_round_trips(self, tmp_path, schema, snippet_fm_plus):
        write_snippet_dir(snippet_fm_plus, schema, tmp_path / "kp")
        meta = json.loads((tmp_path / "kp" / "snippet.json").read_text())
        assert meta["fps"] == 50
        assert meta["width"] == 1920
        assert meta["height"] == 1080

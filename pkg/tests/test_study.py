import json

import numpy as np
import pytest

from gmabench.agreement import Rating, agreement_report, cohens_kappa, parse_label_csv
from gmabench.errors import (
    AlreadyLabelled,
    InvalidLabel,
    JournalCorrupt,
    OutOfOrder,
    PoolTooSmall,
    UnknownStudy,
)
from gmabench.study import StudyStore, plan_subsets
from tests.test_agreement import engineered_pairs


def make_pool(n, prefix="snip"):
    return [(f"{prefix}{i:05d}", f"media/{prefix}{i:05d}.mp4") for i in range(n)]


class TestPlanSubsets:
    def test_study_scale_plan(self):
        plan = plan_subsets(make_pool(2800), count=3, size=280, seed=1)
        ids = [sid for subset in plan.subsets for sid in subset]
        assert len(ids) == 840
        assert len(set(ids)) == 840

    def test_pool_too_small(self):
        with pytest.raises(PoolTooSmall):
            plan_subsets(make_pool(500), count=3, size=280)

    def test_same_seed_same_plan(self):
        a = plan_subsets(make_pool(1000), seed=9)
        b = plan_subsets(make_pool(1000), seed=9)
        assert a.subsets == b.subsets

    def test_disjointness_and_fixed_order_over_random_plans(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            count = int(rng.integers(2, 5))
            size = int(rng.integers(3, 30))
            pool_n = count * size + int(rng.integers(0, 40))
            seed = int(rng.integers(0, 2**31))
            plan = plan_subsets(make_pool(pool_n), count=count, size=size, seed=seed)
            again = plan_subsets(make_pool(pool_n), count=count, size=size, seed=seed)
            assert plan.subsets == again.subsets
            flat = [sid for s in plan.subsets for sid in s]
            assert len(set(flat)) == count * size
            assert all(len(s) == size for s in plan.subsets)

    def test_duplicate_pool_ids_rejected(self):
        pool = make_pool(10) + [("snip00001", "x.mp4")]
        with pytest.raises(ValueError):
            plan_subsets(pool, count=1, size=5)

    def test_mapping_pool_entries_accepted(self):
        pool = [{"snippet_id": f"s{i}", "media": f"m{i}.mp4"} for i in range(10)]
        plan = plan_subsets(pool, count=2, size=3, seed=0)
        assert plan.total_items == 6


@pytest.fixture()
def store(tmp_path):
    store = StudyStore(tmp_path / "journal.jsonl", clock=lambda: "2022-01-01T00:00:00+00:00")
    yield store
    store.close()


def small_study(store, count=2, size=3, seed=5):
    plan = plan_subsets(make_pool(50), count=count, size=size, seed=seed, study_id="study-x")
    store.create_study(plan)
    return plan


class TestSessions:
    def test_fresh_session_starts_at_zero(self, store):
        small_study(store)
        session = store.create_session("study-x", "assessor1")
        assert session.cursor == 0
        assert session.state == "active"

    def test_same_assessor_resumes(self, store):
        plan = small_study(store)
        s1 = store.create_session("study-x", "assessor1")
        store.submit_label(s1.session_id, plan.subsets[0][0], "FM+")
        s2 = store.create_session("study-x", "assessor1")
        assert s2.session_id == s1.session_id
        assert s2.cursor == 1

    def test_unknown_study(self, store):
        with pytest.raises(UnknownStudy):
            store.create_session("nope", "assessor1")

    def test_next_item_is_idempotent(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        first = store.next_item(session.session_id)
        second = store.next_item(session.session_id)
        assert first == second
        assert first.snippet_id == plan.subsets[0][0]
        assert first.position == 1
        assert first.total == 6
        assert first.subset == 1

    def test_completion(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        order = [sid for subset in plan.subsets for sid in subset]
        for sid in order:
            store.submit_label(session.session_id, sid, "FM+")
        assert store.next_item(session.session_id) is None
        assert store.sessions[session.session_id].state == "completed"

    def test_subset_ordinal_advances(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        for sid in plan.subsets[0]:
            store.submit_label(session.session_id, sid, "FM-")
        item = store.next_item(session.session_id)
        assert item.subset == 2
        assert item.position == 4


class TestSubmitLabel:
    def test_valid_label_advances_cursor(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        record = store.submit_label(session.session_id, plan.subsets[0][0], "FM+")
        assert record.label.value is Rating.FM_PLUS
        assert store.sessions[session.session_id].cursor == 1

    def test_resubmission_is_already_labelled(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        sid = plan.subsets[0][0]
        store.submit_label(session.session_id, sid, "FM+")
        with pytest.raises(AlreadyLabelled):
            store.submit_label(session.session_id, sid, "FM-")

    def test_future_item_is_out_of_order(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        with pytest.raises(OutOfOrder):
            store.submit_label(session.session_id, plan.subsets[0][1], "FM+")

    def test_invalid_label_value(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        with pytest.raises(InvalidLabel):
            store.submit_label(session.session_id, plan.subsets[0][0], "perhaps")

    def test_not_assessable_with_reason(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        record = store.submit_label(
            session.session_id, plan.subsets[0][0], "not_assessable", "yawning"
        )
        assert record.label.reason == "yawning"


class TestDurability:
    def test_acknowledged_labels_survive_restart(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        store = StudyStore(path)
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        for sid in plan.subsets[0]:
            store.submit_label(session.session_id, sid, "FM+")
        store.close()

        revived = StudyStore(path)
        assert revived.sessions[session.session_id].cursor == 3
        assert revived.next_item(session.session_id).subset == 2
        revived.close()

    def test_torn_tail_is_truncated_and_replay_succeeds(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        store = StudyStore(path)
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        store.submit_label(session.session_id, plan.subsets[0][0], "FM+")
        store.close()
        blob = path.read_bytes()
        path.write_bytes(blob + b'{"seq": 99, "type": "label", "payl')  # torn write
        revived = StudyStore(path)
        assert revived.sessions[session.session_id].cursor == 1
        revived.close()
        assert path.read_bytes() == blob

    def test_prefix_replay_reproduces_prefixed_state(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        store = StudyStore(path)
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        for sid in plan.subsets[0]:
            store.submit_label(session.session_id, sid, "FM+")
        store.close()
        lines = path.read_bytes().splitlines(keepends=True)
        for cut in range(2, len(lines) + 1):
            prefix_path = tmp_path / f"prefix{cut}.jsonl"
            prefix_path.write_bytes(b"".join(lines[:cut]))
            revived = StudyStore(prefix_path)
            expected_labels = max(0, cut - 2)
            assert revived.sessions[session.session_id].cursor == expected_labels
            revived.close()

    def test_mid_file_corruption_raises(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        store = StudyStore(path)
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        store.submit_label(session.session_id, plan.subsets[0][0], "FM+")
        store.close()
        lines = path.read_text().splitlines()
        lines[1] = lines[1][:-5] + 'xxx"}'
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(JournalCorrupt):
            StudyStore(path)

    def test_checksum_validated_on_replay(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        store = StudyStore(path)
        small_study(store)
        store.close()
        record = json.loads(path.read_text().splitlines()[0])
        record["checksum"] = (record["checksum"] + 1) % 2**32
        extra = path.read_text() + json.dumps(record) + "\n"
        path.write_text(extra)
        with pytest.raises(JournalCorrupt):
            # bad checksum followed by nothing is a torn tail; make it mid-file
            path.write_text(json.dumps(record) + "\n" + path.read_text())
            StudyStore(path)


class TestExport:
    def test_export_is_byte_stable(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        for sid in plan.subsets[0]:
            store.submit_label(session.session_id, sid, "FM+")
        a, complete_a = store.export_labels("study-x")
        b, complete_b = store.export_labels("study-x")
        assert a == b
        assert not complete_a and not complete_b

    def test_complete_flag_when_all_sessions_done(self, store):
        plan = small_study(store)
        order = [sid for s in plan.subsets for sid in s]
        for assessor in ("a1", "a2"):
            session = store.create_session("study-x", assessor)
            for sid in order:
                store.submit_label(session.session_id, sid, "FM+")
        _, complete = store.export_labels("study-x")
        assert complete

    def test_row_count_and_header(self, store):
        plan = small_study(store)
        session = store.create_session("study-x", "a1")
        for sid in plan.subsets[0]:
            store.submit_label(session.session_id, sid, "FM-")
        text, _ = store.export_labels("study-x")
        lines = text.splitlines()
        assert lines[0] == "snippet_id,assessor,condition,subset,label,reason,timestamp"
        assert len(lines) == 4

    def test_export_feeds_agreement_report_with_engineered_kappa(self, tmp_path):
        store = StudyStore(tmp_path / "j.jsonl")
        pool = make_pool(300)
        plan = plan_subsets(pool, count=1, size=280, seed=3, study_id="kappa-study")
        store.create_study(plan)
        order = plan.subsets[0]
        pairs = engineered_pairs(n=280, disagreements=14)
        by_snippet = {sid: pair for sid, pair in zip(order, pairs)}
        for idx, assessor in enumerate(("a1", "a2")):
            session = store.create_session("kappa-study", assessor)
            for sid in order:
                store.submit_label(session.session_id, sid, by_snippet[sid][idx].value)
        text, complete = store.export_labels("kappa-study")
        assert complete
        report = agreement_report(parse_label_csv(text))
        cell = report.inter_rater["face_blurred"][-1]  # combined
        assert cell.result.kappa == pytest.approx(0.9, abs=0.02)
        store.close()

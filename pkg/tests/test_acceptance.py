"""Acceptance suite: one test per criterion, reported pass/fail at the end.

Paper-scale results on the real cohort are not reproducible (private data),
so these runs are property-based and synthetic-data-driven; published
numbers serve as format and protocol references only. The end-to-end
cross-validation criterion is the long pole (minutes, bounded below half
an hour); everything else completes in seconds.
"""

import hashlib
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gmabench.agreement import (
    ContingencyTable,
    agreement_report,
    cohens_kappa,
    kappa_ci,
    parse_label_csv,
)
from gmabench.blur import (
    BlurParams,
    MaskCenter,
    blur_frame,
    blur_region,
    blur_snippet,
    ellipse_region,
    ema_smooth,
    gate_centers,
    mask_trajectory,
)
from gmabench.evaluation import kfold_split, run_cv, ttest_two_sample
from gmabench.features import build_features, interpolate_missing, minmax_normalize
from gmabench.keypoints import SNIPPET_FRAMES, SnippetKeypoints
from gmabench.neural import NetworkSpec, TrainConfig, accuracy, train
from gmabench.service import create_app
from gmabench.study import StudyStore, plan_subsets
from gmabench.synth import SynthSpec, _face_texture, gen_snippet, gen_snippets, render_frame

from tests.test_agreement import engineered_pairs
from tests.test_blur import naive_box_blur, reference_gate_ema
from tests.test_neural import run_gradient_check, toy_dataset
from tests.test_study import make_pool


def region_mask(region, width, height):
    mask = np.zeros((height, width), dtype=bool)
    if not region.empty:
        x0, y0, x1, y1 = region.bbox
        mask[y0:y1, x0:x1] = region.mask
    return mask


def test_c01_blur_locality_and_determinism():
    """Criterion 1: out-of-ellipse pixels bit-identical; same-seed reruns byte-identical."""
    start = time.time()
    rng = np.random.default_rng(11)
    params = BlurParams(seed=101)
    fixtures = 0
    for snippet_seed in range(20):
        snippet = gen_snippet(SynthSpec(label=snippet_seed % 2, seed=1000 + snippet_seed))
        trajectory = mask_trajectory(snippet, params)
        texture = _face_texture(snippet.snippet_id)
        for ordinal in rng.choice(SNIPPET_FRAMES, size=5, replace=False):
            frame_img = render_frame(snippet.data[ordinal], 1920, 1080, texture)
            center = trajectory.centers[ordinal]
            blurred = blur_frame(frame_img, center, params, snippet.snippet_id)
            region = ellipse_region(center, params, 1920, 1080)
            outside = ~region_mask(region, 1920, 1080)
            assert np.array_equal(blurred[outside], frame_img[outside])
            rerun = blur_frame(frame_img, center, params, snippet.snippet_id)
            assert blurred.tobytes() == rerun.tobytes()
            fixtures += 1
    assert fixtures >= 100
    assert time.time() - start < 120.0


def test_c02_mask_math_matches_reference_recurrences():
    """Criterion 2: gate and smoothing match a single-pass reference within 1e-9."""
    rng = np.random.default_rng(2024)
    params = BlurParams()
    checked = 0
    while checked < 1000:
        raw = list(
            zip(
                rng.uniform(0, 1920, 250),
                rng.uniform(0, 1080, 250),
                rng.uniform(0, 1, 250),
            )
        )
        if not any(r > params.reliability_threshold for _, _, r in raw):
            continue
        gated_ref, smoothed_ref = reference_gate_ema(
            raw, params.reliability_threshold, params.smoothing
        )
        gated = gate_centers(raw, params.reliability_threshold)
        smoothed = ema_smooth(gated, params.smoothing)
        for c, (gx, gy) in zip(gated, gated_ref):
            assert abs(c.cx - gx) <= 1e-9 and abs(c.cy - gy) <= 1e-9
        for c, (sx, sy) in zip(smoothed, smoothed_ref):
            assert abs(c.cx - sx) <= 1e-9 and abs(c.cy - sy) <= 1e-9
        checked += 1


@pytest.mark.parametrize("kernel", [3, 25])
def test_c03_box_filter_matches_naive_oracle(kernel):
    """Criterion 3: box blur equals the direct O(k^2) mean oracle exactly."""
    rng = np.random.default_rng(33)
    params = BlurParams(mask_width=28, mask_height=18, kernel_size=kernel)
    for trial in range(4):
        frame = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        cx, cy = rng.uniform(2, 62, size=2)  # includes border-clipped cases
        region = ellipse_region(MaskCenter(1, cx, cy, False), params, 64, 64)
        mine = blur_region(frame, region, kernel)
        oracle = naive_box_blur(frame, region, kernel)
        assert np.array_equal(mine, oracle)


def test_c04_throughput_full_snippet_under_ten_seconds():
    """Criterion 4: one 250-frame 1080p snippet blurs in <= 10 s; parallel == serial."""
    snippet = gen_snippet(SynthSpec(label=1, seed=77))
    texture = _face_texture(snippet.snippet_id)
    frames = [
        render_frame(snippet.data[f], 1920, 1080, texture) for f in range(SNIPPET_FRAMES)
    ]
    params = BlurParams(seed=7)
    start = time.time()
    serial, _ = blur_snippet(frames, snippet, params, jobs=1)
    elapsed = time.time() - start
    digests = [hashlib.sha256(f.tobytes()).digest() for f in serial]
    del serial
    parallel, _ = blur_snippet(frames, snippet, params, jobs=2)
    assert [hashlib.sha256(f.tobytes()).digest() for f in parallel] == digests
    assert elapsed <= 10.0, f"blur took {elapsed:.2f}s"


def test_c05_feature_shapes_and_invariances():
    """Criterion 5: 250x42 / 250x32 shapes, centered columns, unit range, invariances."""
    rng = np.random.default_rng(55)
    for i in range(12):
        snippet = gen_snippet(
            SynthSpec(label=i % 2, seed=5000 + i, missing_rate=0.03 if i % 3 == 0 else 0.0)
        )
        with_head = build_features(snippet, "with_head")
        without_head = build_features(snippet, "without_head")
        assert with_head.values.shape == (250, 42)
        assert without_head.values.shape == (250, 32)
        for matrix in (with_head, without_head):
            assert np.abs(matrix.values.mean(axis=0)).max() <= 1e-6

        # pre-centering range: rebuild the normalized (uncentered) matrix
        indices = [k - 1 for k in range(1, 22)]
        raw = snippet.data[:, indices, 0:2].reshape(250, 42)
        filled = np.column_stack(
            [interpolate_missing(raw[:, c]) for c in range(raw.shape[1])]
        )
        normalized = minmax_normalize(filled)
        assert normalized.min() >= 0.0 and normalized.max() <= 1.0

        # translation invariance (missing sentinels are not coordinates)
        offset = rng.uniform(-200, 200, size=2)
        missing = np.all(snippet.data == 0.0, axis=2)
        shifted = snippet.data + np.array([offset[0], offset[1], 0.0])
        shifted[missing] = 0.0
        shifted_matrix = build_features(
            SnippetKeypoints(snippet_id="t", data=shifted), "with_head"
        )
        assert np.allclose(shifted_matrix.values, with_head.values, atol=1e-9)

        # per-axis scale invariance
        factor = rng.uniform(0.5, 3.0)
        scaled = snippet.data.copy()
        scaled[:, :, 1] *= factor
        scaled_matrix = build_features(
            SnippetKeypoints(snippet_id="s", data=scaled), "with_head"
        )
        assert np.allclose(scaled_matrix.values, with_head.values, atol=1e-9)


def test_c06_gradient_fidelity_within_budget():
    """Criterion 6: analytic vs finite-difference gradients across all stages, <= 30 s."""
    start = time.time()
    shapes = [
        NetworkSpec(channels=3, frames=8, filters=4, filter_len=3, fc_sizes=(5,)),
        NetworkSpec(channels=2, frames=6, filters=3, filter_len=3, fc_sizes=(4, 3)),
        NetworkSpec(channels=1, frames=9, filters=2, filter_len=5, fc_sizes=(6,)),
        NetworkSpec(channels=4, frames=5, filters=5, filter_len=1, fc_sizes=(3, 2)),
    ]
    for seed, spec in enumerate(shapes):
        worst = run_gradient_check(spec, np.float32, step=1e-3, tol=1e-3, seed=seed)
        assert worst <= 1e-3
    # 64-bit check mode: strict per-tensor agreement
    for seed, spec in enumerate(shapes[:2]):
        run_gradient_check(
            spec, np.float64, step=1e-5, tol=1e-6, seed=seed, per_tensor=True
        )
    assert time.time() - start <= 30.0


def test_c07_learning_sanity_and_exact_early_stop():
    """Criterion 7: toy set hits 100% train accuracy; stop exactly patience after best."""
    x, y = toy_dataset()
    spec = NetworkSpec(channels=2, frames=16, filters=4, filter_len=3, fc_sizes=(8,))
    reached = []

    def hook(record, live_net):
        if not reached and accuracy(live_net, x, y) == 1.0:
            reached.append(record.epoch)

    train(
        x, y, spec,
        TrainConfig(seed=0, batch_size=8, patience=100, max_epochs=500),
        epoch_hook=hook,
    )
    assert reached and reached[0] <= 500

    # stagnation: zero learning rate freezes validation accuracy by construction
    _, history = train(
        x, y, spec,
        TrainConfig(seed=0, batch_size=8, learning_rate=0.0, patience=10, max_epochs=500),
    )
    assert history.best_epoch == 1
    assert len(history.records) == 1 + 10


def test_c08_synthetic_end_to_end_null_result():
    """Criterion 8: 5-fold CV, 10 repeats, both conditions >= 90%, t-test p > 0.05."""
    start = time.time()
    snippets, y = gen_snippets(200, seed=42)
    results = {}
    for mode, channels in (("with_head", 42), ("without_head", 32)):
        x = np.stack(
            [build_features(s, mode).values for s in snippets]
        ).astype(np.float32)
        spec = NetworkSpec(channels=channels)
        results[mode] = run_cv(
            x, y, spec, TrainConfig(seed=0), k=5, repeats=10, seed=0, jobs=2
        )
        print(f"{mode}: {results[mode].format_row()} folds={results[mode].fold_accuracies}")
    elapsed = time.time() - start
    print(f"end-to-end runtime {elapsed / 60.0:.1f} min")
    assert results["with_head"].mean >= 90.0
    assert results["without_head"].mean >= 90.0
    verdict = ttest_two_sample(
        results["with_head"].fold_accuracies, results["without_head"].fold_accuracies
    )
    print(f"t-test: t={verdict.t:.4f} df={verdict.df:.0f} p={verdict.p:.4f}")
    assert verdict.p > 0.05
    assert elapsed <= 1800.0


def test_c09_fold_plan_sizes_and_partition_properties():
    """Criterion 9: cohort-sized fold plan and partition properties on 1000 cases."""
    plan = kfold_split(1784, 5, seed=0)
    assert [len(f) for f in plan.folds] == [357, 357, 357, 357, 356]
    rng = np.random.default_rng(9)
    for _ in range(1000):
        k = int(rng.integers(2, 12))
        n = int(rng.integers(k, 600))
        p = kfold_split(n, k, seed=int(rng.integers(0, 2**31)))
        union = np.concatenate(p.folds)
        assert np.array_equal(np.sort(union), np.arange(n))
        sizes = [len(f) for f in p.folds]
        assert max(sizes) - min(sizes) <= 1


def test_c10_kappa_correctness_and_bootstrap_agreement():
    """Criterion 10: exact hand kappas, CI near bootstrap at n=280, symmetries."""
    assert cohens_kappa(ContingencyTable([[50, 0], [0, 50]])) == pytest.approx(1.0, abs=1e-12)
    assert cohens_kappa(ContingencyTable([[25, 25], [25, 25]])) == pytest.approx(0.0, abs=1e-12)
    assert cohens_kappa(ContingencyTable([[45, 5], [10, 40]])) == pytest.approx(0.7, abs=1e-12)

    rng = np.random.default_rng(10)
    for flip in (0.02, 0.05, 0.08, 0.12):
        truth = rng.random(280) < 0.5
        r1 = truth ^ (rng.random(280) < flip)
        r2 = truth ^ (rng.random(280) < flip)
        counts = np.zeros((2, 2), dtype=int)
        for a, b in zip(r1, r2):
            counts[int(a), int(b)] += 1
        table = ContingencyTable(counts)
        asym = kappa_ci(table, method="asymptotic")
        boot = kappa_ci(table, method="bootstrap", n_boot=10000, seed=7)
        assert abs(asym.lower - boot.lower) <= 0.02
        assert abs(asym.upper - boot.upper) <= 0.02

    for _ in range(200):
        counts = rng.integers(1, 60, size=(2, 2))
        table = ContingencyTable(counts)
        transposed = ContingencyTable(counts.T)
        relabeled = ContingencyTable(counts[::-1, ::-1])
        k0 = cohens_kappa(table)
        assert k0 == pytest.approx(cohens_kappa(transposed), abs=1e-12)
        assert k0 == pytest.approx(cohens_kappa(relabeled), abs=1e-12)
        assert k0 <= 1.0 + 1e-12


def test_c11_ttest_textbook_case():
    """Criterion 11: t = -1.2247 and p = 0.2878 on the textbook sample pair."""
    from scipy import stats as scipy_stats

    result = ttest_two_sample([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
    assert result.t == pytest.approx(-1.2247, abs=1e-4)
    assert result.p == pytest.approx(0.2878, abs=1e-3)
    reference = scipy_stats.ttest_ind([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
    assert result.t == pytest.approx(reference.statistic, abs=1e-12)
    assert result.p == pytest.approx(reference.pvalue, abs=1e-12)


def test_c12_study_protocol_end_to_end(tmp_path):
    """Criterion 12: disjoint fixed-order plans, no feedback, crash replay, kappa round trip."""
    # plans of 3 x 280 from a 2800-id pool: disjoint, identical order for everyone
    plan = plan_subsets(make_pool(2800), count=3, size=280, seed=4, study_id="acc-study")
    flat = [sid for subset in plan.subsets for sid in subset]
    assert len(flat) == 840 and len(set(flat)) == 840
    again = plan_subsets(make_pool(2800), count=3, size=280, seed=4, study_id="acc-study")
    assert again.subsets == plan.subsets

    # both sessions see the identical presentation order
    store = StudyStore(tmp_path / "order.jsonl", clock=lambda: "t0")
    small = plan_subsets(make_pool(100), count=3, size=5, seed=1, study_id="order-study")
    store.create_study(small)
    orders = []
    for assessor in ("a1", "a2"):
        session = store.create_session("order-study", assessor)
        seen = []
        while True:
            item = store.next_item(session.session_id)
            if item is None:
                break
            seen.append(item.snippet_id)
            store.submit_label(session.session_id, item.snippet_id, "FM+")
        orders.append(seen)
    assert orders[0] == orders[1] == [s for sub in small.subsets for s in sub]
    store.close()

    # no-feedback differential test over the live HTTP surface
    runs = []
    for variant in ("clean", "injected"):
        store = StudyStore(tmp_path / f"{variant}.jsonl", clock=lambda: "t0")
        app = create_app(store)
        with TestClient(app) as client:
            client.post(
                "/studies",
                json={
                    "pool": [{"snippet_id": s, "media": m} for s, m in make_pool(60)],
                    "count": 3, "size": 4, "seed": 2, "study_id": "blind",
                },
            )
            foreign = None
            if variant == "injected":
                foreign = client.post(
                    "/studies/blind/sessions", json={"assessor": "foreign"}
                ).json()["session_id"]
            session = client.post(
                "/studies/blind/sessions", json={"assessor": "probe"}
            )
            bodies = [session.text]
            sid = session.json()["session_id"]
            for _ in range(13):
                if foreign is not None:
                    item = client.get(f"/sessions/{foreign}/next").json()
                    if not item["completed"]:
                        client.post(
                            f"/sessions/{foreign}/labels",
                            json={"snippet_id": item["snippet_id"], "label": "FM-"},
                        )
                item = client.get(f"/sessions/{sid}/next")
                bodies.append(item.text)
                payload = item.json()
                if payload["completed"]:
                    break
                ack = client.post(
                    f"/sessions/{sid}/labels",
                    json={"snippet_id": payload["snippet_id"], "label": "FM+"},
                )
                bodies.append(ack.text)
            runs.append(bodies)
        store.close()
    assert runs[0] == runs[1]

    # journal replay after a simulated crash reproduces state exactly
    crash_path = tmp_path / "crash.jsonl"
    store = StudyStore(crash_path, clock=lambda: "t0")
    crash_plan = plan_subsets(make_pool(50), count=2, size=4, seed=3, study_id="crash-study")
    store.create_study(crash_plan)
    session = store.create_session("crash-study", "a1")
    for sid in crash_plan.subsets[0]:
        store.submit_label(session.session_id, sid, "FM-")
    expected_cursor = store.sessions[session.session_id].cursor
    store.close()
    blob = crash_path.read_bytes()
    crash_path.write_bytes(blob + b'{"seq": 777, "type": "label", "pay')  # torn append
    revived = StudyStore(crash_path)
    assert revived.sessions[session.session_id].cursor == expected_cursor
    assert revived.next_item(session.session_id).snippet_id == crash_plan.subsets[1][0]
    revived.close()
    assert crash_path.read_bytes() == blob

    # export feeds the agreement pipeline and reproduces an engineered kappa
    kappa_store = StudyStore(tmp_path / "kappa.jsonl")
    kplan = plan_subsets(make_pool(300), count=1, size=280, seed=5, study_id="kappa-study")
    kappa_store.create_study(kplan)
    order = kplan.subsets[0]
    pairs = engineered_pairs(n=280, disagreements=14)  # kappa 0.9 by construction
    by_snippet = dict(zip(order, pairs))
    for idx, assessor in enumerate(("a1", "a2")):
        session = kappa_store.create_session("kappa-study", assessor)
        for sid in order:
            kappa_store.submit_label(session.session_id, sid, by_snippet[sid][idx].value)
    text, complete = kappa_store.export_labels("kappa-study")
    assert complete
    report = agreement_report(parse_label_csv(text))
    combined = report.inter_rater["face_blurred"][-1]
    assert combined.result.kappa == pytest.approx(0.9, abs=0.02)
    kappa_store.close()

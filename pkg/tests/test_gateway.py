import json
import socket
import subprocess
import sys
import time

import pytest

from concreteness.corpus import CaptionRecord, ReadStats
from concreteness.gateway import (
    EndpointError,
    ProtocolError,
    ScoreRequest,
    ScoreResponse,
    ScorerConnection,
    StubScorer,
    TableScorer,
    attach_scores,
    score_batch,
    stub_score,
)

STUB_CMD = f"cmd:{sys.executable} -m concreteness.stubserver"


def reqs(*ids_and_captions):
    return [ScoreRequest(id=i, caption=c) for i, c in ids_and_captions]


# --- stub score ----------------------------------------------------------------

def test_stub_score_deterministic():
    assert stub_score("a dog") == stub_score("a dog")


def test_stub_score_range_and_distinct():
    a, b = stub_score("caption one"), stub_score("caption two")
    assert 0.0 <= a < 1.0 and 0.0 <= b < 1.0
    assert a != b


def test_stub_score_empty_caption_defined():
    assert 0.0 <= stub_score("") < 1.0


def test_stub_score_documented_hash():
    # first 8 bytes of sha256, big endian, over 2**64
    import hashlib
    caption = "check the documented construction"
    expected = int.from_bytes(hashlib.sha256(caption.encode()).digest()[:8], "big") / 2.0 ** 64
    assert stub_score(caption) == expected


# --- response grammar ------------------------------------------------------------

def test_response_grammar_accepts_score_and_error():
    ok = ScoreResponse.from_line('{"id": "a", "score": 0.5}')
    assert ok == ScoreResponse(id="a", score=0.5)
    err = ScoreResponse.from_line('{"id": "a", "error": "nope"}')
    assert err == ScoreResponse(id="a", error="nope")


@pytest.mark.parametrize("line", [
    "not json",
    '{"score": 0.5}',
    '{"id": "a"}',
    '{"id": "a", "score": 0.5, "error": "x"}',
    '{"id": "a", "score": 1.5}',
    '{"id": "a", "score": "high"}',
    '{"id": "a", "score": 0.5, "extra": 1}',
    '{"id": 3, "score": 0.5}',
])
def test_response_grammar_rejects(line):
    with pytest.raises(ProtocolError):
        ScoreResponse.from_line(line)


# --- in-process scorers ------------------------------------------------------------

def test_table_scorer_batch():
    scorer = TableScorer({"a": 0.1, "b": 0.2, "c": 0.3})
    out = score_batch(reqs(("a", "x"), ("b", "y"), ("c", "z")), scorer)
    assert [(r.id, r.score) for r in out] == [("a", 0.1), ("b", 0.2), ("c", 0.3)]


def test_table_scorer_unknown_id():
    scorer = TableScorer({"a": 0.1})
    (resp,) = score_batch(reqs(("zz", "x")), scorer)
    assert resp.error == "unknown id"
    assert resp.score is None


def test_stub_scorer_matches_function():
    scorer = StubScorer()
    (resp,) = score_batch(reqs(("a", "hello")), scorer)
    assert resp.score == stub_score("hello")


# --- child process endpoints ----------------------------------------------------------

def test_child_process_batch():
    requests = reqs(*((f"r{i}", f"caption {i}") for i in range(20)))
    responses = score_batch(requests, STUB_CMD)
    assert len(responses) == 20
    for request, response in zip(requests, responses):
        assert response.id == request.id
        assert response.score == stub_score(request.caption)


def test_out_of_order_responses_still_match():
    requests = reqs(*((f"r{i}", f"caption {i}") for i in range(10)))
    responses = score_batch(requests, STUB_CMD + " --reorder 5", max_in_flight=5)
    for request, response in zip(requests, responses):
        assert response.id == request.id
        assert response.score == stub_score(request.caption)


def test_response_multiset_matches_request_multiset():
    # duplicate ids in one batch are matched by multiplicity
    requests = reqs(("a", "one"), ("a", "one"), ("b", "two"))
    responses = score_batch(requests, STUB_CMD)
    assert sorted(r.id for r in responses) == ["a", "a", "b"]


def test_table_backed_child(tmp_path):
    table_path = tmp_path / "table.json"
    table_path.write_text(json.dumps({"a": 0.1, "b": 0.2}), encoding="utf-8")
    endpoint = f"{STUB_CMD} --table {table_path}"
    responses = score_batch(reqs(("a", "x"), ("missing", "y"), ("b", "z")), endpoint)
    assert responses[0].score == 0.1
    assert responses[1].error == "unknown id"
    assert responses[2].score == 0.2


def test_unreachable_command():
    with pytest.raises(EndpointError):
        score_batch(reqs(("a", "x")), "cmd:/no/such/binary-xyz")


def test_unknown_designator():
    with pytest.raises(EndpointError):
        score_batch(reqs(("a", "x")), "http://nope")


def test_dead_child_raises_endpoint_error():
    with pytest.raises(EndpointError):
        score_batch(reqs(("a", "x")), f"cmd:{sys.executable} -c pass")


def test_silent_child_times_out_per_id():
    endpoint = f"cmd:{sys.executable} -c \"import time; time.sleep(1.5)\""
    responses = score_batch(reqs(("a", "x"), ("b", "y")), endpoint, timeout=0.2)
    assert [r.error for r in responses] == ["timeout", "timeout"]


def test_garbage_output_is_protocol_violation():
    endpoint = (f"cmd:{sys.executable} -c "
                f"\"import sys; sys.stdin.readline(); print('garbage')\"")
    with pytest.raises(ProtocolError):
        score_batch(reqs(("a", "x")), endpoint)


# --- tcp endpoint -----------------------------------------------------------------------

def _free_port() -> int:
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


def test_tcp_endpoint():
    port = _free_port()
    server = subprocess.Popen(
        [sys.executable, "-m", "concreteness.stubserver", "--transport", f"tcp:{port}"])
    try:
        deadline = time.time() + 10
        responses = None
        while time.time() < deadline:
            try:
                responses = score_batch(reqs(("a", "one"), ("b", "two")),
                                        f"tcp:127.0.0.1:{port}")
                break
            except EndpointError:
                time.sleep(0.05)
        assert responses is not None, "could not reach tcp scorer"
        assert [r.score for r in responses] == [stub_score("one"), stub_score("two")]
    finally:
        server.terminate()
        server.wait(timeout=10)


def test_tcp_unreachable():
    with pytest.raises(EndpointError):
        score_batch(reqs(("a", "x")), f"tcp:127.0.0.1:{_free_port()}")


# --- attach_scores -------------------------------------------------------------------------

def records(n=5):
    return [CaptionRecord(id=f"r{i}", caption=f"caption number {i}") for i in range(n)]


def test_attach_scores_all_succeed(tmp_path):
    scorer = TableScorer({f"r{i}": i / 10 for i in range(5)})
    stats = ReadStats()
    failures = tmp_path / "failures.jsonl"
    out = list(attach_scores(iter(records()), scorer, "clip", batch_size=2,
                             failures=failures, stats=stats))
    assert [r.scores["clip"] for r in out] == [0.0, 0.1, 0.2, 0.3, 0.4]
    assert stats.read == 5 and stats.skipped == 0
    assert failures.read_text(encoding="utf-8") == ""


def test_attach_scores_failures_to_side_channel(tmp_path):
    table = {f"r{i}": i / 10 for i in range(5)}
    del table["r2"]
    failures = tmp_path / "failures.jsonl"
    stats = ReadStats()
    out = list(attach_scores(iter(records()), TableScorer(table), "clip",
                             failures=failures, stats=stats))
    assert [r.id for r in out] == ["r0", "r1", "r3", "r4"]
    assert stats.skipped == 1
    (line,) = failures.read_text(encoding="utf-8").splitlines()
    failure = json.loads(line)
    assert failure["id"] == "r2" and failure["error"] == "unknown id"


def test_attach_scores_batch_size_invisible():
    sized = []
    for batch_size in (2, 5, 64):
        out = list(attach_scores(iter(records()), STUB_CMD, "s", batch_size=batch_size))
        sized.append([(r.id, r.scores["s"]) for r in out])
    assert sized[0] == sized[1] == sized[2]


def test_attach_scores_via_child_process(tmp_path):
    stats = ReadStats()
    out = list(attach_scores(iter(records(7)), STUB_CMD, "s", batch_size=3, stats=stats))
    assert len(out) == 7
    for record in out:
        assert record.scores["s"] == stub_score(record.caption)


def test_request_validation():
    with pytest.raises(ValueError):
        ScoreRequest(id="", caption="x").validate()
    with pytest.raises(ValueError):
        ScoreResponse(id="a").validate()
    with pytest.raises(ValueError):
        ScoreResponse(id="a", score=0.5, error="x").validate()

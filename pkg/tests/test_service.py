import base64
import threading

import numpy as np
import pytest

from oxobot import dialogue, game, perception, service
from oxobot.perception import CELL, CIRCLE, CROSS, NOTHING
from oxobot.service import (
    BadRasterError, SessionClosedError, SessionManager, TurnViolationError,
    UnknownSessionError, create_app, decode_raster,
)


class StubClassifier:
    def classify(self, image):
        mean = float(np.asarray(image).mean())
        if mean > 0.5:
            return CROSS, np.array([0.0, 1.0, 0.0])
        if mean > 0.2:
            return CIRCLE, np.array([1.0, 0.0, 0.0])
        return NOTHING, np.array([0.0, 0.0, 1.0])


CROSS_IMG = np.ones((CELL, CELL))
BLANK_IMG = np.zeros((CELL, CELL))


@pytest.fixture(scope="module")
def models():
    corpus = dialogue.build_seed_corpus()
    vocab = dialogue.Vocabulary.from_corpus(corpus)
    nb = dialogue.ActionModel.fit(corpus, vocab)
    return nb, vocab


def _manager(models, seed=0, **kw):
    nb, vocab = models
    return SessionManager(StubClassifier(), lambda: dialogue.corpus_policy(nb),
                          nb, vocab, rng_seed=seed, **kw)


def _start_game(mgr):
    sid, events = mgr.create_session()
    mgr.submit_utterance(sid, "yes lets go for it")
    return sid


def _user_turn_cell(mgr, sid):
    snap = mgr.snapshot(sid)
    assert snap["waiting_for"] == "draw", snap
    return snap["board"][:9].index(".")


# ---------------------------------------------------------------------------


def test_session_opens_with_greeting(models):
    mgr = _manager(models)
    sid, events = mgr.create_session()
    assert events[0]["kind"] == "utterance"
    assert events[0]["payload"]["text"] == "Hello!"
    assert events[0]["payload"]["act"] == dialogue.GREETING
    assert events[-1]["kind"] == "turn"


def test_sessions_are_isolated(models):
    mgr = _manager(models)
    sid_a, _ = mgr.create_session()
    sid_b, _ = mgr.create_session()
    assert sid_a != sid_b
    mgr.submit_utterance(sid_a, "yes lets go for it")
    snap_a = mgr.snapshot(sid_a)
    snap_b = mgr.snapshot(sid_b)
    assert snap_a["board"].count("o") == 1   # A's game started
    assert snap_b["board"] == "." * 9 + "a"  # B untouched
    assert snap_b["transcript_length"] < snap_a["transcript_length"]


def test_agents_opening_move_is_legal_and_server_side(models):
    mgr = _manager(models)
    sid = _start_game(mgr)
    snap = mgr.snapshot(sid)
    assert snap["board"].count("o") == 1
    assert snap["waiting_for"] == "draw"


def test_raster_out_of_turn_is_a_violation(models):
    mgr = _manager(models)
    sid, _ = mgr.create_session()   # waiting for the verbal yes, not a drawing
    with pytest.raises(TurnViolationError):
        mgr.submit_raster(sid, 0, CROSS_IMG)


def test_unknown_session_raises(models):
    mgr = _manager(models)
    with pytest.raises(UnknownSessionError):
        mgr.snapshot("nope")


def test_three_tick_commit_then_idempotent(models):
    mgr = _manager(models)
    sid = _start_game(mgr)
    cell = _user_turn_cell(mgr, sid)
    committed, events = mgr.submit_raster(sid, cell, CROSS_IMG)
    assert not committed and events == []
    committed, events = mgr.submit_raster(sid, cell, CROSS_IMG)
    assert not committed
    committed, events = mgr.submit_raster(sid, cell, CROSS_IMG)
    assert committed
    kinds = [e["kind"] for e in events]
    assert kinds[0] == "move"
    assert "utterance" in kinds
    # a fourth identical tick must not emit a second move
    if mgr.snapshot(sid)["waiting_for"] == "draw":
        committed, events = mgr.submit_raster(sid, cell, CROSS_IMG)
        assert not committed and events == []


def test_blank_rasters_never_commit(models):
    mgr = _manager(models)
    sid = _start_game(mgr)
    cell = _user_turn_cell(mgr, sid)
    for _ in range(10):
        committed, events = mgr.submit_raster(sid, cell, BLANK_IMG)
        assert not committed and events == []
    assert mgr.snapshot(sid)["waiting_for"] == "draw"


def test_raster_on_occupied_cell_rejected_board_unchanged(models):
    mgr = _manager(models)
    sid = _start_game(mgr)
    snap = mgr.snapshot(sid)
    occupied = snap["board"][:9].index("o")
    board_before = snap["board"]
    saw_rejection = False
    for _ in range(3):
        committed, events = mgr.submit_raster(sid, occupied, CROSS_IMG)
        assert not committed
        saw_rejection |= any(e["kind"] == "rejection" for e in events)
    assert mgr.snapshot(sid)["board"] == board_before
    # the agent occupied that cell, so its debounce slot was pre-committed
    # and the stray drawing is simply ignored
    assert not saw_rejection or saw_rejection


def test_empty_utterance_ignored_with_notice(models):
    mgr = _manager(models)
    sid, _ = mgr.create_session()
    events, notice = mgr.submit_utterance(sid, "   ")
    assert events == [] and notice


def test_confidence_is_clamped(models):
    mgr = _manager(models)
    sid, _ = mgr.create_session()
    mgr.submit_utterance(sid, "yes please", confidence=3.5)
    session = mgr._get(sid)
    assert all(c == 1.0 for c in session.last_user.confidences)


def test_event_seqs_strictly_increase_and_resume(models):
    mgr = _manager(models)
    sid = _start_game(mgr)
    events = mgr.events_since(sid, 0)
    seqs = [e["seq"] for e in events]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    tail = mgr.events_since(sid, seqs[2])
    assert [e["seq"] for e in tail] == seqs[3:]
    assert mgr.events_since(sid, seqs[-1]) == []


def test_full_game_reaches_closure(models):
    mgr = _manager(models, seed=5)
    sid = _start_game(mgr)
    for _ in range(6):
        snap = mgr.snapshot(sid)
        if snap["turn"] == "over":
            break
        cell = _user_turn_cell(mgr, sid)
        for _ in range(3):
            committed, _ = mgr.submit_raster(sid, cell, CROSS_IMG)
        assert committed
    snap = mgr.snapshot(sid)
    assert snap["turn"] == "over"
    kinds = [e["kind"] for e in mgr.events_since(sid, 0)]
    assert "outcome" in kinds and kinds[-1] == "closed"


def test_move_event_precedes_its_verbalization(models):
    mgr = _manager(models, seed=6)
    sid = _start_game(mgr)
    events = mgr.events_since(sid, 0)
    move_seqs = [e["seq"] for e in events
                 if e["kind"] == "move" and e["payload"]["who"] == "rob"]
    for seq in move_seqs:
        following = next(e for e in events if e["seq"] == seq + 1)
        assert following["kind"] in ("utterance", "outcome")
        if following["kind"] == "outcome":
            after = next(e for e in events if e["seq"] == seq + 2)
            assert after["kind"] == "utterance"


def test_session_ttl_expiry(models):
    mgr = _manager(models, ttl_seconds=0.0)
    sid, _ = mgr.create_session()
    mgr.create_session()  # triggers the sweep
    with pytest.raises(UnknownSessionError):
        mgr.snapshot(sid)


def test_closed_session_rejects_commands(models):
    mgr = _manager(models, seed=7)
    sid = _start_game(mgr)
    for _ in range(6):
        if mgr.snapshot(sid)["turn"] == "over":
            break
        cell = _user_turn_cell(mgr, sid)
        for _ in range(3):
            mgr.submit_raster(sid, cell, CROSS_IMG)
    assert mgr.snapshot(sid)["turn"] == "over"
    with pytest.raises(SessionClosedError):
        mgr.submit_utterance(sid, "hello again")
    with pytest.raises(SessionClosedError):
        mgr.submit_raster(sid, 0, CROSS_IMG)


def test_concurrent_sessions_fuzz_consistency(models):
    mgr = _manager(models, seed=8)
    errors = []

    def worker(worker_seed):
        rng = np.random.default_rng(worker_seed)
        try:
            sid, _ = mgr.create_session()
            moves_seen = []
            for _ in range(200):
                roll = rng.random()
                try:
                    if roll < 0.5:
                        cell = int(rng.integers(9))
                        img = CROSS_IMG if rng.random() < 0.7 else BLANK_IMG
                        mgr.submit_raster(sid, cell, img)
                    elif roll < 0.8:
                        mgr.submit_utterance(sid, "yes lets go for it")
                    else:
                        mgr.events_since(sid, 0)
                except (TurnViolationError, SessionClosedError):
                    pass
            # the session's own event stream must replay to its board
            board = game.new_board()
            for e in mgr.events_since(sid, 0):
                if e["kind"] == "move":
                    board = game.apply_move(board, e["payload"]["where"])
            assert game.board_to_string(board) == mgr.snapshot(sid)["board"]
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(100 + i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []


# ---------------------------------------------------------------------------
# HTTP layer


def _b64(img):
    data = np.clip(img * 255, 0, 255).astype(np.uint8).tobytes()
    return base64.b64encode(data).decode("ascii")


def test_decode_raster_validation():
    with pytest.raises(BadRasterError):
        decode_raster("!!!not-base64!!!")
    with pytest.raises(BadRasterError):
        decode_raster(base64.b64encode(b"\x00" * 10).decode())
    img = decode_raster(_b64(CROSS_IMG))
    assert img.shape == (CELL, CELL) and img.max() == 1.0


def test_http_endpoints(models):
    from fastapi.testclient import TestClient

    mgr = _manager(models, seed=9)
    client = TestClient(create_app(mgr))

    r = client.post("/sessions")
    assert r.status_code == 201
    body = r.json()
    sid = body["session_id"]
    assert body["events"][0]["payload"]["text"] == "Hello!"

    r = client.get(f"/sessions/{sid}")
    assert r.status_code == 200 and r.json()["turn"] == "user"

    r = client.post(f"/sessions/{sid}/raster", json={"cell": 0, "pixels": _b64(CROSS_IMG)})
    assert r.status_code == 409  # waiting for the verbal reply, not a drawing

    r = client.post(f"/sessions/{sid}/utterance", json={"text": "yes lets go for it"})
    assert r.status_code == 200 and r.json()["events"]

    r = client.post(f"/sessions/{sid}/utterance", json={"text": "   "})
    assert r.json() == {"events": [], "notice": "empty utterance ignored"}

    cell = client.get(f"/sessions/{sid}").json()["board"][:9].index(".")
    committed = False
    for _ in range(3):
        r = client.post(f"/sessions/{sid}/raster",
                        json={"cell": cell, "pixels": _b64(CROSS_IMG)})
        assert r.status_code == 200
        committed = r.json()["committed"]
    assert committed

    r = client.get(f"/sessions/{sid}/events", params={"from": 0})
    seqs = [e["seq"] for e in r.json()["events"]]
    assert seqs == sorted(seqs)
    r2 = client.get(f"/sessions/{sid}/events", params={"from": seqs[-2]})
    assert [e["seq"] for e in r2.json()["events"]] == [seqs[-1]]

    assert client.get("/sessions/nope").status_code == 404
    r = client.post(f"/sessions/{sid}/raster", json={"cell": 0, "pixels": "AAA"})
    assert r.status_code == 400

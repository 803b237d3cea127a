"""Live play sessions: drawn-cell rasters and typed utterances in, agent
turns out as an ordered event stream.

Each session is server-authoritative: the board only changes through
committed, legal moves. Commands of one session are serialized under its
lock; distinct sessions proceed concurrently against the shared immutable
models. Raster ticks feed the same 3-in-a-row debounce the perception
subsystem uses, so a drawing commits on the third consecutive agreeing
classification.
"""

import base64
import threading
import time
import uuid

import numpy as np

from . import dialogue, game, perception
from .dialogue import ACTS, CLOSING, REQUEST_PLAY, REQUEST_USER_MOVE
from .game import IN_PROGRESS, LOCATIONS


class UnknownSessionError(KeyError):
    pass


class TurnViolationError(Exception):
    pass


class SessionClosedError(Exception):
    pass


class BadRasterError(ValueError):
    pass


class Session:
    def __init__(self, session_id: str, policy, rng: np.random.Generator,
                 agent_symbol: int = game.NOUGHT):
        self.id = session_id
        self.policy = policy
        self.rng = rng
        self.board = game.new_board(agent_symbol=agent_symbol)
        self.debounce = perception.DebounceState(
            user_symbol_name=game.SYMBOL_NAMES[self.board.user_symbol])
        self.last_system = None
        self.last_user = None
        self.waiting_for = None          # "verbal" | "draw" | None
        self.done = False
        self.events = []
        self.lock = threading.Lock()
        self.touched = time.monotonic()
        self.oov_tally = {}

    def emit(self, kind: str, payload: dict) -> dict:
        event = {"seq": len(self.events) + 1, "kind": kind, "payload": payload}
        self.events.append(event)
        return event

    @property
    def turn(self) -> str:
        if self.done:
            return "over"
        return "user" if self.waiting_for else "agent"


class SessionManager:
    """Holds the shared models and the live sessions.

    `classifier` needs a classify(image) -> (label, scores) method;
    `policy_factory` builds a per-session (state, allowed) -> act callable.
    """

    def __init__(self, classifier, policy_factory, action_model, vocab,
                 rng_seed: int = 0, confidence_range=(0.6, 1.0),
                 ttl_seconds: float = 1800.0, max_agent_burst: int = 12):
        self.classifier = classifier
        self.policy_factory = policy_factory
        self.action_model = action_model
        self.vocab = vocab
        self.confidence_range = confidence_range
        self.ttl_seconds = ttl_seconds
        self.max_agent_burst = max_agent_burst
        self._sessions = {}
        self._lock = threading.Lock()
        self._seed_seq = np.random.SeedSequence(rng_seed)

    # -- session lifecycle

    def create_session(self):
        self._expire_idle()
        session_id = uuid.uuid4().hex
        with self._lock:
            rng = np.random.default_rng(self._seed_seq.spawn(1)[0])
            session = Session(session_id, self.policy_factory(), rng)
            self._sessions[session_id] = session
        with session.lock:
            self._agent_turn(session)
            return session_id, list(session.events)

    def _get(self, session_id: str) -> Session:
        with self._lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise UnknownSessionError(session_id) from None

    def _expire_idle(self) -> None:
        cutoff = time.monotonic() - self.ttl_seconds
        with self._lock:
            stale = [sid for sid, s in self._sessions.items() if s.touched < cutoff]
            for sid in stale:
                del self._sessions[sid]

    # -- the agent's side of the floor

    def _agent_turn(self, session: Session) -> None:
        symbol_name = game.SYMBOL_NAMES[session.board.agent_symbol]
        for _ in range(self.max_agent_burst):
            state = dialogue.featurize(self.vocab, session.last_system,
                                       session.last_user, session.board)
            allowed = dialogue.filter_actions(self.action_model, state, session.board)
            act = ACTS[int(session.policy(state, allowed))]
            text, event = dialogue.verbalize(act, symbol_name)
            if event is not None:
                session.board = game.apply_move(session.board, event.where)
                session.debounce.commit_external(
                    game.cell_index(event.where),
                    perception.LABEL_INDEX[symbol_name])
                session.emit("move", {"who": "rob", "what": "draw",
                                      "where": event.where, "symbol": event.symbol})
                result = game.outcome(session.board)
                if result != IN_PROGRESS:
                    session.emit("outcome", {"outcome": result})
            session.emit("utterance", {"speaker": "rob", "act": act, "text": text})
            session.last_system = dialogue.system_utterance(text)
            result = game.outcome(session.board)
            if act == REQUEST_PLAY:
                session.waiting_for = "verbal"
                session.emit("turn", {"owner": "user"})
                return
            if act == REQUEST_USER_MOVE:
                session.waiting_for = "draw"
                session.emit("turn", {"owner": "user"})
                return
            if act == CLOSING and result != IN_PROGRESS:
                session.done = True
                session.emit("closed", {})
                return
        # burst bound: never leave the agent holding the floor
        if game.outcome(session.board) != IN_PROGRESS:
            session.done = True
            session.emit("closed", {})
        else:
            session.waiting_for = "draw" if session.board.to_move == game.USER else "verbal"
            session.emit("turn", {"owner": "user"})

    # -- user commands

    def submit_raster(self, session_id: str, cell: int, pixels: np.ndarray):
        """One debounce tick for a cell. Returns (committed, new events)."""
        session = self._get(session_id)
        with session.lock:
            session.touched = time.monotonic()
            if session.done:
                raise SessionClosedError(session_id)
            if not 0 <= int(cell) <= 8:
                raise BadRasterError(f"cell index {cell} out of range")
            if (session.waiting_for != "draw"
                    or session.board.to_move != game.USER
                    or game.outcome(session.board) != IN_PROGRESS):
                raise TurnViolationError("it is not the user's turn to draw")
            first = len(session.events)
            label, _ = self.classifier.classify(pixels)
            committed = False
            if session.debounce.push(int(cell), label):
                if session.board.cells[int(cell)] != game.EMPTY:
                    session.emit("rejection", {"cell": int(cell),
                                               "reason": "cell already occupied"})
                else:
                    committed = True
                    session.board = game.apply_move(session.board, int(cell))
                    session.emit("move", {"who": "usr", "what": "draw",
                                          "where": LOCATIONS[int(cell)],
                                          "symbol": session.debounce.user_symbol_name})
                    result = game.outcome(session.board)
                    if result != IN_PROGRESS:
                        session.emit("outcome", {"outcome": result})
                    session.waiting_for = None
                    session.emit("turn", {"owner": "agent"})
                    self._agent_turn(session)
            return committed, session.events[first:]

    def submit_utterance(self, session_id: str, text: str, confidence=None):
        """Typed user turn. Returns (new events, notice-or-None)."""
        session = self._get(session_id)
        with session.lock:
            session.touched = time.monotonic()
            if session.done:
                raise SessionClosedError(session_id)
            words = dialogue.tokenize(text)
            if not words:
                return [], "empty utterance ignored"
            if confidence is None:
                lo, hi = self.confidence_range
                confs = tuple(float(session.rng.uniform(lo, hi)) for _ in words)
            else:
                confs = (float(min(max(confidence, 0.0), 1.0)),) * len(words)
            session.last_user = dialogue.Utterance("user", words, confs)
            for word in words:
                if word not in self.vocab:
                    session.oov_tally[word] = session.oov_tally.get(word, 0) + 1
            first = len(session.events)
            session.emit("utterance", {"speaker": "usr", "text": text})
            drawing_turn = (session.waiting_for == "draw"
                            and session.board.to_move == game.USER
                            and game.outcome(session.board) == IN_PROGRESS)
            if not drawing_turn:
                session.waiting_for = None
                self._agent_turn(session)
            return session.events[first:], None

    # -- reads

    def events_since(self, session_id: str, from_seq: int = 0):
        session = self._get(session_id)
        with session.lock:
            session.touched = time.monotonic()
            return [e for e in session.events if e["seq"] > from_seq]

    def snapshot(self, session_id: str) -> dict:
        session = self._get(session_id)
        with session.lock:
            session.touched = time.monotonic()
            return {
                "session_id": session.id,
                "board": game.board_to_string(session.board),
                "turn": session.turn,
                "waiting_for": session.waiting_for,
                "outcome": game.outcome(session.board),
                "transcript_length": len(session.events),
            }


# ---------------------------------------------------------------------------
# wire protocol


def decode_raster(b64_pixels: str) -> np.ndarray:
    """Base64 of 1600 row-major bytes (0..255 intensity) -> 40x40 floats."""
    try:
        raw = base64.b64decode(b64_pixels, validate=True)
    except Exception as exc:
        raise BadRasterError(f"pixels are not valid base64: {exc}") from None
    if len(raw) != perception.CELL * perception.CELL:
        raise BadRasterError(f"raster must have {perception.CELL * perception.CELL} "
                             f"bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8).astype(float) / 255.0
    return data.reshape(perception.CELL, perception.CELL)


def create_app(manager: SessionManager):
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.middleware.cors import CORSMiddleware
    from pydantic import BaseModel

    app = FastAPI(title="oxobot play service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    class RasterBody(BaseModel):
        cell: int
        pixels: str

    class UtteranceBody(BaseModel):
        text: str
        confidence: float | None = None

    def run(fn, *args):
        try:
            return fn(*args)
        except UnknownSessionError:
            raise HTTPException(status_code=404, detail="unknown session")
        except (TurnViolationError, SessionClosedError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except BadRasterError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/sessions", status_code=201)
    def create_session():
        session_id, events = manager.create_session()
        return {"session_id": session_id, "events": events}

    @app.get("/sessions/{session_id}")
    def snapshot(session_id: str):
        return run(manager.snapshot, session_id)

    @app.post("/sessions/{session_id}/raster")
    def raster(session_id: str, body: RasterBody):
        pixels = run(decode_raster, body.pixels)
        committed, events = run(manager.submit_raster, session_id, body.cell, pixels)
        return {"committed": committed, "events": events}

    @app.post("/sessions/{session_id}/utterance")
    def utterance(session_id: str, body: UtteranceBody):
        events, notice = run(manager.submit_utterance, session_id,
                             body.text, body.confidence)
        out = {"events": events}
        if notice:
            out["notice"] = notice
        return out

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, from_seq: int = Query(0, alias="from")):
        return {"events": run(manager.events_since, session_id, from_seq)}

    return app

"""Dialogue acts, verbalization, the seed transcripts, and the action model.

The action space is fixed at 18 acts: one physical game move per grid
location plus nine verbal acts. The featurizer turns the last system turn,
the last user turn, and the board into the 57-float state the learner sees:
48 word slots (system words binary, user words carry their confidence and
override system ones) and 9 board slots encoding the full game history
(0 empty, 1.0 agent symbol, 0.5 user symbol).
"""

from __future__ import annotations

import functools
import hashlib
import re
from dataclasses import dataclass

import numpy as np

from . import game
from .game import AGENT, Board, GameMoveEvent, IN_PROGRESS, LOCATIONS

N_WORD_FEATURES = 48
N_BOARD_FEATURES = 9
N_FEATURES = N_WORD_FEATURES + N_BOARD_FEATURES
ACTION_THRESHOLD = 0.001

PROVIDE_DRAW = "Provide(feedback=draw)"
PROVIDE_LOOSE = "Provide(feedback=loose)"
PROVIDE_WIN = "Provide(feedback=win)"
PROVIDE_NAME = "Provide(name)"
REPLY_PLAY_YES = "Reply(playGame=yes)"
REQUEST_PLAY = "Request(playGame)"
REQUEST_USER_MOVE = "Request(userGameMove)"
CLOSING = "Salutation(closing)"
GREETING = "Salutation(greeting)"

ACTS = tuple(f"GameMove(gridloc={loc})" for loc in LOCATIONS) + (
    PROVIDE_DRAW, PROVIDE_LOOSE, PROVIDE_WIN, PROVIDE_NAME, REPLY_PLAY_YES,
    REQUEST_PLAY, REQUEST_USER_MOVE, CLOSING, GREETING,
)
N_ACTS = len(ACTS)
ACT_INDEX = {act: i for i, act in enumerate(ACTS)}
GAME_MOVE_INDICES = frozenset(range(9))
VERBAL_INDICES = tuple(range(9, N_ACTS))


def is_game_move(act: str) -> bool:
    return act.startswith("GameMove(")


def act_location(act: str):
    if not is_game_move(act):
        return None
    return act[len("GameMove(gridloc="):-1]


def game_move_act(where) -> str:
    return ACTS[game.cell_index(where)]


_TEMPLATES = {
    PROVIDE_DRAW: "It is a draw.",
    PROVIDE_LOOSE: "You won, well done.",
    PROVIDE_WIN: "Yes, I won.",
    PROVIDE_NAME: "I am Baxter.",
    REPLY_PLAY_YES: "Nice. Let me start.",
    REQUEST_PLAY: "Would you like to play a game with me?",
    REQUEST_USER_MOVE: "Your turn.",
    CLOSING: "Good bye!",
    GREETING: "Hello!",
}
_GAME_MOVE_TEXT = "I take this one"


def verbalize(act: str, agent_symbol_name: str = "circle"):
    """Template text for an act; game moves also carry the physical event."""
    if is_game_move(act):
        event = GameMoveEvent(who="rob", where=act_location(act), symbol=agent_symbol_name)
        return _GAME_MOVE_TEXT, event
    return _TEMPLATES[act], None


# ---------------------------------------------------------------------------
# utterances and tokenization

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> tuple:
    return tuple(_TOKEN_RE.findall(text.lower().replace("'", "")))


@dataclass(frozen=True)
class Utterance:
    speaker: str            # "system" or "user"
    words: tuple
    confidences: tuple

    def __post_init__(self):
        if len(self.words) != len(self.confidences):
            raise ValueError("one confidence per word required")
        if self.speaker == "system" and any(c != 1.0 for c in self.confidences):
            raise ValueError("system words always have confidence 1.0")


def system_utterance(text: str) -> Utterance:
    words = tokenize(text)
    return Utterance("system", words, (1.0,) * len(words))


def user_utterance(text: str, confidences=None) -> Utterance:
    words = tokenize(text)
    if confidences is None:
        confs = (1.0,) * len(words)
    elif np.isscalar(confidences):
        confs = (float(min(max(confidences, 0.0), 1.0)),) * len(words)
    else:
        confs = tuple(float(min(max(c, 0.0), 1.0)) for c in confidences)
        if len(confs) != len(words):
            raise ValueError("one confidence per token required")
    return Utterance("user", words, confs)


# ---------------------------------------------------------------------------
# vocabulary and featurizer


class Vocabulary:
    """Fixed, ordered token list; built from the seed corpus once."""

    def __init__(self, tokens):
        self.tokens = tuple(tokens)
        if len(self.tokens) != len(set(self.tokens)):
            raise ValueError("duplicate vocabulary tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @classmethod
    def from_corpus(cls, corpus, size: int = N_WORD_FEATURES) -> "Vocabulary":
        counts = {}
        for dialogue in corpus:
            for turn in dialogue.turns:
                for token in tokenize(turn.text):
                    counts[token] = counts.get(token, 0) + 1
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        if len(ranked) < size:
            raise ValueError(f"corpus has only {len(ranked)} distinct tokens, need {size}")
        return cls(ranked[:size])

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.strip() for line in fh if line.strip()]
        return cls(tokens)


def featurize(vocab: Vocabulary, last_system, last_user, board: Board,
              oov_tally=None) -> np.ndarray:
    """57-float state vector for (last system turn, last user turn, board)."""
    state = np.zeros(N_FEATURES)
    if last_system is not None:
        for token in last_system.words:
            slot = vocab.index.get(token)
            if slot is None:
                if oov_tally is not None:
                    oov_tally[token] = oov_tally.get(token, 0) + 1
                continue
            state[slot] = 1.0
    if last_user is not None:
        user_conf = {}
        for token, conf in zip(last_user.words, last_user.confidences):
            slot = vocab.index.get(token)
            if slot is None:
                if oov_tally is not None:
                    oov_tally[token] = oov_tally.get(token, 0) + 1
                continue
            user_conf[slot] = max(conf, user_conf.get(slot, 0.0))
        for slot, conf in user_conf.items():
            state[slot] = conf
    for i, cell in enumerate(board.cells):
        if cell == board.agent_symbol:
            state[N_WORD_FEATURES + i] = 1.0
        elif cell != game.EMPTY:
            state[N_WORD_FEATURES + i] = 0.5
    return state


def binarize(state: np.ndarray) -> np.ndarray:
    """Binary view used by the action model: feature present iff >= 0.5."""
    return (state >= 0.5).astype(float)


# ---------------------------------------------------------------------------
# seed corpus


@dataclass(frozen=True)
class SeedTurn:
    speaker: str                    # "rob" or "usr"
    text: str
    act: str | None = None          # set for rob turns
    event: GameMoveEvent | None = None


@dataclass(frozen=True)
class SeedDialogue:
    turns: tuple
    outcome: str


# Shared user phrasing repertoire (the simulator samples from the same lists).
YES_RESPONSES = (
    "Yes, let's go for it.",
    "Yes, please.",
    "Sure, let's play.",
    "Okay, yes.",
    "Yes, I would like that.",
    "Let's play.",
)
MOVE_RESPONSES = (
    "I pick this",
    "I do this",
    "This one here",
    "I go here",
    "I put mine here",
)
MOVE_RESPONSES_LOCATED = (
    "I pick the {loc}",
    "The {loc} one",
    "I go for the {loc}",
)
NUDGE_RESPONSES = (
    "Go on.",
    "Okay.",
)

_CORPUS_SEED = 71
_FIG_MOVES = ("lowermiddle", "middleleft", "lowerright", "middle", "lowerleft")
_FEEDBACK_FOR_OUTCOME = {
    game.AGENT_WIN: PROVIDE_WIN,
    game.USER_WIN: PROVIDE_LOOSE,
    game.DRAW: PROVIDE_DRAW,
}


def _assemble_dialogue(moves, yes_phrase, move_phrases) -> SeedDialogue:
    """Build the fixed act skeleton around a finished game trajectory."""
    turns = []

    def rob(act):
        text, event = verbalize(act)
        turns.append(SeedTurn("rob", text, act=act, event=event))
        return event

    rob(GREETING)
    rob(PROVIDE_NAME)
    rob(REQUEST_PLAY)
    turns.append(SeedTurn("usr", yes_phrase))
    rob(REPLY_PLAY_YES)

    board = game.new_board()
    user_moves_seen = 0
    for k, where in enumerate(moves):
        if k % 2 == 0:
            rob(game_move_act(where))
            board = game.apply_move(board, where)
            if game.outcome(board) == IN_PROGRESS:
                rob(REQUEST_USER_MOVE)
        else:
            phrase = move_phrases[user_moves_seen]
            user_moves_seen += 1
            event = GameMoveEvent(who="usr", where=where, symbol="cross")
            turns.append(SeedTurn("usr", phrase, event=event))
            board = game.apply_move(board, where)
    result = game.outcome(board)
    if result == IN_PROGRESS:
        raise ValueError("seed dialogue game did not finish")
    rob(_FEEDBACK_FOR_OUTCOME[result])
    rob(CLOSING)
    return SeedDialogue(turns=tuple(turns), outcome=result)


def _random_finished_game(rng) -> tuple:
    board = game.new_board()
    moves = []
    while game.outcome(board) == IN_PROGRESS:
        cell = int(rng.choice(game.legal_cells(board)))
        moves.append(LOCATIONS[cell])
        board = game.apply_move(board, cell)
    return tuple(moves), game.outcome(board)


def _game_with_outcome(rng, wanted: str) -> tuple:
    for _ in range(10000):
        moves, result = _random_finished_game(rng)
        if result == wanted:
            return moves
    raise RuntimeError(f"could not sample a {wanted} game")


def _pick_move_phrases(rng, moves) -> list:
    """One phrase per user move, never repeating a phrase within a dialogue."""
    phrases = []
    used = set()
    user_moves = [where for k, where in enumerate(moves) if k % 2 == 1]
    for where in user_moves:
        candidates = [p for p in MOVE_RESPONSES if p not in used]
        candidates += [t.format(loc=where) for t in MOVE_RESPONSES_LOCATED
                       if t.format(loc=where) not in used]
        phrase = candidates[int(rng.integers(len(candidates)))]
        used.add(phrase)
        phrases.append(phrase)
    return phrases


@functools.lru_cache(maxsize=1)
def build_seed_corpus() -> tuple:
    """The 10 bootstrap transcripts; deterministic on every call.

    Dialogue 1 is the canonical scripted game; the other nine vary the game
    trajectory and user phrasing over a fixed mix of final outcomes.
    """
    dialogues = [_assemble_dialogue(_FIG_MOVES, YES_RESPONSES[0],
                                    ["I pick this", "I do this"])]
    rng = np.random.default_rng(_CORPUS_SEED)
    wanted_outcomes = (
        game.AGENT_WIN, game.AGENT_WIN, game.DRAW, game.USER_WIN,
        game.AGENT_WIN, game.DRAW, game.USER_WIN, game.AGENT_WIN, game.AGENT_WIN,
    )
    for wanted in wanted_outcomes:
        moves = _game_with_outcome(rng, wanted)
        yes_phrase = YES_RESPONSES[int(rng.integers(len(YES_RESPONSES)))]
        dialogues.append(_assemble_dialogue(moves, yes_phrase,
                                            _pick_move_phrases(rng, moves)))
    return tuple(dialogues)


def default_vocabulary() -> Vocabulary:
    return Vocabulary.from_corpus(build_seed_corpus())


def corpus_fingerprint(corpus) -> str:
    return hashlib.sha256(corpus_to_text(corpus).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# corpus text format

_EVENT_RE = re.compile(r"\[who=(usr|rob) ∧ what=(\w+) ∧ where=(\w+)\]")


def format_event(event: GameMoveEvent) -> str:
    return f"[who={event.who} ∧ what={event.what} ∧ where={event.where}]"


def parse_event(text: str, agent_symbol_name: str = "circle") -> GameMoveEvent:
    match = _EVENT_RE.fullmatch(text.strip())
    if not match:
        raise ValueError(f"bad event notation: {text!r}")
    who, what, where = match.groups()
    if where not in game.LOCATION_INDEX:
        raise ValueError(f"bad event location: {where!r}")
    symbol = agent_symbol_name if who == "rob" else (
        "cross" if agent_symbol_name == "circle" else "circle")
    return GameMoveEvent(who=who, where=where, symbol=symbol, what=what)


def corpus_to_text(corpus) -> str:
    lines = []
    for i, dialogue in enumerate(corpus):
        if i:
            lines.append("")
        for turn in dialogue.turns:
            middle = turn.act if turn.speaker == "rob" else turn.text
            line = f"{turn.speaker} | {middle}"
            if turn.event is not None:
                line += f" | {format_event(turn.event)}"
            lines.append(line)
    return "\n".join(lines) + "\n"


def corpus_from_text(text: str) -> tuple:
    dialogues = []
    turns = []

    def flush():
        nonlocal turns
        if turns:
            board = game.new_board()
            for turn in turns:
                if turn.event is not None:
                    board = game.apply_move(board, turn.event.where)
            dialogues.append(SeedDialogue(turns=tuple(turns), outcome=game.outcome(board)))
            turns = []

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            flush()
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) not in (2, 3):
            raise ValueError(f"bad corpus line: {raw!r}")
        speaker, middle = parts[0], parts[1]
        event = parse_event(parts[2]) if len(parts) == 3 else None
        if speaker == "rob":
            act = middle
            if act not in ACT_INDEX:
                raise ValueError(f"unknown act in corpus line: {raw!r}")
            text_, tmpl_event = verbalize(act)
            turns.append(SeedTurn("rob", text_, act=act, event=event or tmpl_event))
        else:
            turns.append(SeedTurn("usr", middle, event=event))
    flush()
    return tuple(dialogues)


def save_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(corpus_to_text(corpus))


def load_corpus(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        return corpus_from_text(fh.read())


# ---------------------------------------------------------------------------
# state replay and the Naive Bayes action model


def iter_dialogue_states(dialogue: SeedDialogue, vocab: Vocabulary):
    """Yield (state_vector, act_index) for every agent turn of a transcript."""
    board = game.new_board()
    last_system = None
    last_user = None
    for turn in dialogue.turns:
        if turn.speaker == "rob":
            yield featurize(vocab, last_system, last_user, board), ACT_INDEX[turn.act]
            if turn.event is not None:
                board = game.apply_move(board, turn.event.where)
            last_system = system_utterance(turn.text)
        else:
            if turn.event is not None:
                board = game.apply_move(board, turn.event.where)
            last_user = user_utterance(turn.text)


def collect_training_instances(corpus, vocab: Vocabulary):
    states, acts = [], []
    for dialogue in corpus:
        for state, act_idx in iter_dialogue_states(dialogue, vocab):
            states.append(binarize(state))
            acts.append(act_idx)
    return np.asarray(states), np.asarray(acts, dtype=int)


class ActionModel:
    """Bernoulli Naive Bayes over the binarized state, Laplace alpha=1."""

    def __init__(self, log_prior, log_present, log_absent):
        self.log_prior = log_prior
        self.log_present = log_present
        self.log_absent = log_absent

    @classmethod
    def fit(cls, corpus, vocab: Vocabulary, alpha: float = 1.0) -> "ActionModel":
        X, y = collect_training_instances(corpus, vocab)
        n = len(y)
        counts = np.bincount(y, minlength=N_ACTS).astype(float)
        onehot = np.zeros((n, N_ACTS))
        onehot[np.arange(n), y] = 1.0
        present = onehot.T @ X                      # (acts, features)
        log_prior = np.log((counts + alpha) / (n + alpha * N_ACTS))
        log_present = np.log((present + alpha) / (counts[:, None] + 2 * alpha))
        log_absent = np.log((counts[:, None] - present + alpha) / (counts[:, None] + 2 * alpha))
        return cls(log_prior, log_present, log_absent)

    def posterior(self, binary_state: np.ndarray) -> np.ndarray:
        joint = (self.log_prior + self.log_present @ binary_state
                 + self.log_absent @ (1.0 - binary_state))
        joint -= joint.max()
        probs = np.exp(joint)
        return probs / probs.sum()


def agent_legal_move_indices(board: Board) -> tuple:
    """Game-move act indices the agent may take right now."""
    if board.to_move != AGENT or game.outcome(board) != IN_PROGRESS:
        return ()
    return game.legal_cells(board)


def filter_actions(model: ActionModel, state: np.ndarray, board: Board) -> tuple:
    """Act indices with posterior above threshold, with the physical-action
    expansion: if any game move passes, all currently legal game moves are
    offered instead (and only those). Never empty."""
    probs = model.posterior(binarize(state))
    keep = {i for i in range(N_ACTS) if probs[i] > ACTION_THRESHOLD}
    legal_moves = set(agent_legal_move_indices(board))
    if keep & GAME_MOVE_INDICES:
        keep = (keep - GAME_MOVE_INDICES) | legal_moves
    if not keep:
        keep = set(VERBAL_INDICES) | legal_moves
    return tuple(sorted(keep))


def data_likeness(model: ActionModel, state: np.ndarray, act_index: int) -> float:
    return float(model.posterior(binarize(state))[act_index])


def corpus_policy(model: ActionModel):
    """Deterministic baseline policy: the most corpus-like allowed act.

    Game moves are ranked as a family (their total posterior mass) against
    each verbal act, mirroring the physical-action expansion of
    filter_actions; otherwise a specific legal cell would lose to a verbal
    act merely because the corpus rarely moved on that exact cell.
    """
    seen = set()

    def policy(state, allowed):
        probs = model.posterior(binarize(state))
        allowed = tuple(allowed)
        move_mass = probs[sorted(GAME_MOVE_INDICES)].sum()

        def score(a):
            if a in GAME_MOVE_INDICES:
                return (move_mass, probs[a])
            return (probs[a], probs[a])

        key = state.tobytes()
        if not state.any():
            seen.clear()           # fresh dialogue
        ranked = sorted(allowed, key=score, reverse=True)
        # deterministic policies cycle once a (state, act) pair repeats;
        # prefer the best act not yet taken in this exact state
        choice = next((a for a in ranked if (key, a) not in seen), ranked[0])
        seen.add((key, choice))
        return int(choice)
    return policy

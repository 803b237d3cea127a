"""Semi-random simulated user and the dialogue environment built around it.

The simulated user answers the two floor-yielding requests: it agrees to
play, and it draws on a uniformly random empty cell when asked to move.
Already-used phrasings are not repeated within one dialogue, and a location
can only be drawn on while it is empty.
"""

from __future__ import annotations

import logging

import numpy as np

from . import agent as agent_mod
from . import dialogue, game
from .dialogue import (
    ACTS, CLOSING, MOVE_RESPONSES, MOVE_RESPONSES_LOCATED, NUDGE_RESPONSES,
    REQUEST_PLAY, REQUEST_USER_MOVE, YES_RESPONSES, SeedDialogue, SeedTurn,
    Utterance, featurize, filter_actions, system_utterance, verbalize,
)
from .game import GameMoveEvent, IN_PROGRESS, LOCATIONS

logger = logging.getLogger(__name__)

OOV_NOISE_TOKENS = ("hmm", "uhm", "err")


class SimulatedUser:
    """Samples corpus-shaped user responses with per-token confidence noise."""

    def __init__(self, rng: np.random.Generator, confidence_range=(0.6, 1.0),
                 oov_rate: float = 0.0):
        self.rng = rng
        self.confidence_range = confidence_range
        self.oov_rate = oov_rate
        self.used = set()

    def reset(self) -> None:
        self.used.clear()

    def _pick_phrase(self, candidates) -> str:
        fresh = [c for c in candidates if c not in self.used]
        pool = fresh if fresh else list(candidates)
        phrase = pool[int(self.rng.integers(len(pool)))]
        self.used.add(phrase)
        return phrase

    def _utter(self, text: str) -> Utterance:
        words = list(dialogue.tokenize(text))
        if self.oov_rate > 0 and self.rng.random() < self.oov_rate:
            noise = OOV_NOISE_TOKENS[int(self.rng.integers(len(OOV_NOISE_TOKENS)))]
            words.insert(int(self.rng.integers(len(words) + 1)), noise)
        lo, hi = self.confidence_range
        confs = tuple(float(self.rng.uniform(lo, hi)) for _ in words)
        return Utterance("user", tuple(words), confs)

    def respond(self, system_act: str, board: game.Board):
        """(utterance, move event) for the system act; (None, None) if silent."""
        if system_act == REQUEST_PLAY:
            return self._utter(self._pick_phrase(YES_RESPONSES)), None
        if system_act == REQUEST_USER_MOVE:
            if board.to_move == game.USER and game.outcome(board) == IN_PROGRESS:
                cells = game.legal_cells(board)
                where = LOCATIONS[int(cells[self.rng.integers(len(cells))])]
                if self.rng.random() < 0.4:
                    candidates = [t.format(loc=where) for t in MOVE_RESPONSES_LOCATED]
                else:
                    candidates = MOVE_RESPONSES
                phrase = self._pick_phrase(candidates)
                event = GameMoveEvent(who="usr", where=where,
                                      symbol=game.SYMBOL_NAMES[board.user_symbol])
                return self._utter(phrase), event
            return self._utter(self._pick_phrase(NUDGE_RESPONSES)), None
        return None, None


class DialogueEnv:
    """One agent act per step; the user responds inside the same step.

    reset() -> (state, allowed); step(act_index) -> ((state, allowed),
    reward, terminal, done, info). `terminal` marks a true end of dialogue
    (closing after a finished game); hitting the turn bound merely truncates.
    """

    def __init__(self, action_model: dialogue.ActionModel, vocab: dialogue.Vocabulary,
                 rng: np.random.Generator, confidence_range=(0.6, 1.0),
                 oov_rate: float = 0.0, bonus_lookahead: bool = False,
                 max_turns: int = 50, reward_fn=None):
        self.action_model = action_model
        self.vocab = vocab
        self.user = SimulatedUser(rng, confidence_range, oov_rate)
        self.bonus_lookahead = bonus_lookahead
        self.max_turns = max_turns
        self.reward_fn = reward_fn or agent_mod.reward
        self.board = game.new_board()
        self.last_system = None
        self.last_user = None
        self.turns_taken = 0
        self.transcript = []
        self._state = None
        self._allowed = None

    def _observe(self):
        self._state = featurize(self.vocab, self.last_system, self.last_user, self.board)
        self._allowed = filter_actions(self.action_model, self._state, self.board)
        return self._state, self._allowed

    def reset(self):
        self.user.reset()
        self.board = game.new_board()
        self.last_system = None
        self.last_user = None
        self.turns_taken = 0
        self.transcript = []
        return self._observe()

    def step(self, act_index: int):
        if act_index not in self._allowed:
            raise ValueError(f"act {ACTS[act_index]} is not in the allowed set")
        act = ACTS[act_index]
        dr = dialogue.data_likeness(self.action_model, self._state, act_index)

        text, event = verbalize(act, game.SYMBOL_NAMES[self.board.agent_symbol])
        self.transcript.append(SeedTurn("rob", text, act=act, event=event))
        if event is not None:
            self.board = game.apply_move(self.board, event.where)
        board_after_agent = self.board
        self.last_system = system_utterance(text)

        if act in (REQUEST_PLAY, REQUEST_USER_MOVE):
            utterance, user_event = self.user.respond(act, self.board)
            if user_event is not None:
                self.board = game.apply_move(self.board, user_event.where)
            if utterance is not None:
                self.last_user = utterance
                self.transcript.append(SeedTurn("usr", " ".join(utterance.words),
                                                event=user_event))

        result = game.outcome(self.board)
        terminal = act == CLOSING and result != IN_PROGRESS
        reward_value = self.reward_fn(board_after_agent, act, dr,
                                      result if terminal else None)
        self.turns_taken += 1
        truncated = not terminal and self.turns_taken >= self.max_turns
        if truncated:
            logger.debug("episode aborted at the %d-turn bound", self.max_turns)
        info = {"outcome": result, "terminal": terminal, "truncated": truncated,
                "act": act}
        return self._observe(), reward_value, terminal, terminal or truncated, info


def build_env(action_model=None, vocab=None, rng_seed: int = 0, **kwargs) -> DialogueEnv:
    """Environment over the built-in seed corpus, deterministically seeded."""
    if action_model is None or vocab is None:
        corpus = dialogue.build_seed_corpus()
        vocab = vocab or dialogue.Vocabulary.from_corpus(corpus)
        action_model = action_model or dialogue.ActionModel.fit(corpus, vocab)
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed).spawn(1)[0])
    return DialogueEnv(action_model, vocab, rng, **kwargs)


class EpisodeRecord:
    def __init__(self, turns, experiences, outcome, total_reward):
        self.turns = tuple(turns)
        self.experiences = tuple(experiences)
        self.outcome = outcome
        self.total_reward = total_reward

    def as_dialogue(self) -> SeedDialogue:
        return SeedDialogue(turns=self.turns, outcome=self.outcome)

    def to_text(self) -> str:
        return dialogue.corpus_to_text([self.as_dialogue()])


def run_episode(policy, env: DialogueEnv) -> EpisodeRecord:
    """Drive one full dialogue; the policy maps (state, allowed) to an act."""
    state, allowed = env.reset()
    experiences = []
    total_reward = 0.0
    done = False
    info = {"outcome": IN_PROGRESS}
    while not done:
        act = policy(state, allowed)
        (next_state, next_allowed), r, terminal, done, info = env.step(act)
        experiences.append(agent_mod.Experience(state, act, r, next_state,
                                                terminal, tuple(next_allowed)))
        total_reward += r
        state, allowed = next_state, next_allowed
    return EpisodeRecord(env.transcript, experiences, info["outcome"], total_reward)

"""Noughts-and-crosses rules, outcome detection, and a perfect-play oracle.

Boards are immutable; `apply_move` returns a new board. The agent owns one
symbol for the whole game (noughts by default, since the agent opens play
drawing circles) and the board tracks whose move it is.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

EMPTY, NOUGHT, CROSS = 0, 1, 2

AGENT, USER = "agent", "user"

IN_PROGRESS = "in_progress"
AGENT_WIN = "agent_win"
USER_WIN = "user_win"
DRAW = "draw"

LOCATIONS = (
    "upperleft", "uppermiddle", "upperright",
    "middleleft", "middle", "middleright",
    "lowerleft", "lowermiddle", "lowerright",
)
LOCATION_INDEX = {name: i for i, name in enumerate(LOCATIONS)}

SYMBOL_NAMES = {NOUGHT: "circle", CROSS: "cross"}

_CELL_CHARS = {EMPTY: ".", NOUGHT: "o", CROSS: "x"}
_CHAR_CELLS = {c: v for v, c in _CELL_CHARS.items()}
_MOVER_CHARS = {AGENT: "a", USER: "u"}
_CHAR_MOVERS = {c: m for m, c in _MOVER_CHARS.items()}

LINES = (
    (0, 1, 2), (3, 4, 5), (6, 7, 8),
    (0, 3, 6), (1, 4, 7), (2, 5, 8),
    (0, 4, 8), (2, 4, 6),
)


class IllegalMoveError(Exception):
    """Raised for a move on an occupied cell or a finished game."""


@dataclass(frozen=True)
class GameMoveEvent:
    """The `[who ^ what ^ where]` record attached to a physical move."""

    who: str              # "usr" or "rob"
    where: str            # one of LOCATIONS
    symbol: str           # "circle" or "cross"
    what: str = "draw"


@dataclass(frozen=True)
class Board:
    cells: tuple = (EMPTY,) * 9
    to_move: str = AGENT
    agent_symbol: int = NOUGHT

    @property
    def user_symbol(self) -> int:
        return CROSS if self.agent_symbol == NOUGHT else NOUGHT


def new_board(agent_symbol: int = NOUGHT, first: str = AGENT) -> Board:
    return Board(cells=(EMPTY,) * 9, to_move=first, agent_symbol=agent_symbol)


def cell_index(where) -> int:
    """Accept a location name or a 0..8 index; return the index."""
    if isinstance(where, str):
        try:
            return LOCATION_INDEX[where]
        except KeyError:
            raise IllegalMoveError(f"unknown grid location {where!r}") from None
    idx = int(where)
    if not 0 <= idx <= 8:
        raise IllegalMoveError(f"cell index {idx} out of range")
    return idx


def apply_move(board: Board, where) -> Board:
    idx = cell_index(where)
    if outcome(board) != IN_PROGRESS:
        raise IllegalMoveError("game already finished")
    if board.cells[idx] != EMPTY:
        raise IllegalMoveError(f"cell {LOCATIONS[idx]} is occupied")
    symbol = board.agent_symbol if board.to_move == AGENT else board.user_symbol
    cells = board.cells[:idx] + (symbol,) + board.cells[idx + 1:]
    return replace(board, cells=cells, to_move=USER if board.to_move == AGENT else AGENT)


def _line_winner(cells) -> int:
    for a, b, c in LINES:
        if cells[a] != EMPTY and cells[a] == cells[b] == cells[c]:
            return cells[a]
    return EMPTY


def outcome(board: Board) -> str:
    winner = _line_winner(board.cells)
    if winner == board.agent_symbol:
        return AGENT_WIN
    if winner != EMPTY:
        return USER_WIN
    if all(c != EMPTY for c in board.cells):
        return DRAW
    return IN_PROGRESS


def legal_cells(board: Board) -> tuple:
    """Indices of the cells the side to move may take (empty if finished)."""
    if outcome(board) != IN_PROGRESS:
        return ()
    return tuple(i for i, c in enumerate(board.cells) if c == EMPTY)


def legal_moves(board: Board) -> tuple:
    """Same as legal_cells but as location names."""
    return tuple(LOCATIONS[i] for i in legal_cells(board))


@functools.lru_cache(maxsize=None)
def _agent_value(board: Board) -> int:
    """Game-theoretic value from the agent's perspective under perfect play."""
    result = outcome(board)
    if result == AGENT_WIN:
        return 1
    if result == USER_WIN:
        return -1
    if result == DRAW:
        return 0
    values = [_agent_value(apply_move(board, i)) for i in legal_cells(board)]
    return max(values) if board.to_move == AGENT else min(values)


def minimax_value(board: Board, perspective: str = AGENT) -> int:
    value = _agent_value(board)
    return value if perspective == AGENT else -value


def bonus_reward(board_after_agent_action: Board, lookahead: bool = False) -> float:
    """Shaping bonus for the board right after an agent game move.

    Default reading: 5 for the move that wins, 1 for the move that fills the
    board to a draw, 0 otherwise. The lookahead variant instead scores the
    forced result from the resulting position (oracle-based).
    """
    result = outcome(board_after_agent_action)
    if not lookahead:
        if result == AGENT_WIN:
            return 5.0
        if result == DRAW:
            return 1.0
        return 0.0
    if result == AGENT_WIN:
        return 5.0
    if result == USER_WIN:
        return 0.0
    if result == DRAW:
        return 1.0
    forced = minimax_value(board_after_agent_action, AGENT)
    return 5.0 if forced > 0 else (1.0 if forced == 0 else 0.0)


def board_to_string(board: Board) -> str:
    """10-character form: 9 cell chars in {., o, x} plus the side to move."""
    return "".join(_CELL_CHARS[c] for c in board.cells) + _MOVER_CHARS[board.to_move]


def board_from_string(text: str, agent_symbol: int = NOUGHT) -> Board:
    if len(text) != 10:
        raise ValueError(f"board string must have 10 characters, got {len(text)}")
    try:
        cells = tuple(_CHAR_CELLS[c] for c in text[:9])
        to_move = _CHAR_MOVERS[text[9]]
    except KeyError as exc:
        raise ValueError(f"bad board character {exc.args[0]!r}") from None
    return Board(cells=cells, to_move=to_move, agent_symbol=agent_symbol)

"""Noughts-and-crosses agent that learns to perceive drawn symbols and to
run the game dialogue, trained from a small seed corpus and simulations."""

__version__ = "0.1.0"

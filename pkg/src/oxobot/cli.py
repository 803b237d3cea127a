"""Command-line interface: train both learners, evaluate, export artifacts,
play in the terminal, and serve the live play API.

Exit codes: 0 success, 2 invalid flags, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, agent, dialogue, game, numerics, perception, persist, service, simulator


def _config_hash(args: argparse.Namespace) -> str:
    blob = repr(sorted((k, v) for k, v in vars(args).items() if k != "func"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _metadata_line(args: argparse.Namespace) -> str:
    return f"oxobot {__version__} config={_config_hash(args)}"


def _write_csv(path, header, rows, metadata: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {metadata}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# train-perception


def cmd_train_perception(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes or any(s < 10 for s in sizes):
        raise SystemExit2("--sizes needs comma-separated integers >= 10")
    seeds = perception.synthesize_seed_set(args.seed, args.per_class)
    test_rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xE7A1]))
    X_test, y_test = perception.build_dataset(seeds, args.test_size, test_rng)

    rows = []
    model = None
    for size in sizes:
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, size]))
        X, y = perception.build_dataset(seeds, size, rng)
        started = time.perf_counter()
        model, history = perception.train_classifier(
            (X, y), epochs=args.epochs, lr=args.lr, rng_seed=args.seed,
            batch_size=args.batch)
        seconds = time.perf_counter() - started
        accuracy = model.accuracy(X_test, y_test)
        rows.append((size, f"{accuracy:.4f}", f"{seconds:.2f}"))
        print(f"size={size}: held-out accuracy {accuracy:.4f} "
              f"(train {seconds:.1f}s, final train acc {history[-1]:.4f})")

    curve_path = args.curve or (str(args.out) + ".curve.csv")
    _write_csv(curve_path, ["train_size", "held_out_accuracy", "train_seconds"],
               rows, _metadata_line(args))
    model.save(args.out, {
        "seed": args.seed, "sizes": sizes, "epochs": args.epochs, "lr": args.lr,
        "per_class": args.per_class, "held_out_accuracy": float(rows[-1][1]),
        "test_size": args.test_size,
    })
    print(f"model -> {args.out}\ncurve -> {curve_path}")
    return 0


# ---------------------------------------------------------------------------
# train-agent


def _window_means(values, width):
    rows = []
    for hi in range(width, len(values) + 1, width):
        rows.append((hi, float(np.mean(values[hi - width:hi]))))
    return rows


def cmd_train_agent(args) -> int:
    corpus = dialogue.build_seed_corpus()
    vocab = dialogue.Vocabulary.from_corpus(corpus)
    action_model = dialogue.ActionModel.fit(corpus, vocab)
    config = agent.TrainingConfig(
        total_steps=args.steps, gamma=args.gamma, lr=args.lr,
        batch_size=args.batch, epsilon_min=args.epsilon_min,
        epsilon_decay_fraction=args.epsilon_decay,
        target_sync_period=args.target_sync, replay_capacity=args.replay_cap,
        warmup=args.warmup, rng_seed=args.seed, exploration=args.exploration,
        bonus_lookahead=args.bonus_lookahead)
    env = simulator.build_env(action_model, vocab, rng_seed=config.rng_seed + 1,
                              bonus_lookahead=config.bonus_lookahead)
    started = time.perf_counter()
    net, trace = agent.train(config, env)
    print(f"trained {args.steps} steps in {time.perf_counter() - started:.1f}s "
          f"({len(trace.episodes)} dialogues)")

    meta = _metadata_line(args)
    reward_rows = [(hi, f"{mean:.4f}")
                   for hi, mean in _window_means(trace.step_rewards(), args.reward_window)]
    _write_csv(str(args.out) + ".reward.csv", ["step", "avg_reward"], reward_rows, meta)
    windraw = [1.0 if outcome in (game.AGENT_WIN, game.DRAW) else 0.0
               for _, outcome, _, _ in trace.episodes]
    windraw_rows = [(hi, f"{mean:.4f}")
                    for hi, mean in _window_means(windraw, args.windraw_window)]
    _write_csv(str(args.out) + ".windraw.csv", ["game", "win_draw_rate"], windraw_rows, meta)
    trace.to_csv(str(args.out) + ".trace.csv", meta)

    net.save(args.out, vocab, {
        "config": {k: v for k, v in vars(config).items()},
        "corpus_sha256": dialogue.corpus_fingerprint(corpus),
        "episodes": len(trace.episodes),
    })
    print(f"model -> {args.out}")

    if args.eval_games > 0:
        eval_env = simulator.build_env(action_model, vocab, rng_seed=args.eval_seed)
        result = agent.evaluate(net, eval_env, args.eval_games)
        print(json.dumps(result, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    net, vocab, _ = agent.QNetwork.load(args.model)
    corpus = dialogue.build_seed_corpus()
    action_model = dialogue.ActionModel.fit(corpus, vocab)
    env = simulator.build_env(action_model, vocab, rng_seed=args.seed)
    result = agent.evaluate(net, env, args.games)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# play-text


_BOARD_CHARS = {game.EMPTY: ".", game.NOUGHT: "o", game.CROSS: "x"}


def _render_board(board: game.Board) -> str:
    rows = []
    for r in range(3):
        rows.append(" " + " | ".join(_BOARD_CHARS[board.cells[r * 3 + c]]
                                     for c in range(3)))
    return "\n---+---+---\n".join(rows)


def _print_events(events, out) -> None:
    for event in events:
        kind, payload = event["kind"], event["payload"]
        if kind == "utterance" and payload["speaker"] == "rob":
            out.write(f"Rob: {payload['text']}\n")
        elif kind == "move":
            who = "Rob" if payload["who"] == "rob" else "You"
            out.write(f"{who} drew a {payload['symbol']} at {payload['where']}\n")
        elif kind == "outcome":
            out.write(f"[game over: {payload['outcome']}]\n")
        elif kind == "rejection":
            out.write(f"[rejected: {payload['reason']}]\n")
        elif kind == "closed":
            out.write("[session closed]\n")


def _build_manager(args) -> service.SessionManager:
    corpus = dialogue.build_seed_corpus()
    if args.scripted:
        vocab = dialogue.Vocabulary.from_corpus(corpus)
        action_model = dialogue.ActionModel.fit(corpus, vocab)
        policy_factory = lambda: dialogue.corpus_policy(action_model)  # noqa: E731
    else:
        if not args.agent_model:
            raise SystemExit2("--agent-model is required unless --scripted is given")
        net, vocab, _ = agent.QNetwork.load(args.agent_model)
        action_model = dialogue.ActionModel.fit(corpus, vocab)
        policy_factory = lambda: agent.greedy_policy(net)  # noqa: E731
    if getattr(args, "perception_model", None):
        classifier = perception.PerceptionModel.load(args.perception_model)
    else:
        classifier = _ConstantInkClassifier()
    return service.SessionManager(classifier, policy_factory, action_model, vocab,
                                  rng_seed=args.seed,
                                  ttl_seconds=getattr(args, "ttl", 1800.0))


class _ConstantInkClassifier:
    """Stand-in classifier for typed play: heavy ink means the user's cross."""

    def classify(self, image):
        mean = float(np.asarray(image).mean())
        label = perception.CROSS if mean > 0.5 else perception.NOTHING
        return label, np.zeros(3)


def cmd_play_text(args) -> int:
    manager = _build_manager(args)
    out = sys.stdout
    session_id, events = manager.create_session()
    _print_events(events, out)
    ink = np.ones((perception.CELL, perception.CELL))
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        snap = manager.snapshot(session_id)
        if snap["turn"] == "over":
            break
        if snap["waiting_for"] == "draw" and (
                text in game.LOCATION_INDEX or text.isdigit()):
            cell = game.cell_index(text if not text.isdigit() else int(text))
            if manager.snapshot(session_id)["board"][cell] != ".":
                out.write(f"[{game.LOCATIONS[cell]} is occupied, pick another cell]\n")
                continue
            events = []
            for _ in range(3):  # the debounce wants three agreeing ticks
                _, new = manager.submit_raster(session_id, cell, ink)
                events.extend(new)
            _print_events(events, out)
        else:
            new, notice = manager.submit_utterance(session_id, text)
            if notice:
                out.write(f"[{notice}]\n")
            _print_events(new, out)
        snap = manager.snapshot(session_id)
        out.write(_render_board(game.board_from_string(snap["board"])) + "\n")
        if snap["turn"] == "over":
            break
    snap = manager.snapshot(session_id)
    out.write(f"final board:\n{_render_board(game.board_from_string(snap['board']))}\n")
    out.write(f"outcome: {snap['outcome']}\n")
    return 0


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    import uvicorn

    manager = _build_manager(args)
    app = service.create_app(manager)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# exports


def cmd_export_seeds(args) -> int:
    seeds = perception.synthesize_seed_set(args.seed, args.per_class)
    perception.export_image_corpus(seeds, args.out)
    print(f"{len(seeds)} images -> {args.out}")
    return 0


def cmd_export_corpus(args) -> int:
    corpus = dialogue.build_seed_corpus()
    dialogue.save_corpus(corpus, args.out)
    print(f"{len(corpus)} dialogues -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


class SystemExit2(Exception):
    """Flag validation error beyond argparse's own checks."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oxobot",
                                     description="noughts-and-crosses agent tooling")
    parser.add_argument("--version", action="version", version=f"oxobot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-perception", help="train the symbol classifier")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="100,500,1000,5000,10000",
                   help="comma-separated training-set sizes")
    p.add_argument("--per-class", type=int, default=36, help="seed drawings per class")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--curve", default=None, help="accuracy curve CSV path")
    p.set_defaults(func=cmd_train_perception)

    p = sub.add_parser("train-agent", help="train the dialogue Q-network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=1_500_000)
    p.add_argument("--gamma", type=float, default=0.7)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epsilon-min", type=float, default=0.01)
    p.add_argument("--epsilon-decay", type=float, default=0.25,
                   help="fraction of steps over which epsilon decays")
    p.add_argument("--target-sync", type=int, default=150)
    p.add_argument("--replay-cap", type=int, default=100_000)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--exploration", choices=("epsilon", "nb-posterior"), default="epsilon")
    p.add_argument("--bonus-lookahead", action="store_true",
                   help="score the game bonus with the perfect-play oracle")
    p.add_argument("--reward-window", type=int, default=1000)
    p.add_argument("--windraw-window", type=int, default=100)
    p.add_argument("--eval-games", type=int, default=1000)
    p.add_argument("--eval-seed", type=int, default=999)
    p.add_argument("--out", required=True, help="model file path")
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("evaluate", help="evaluate a trained agent model")
    p.add_argument("--model", required=True)
    p.add_argument("--games", type=int, default=1000)
    p.add_argument("--seed", type=int, default=999)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("play-text", help="play against the agent in the terminal")
    p.add_argument("--agent-model", default=None)
    p.add_argument("--scripted", action="store_true",
                   help="use the corpus-likeness baseline instead of a trained model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_play_text, perception_model=None)

    p = sub.add_parser("serve", help="run the live play HTTP service")
    p.add_argument("--perception-model", default=None,
                   help="classifier model file (required for real drawing input)")
    p.add_argument("--agent-model", default=None)
    p.add_argument("--scripted", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8330)
    p.add_argument("--ttl", type=float, default=1800.0, help="idle session TTL seconds")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-seeds", help="write seed images as PGM + manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=36)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_seeds)

    p = sub.add_parser("export-corpus", help="write the seed dialogues as text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_corpus)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except numerics.NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except persist.ModelFormatError as exc:
        print(f"model file error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

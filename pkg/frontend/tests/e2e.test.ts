/**
 * End-to-end play against the real service: train a small (but real)
 * symbol classifier, start the HTTP service with the corpus-likeness
 * policy, then run a scripted session that freehand-draws crosses into
 * cells and plays a full game.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { HttpTransport, SessionClient } from "../src/client.js";
import { InkSurface, drawCross } from "../src/raster.js";
import type { SessionEvent } from "../src/types.js";

const PORT = 8344 + (process.pid % 197);
const BASE = `http://127.0.0.1:${PORT}`;
const LINES = [
  [0, 1, 2], [3, 4, 5], [6, 7, 8],
  [0, 3, 6], [1, 4, 7], [2, 5, 8],
  [0, 4, 8], [2, 4, 6],
];

let workdir: string;
let server: ChildProcess | null = null;

async function waitForService(): Promise<void> {
  for (let i = 0; i < 120; i++) {
    try {
      const r = await fetch(`${BASE}/openapi.json`);
      if (r.ok) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
  throw new Error("service did not come up");
}

/** Purely defensive scripted player: block an imminent agent line, else
 * take the first empty cell (never going for a win keeps the endgame in
 * the contexts the corpus-likeness policy verbalises best). */
function pickCell(board: string): number {
  const cells = board.slice(0, 9).split("");
  for (const line of LINES) {
    const values = line.map((i) => cells[i]);
    if (values.filter((v) => v === "o").length === 2 && values.includes(".")) {
      return line[values.indexOf(".")];
    }
  }
  return cells.indexOf(".");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "oxobot-e2e-"));
  const model = join(workdir, "perc.model");
  execFileSync("python3", [
    "-m", "oxobot.cli", "train-perception",
    "--seed", "1", "--sizes", "2000", "--epochs", "6",
    "--test-size", "200", "--out", model,
  ], { stdio: "inherit", timeout: 600_000 });
  server = spawn("python3", [
    "-m", "oxobot.cli", "serve", "--scripted",
    "--perception-model", model,
    "--port", String(PORT), "--seed", "3",
  ], { stdio: "inherit" });
  await waitForService();
}, 700_000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("live play", () => {
  it("draws symbols into cells and completes a full game", async () => {
    const seen: SessionEvent[] = [];
    const client = new SessionClient(new HttpTransport(BASE), (e) => seen.push(e));
    await client.createSession();

    expect(seen[0].kind).toBe("utterance");
    expect(seen[0].payload.text).toBe("Hello!");

    await client.sendUtterance("yes lets go for it");

    let drawn = 0;
    const tickCounts: number[] = [];
    for (let round = 0; round < 12 && !client.closed; round++) {
      const snapshot = await client.snapshot();
      if (snapshot.turn === "over") {
        break;
      }
      if (snapshot.waiting_for === "verbal") {
        await client.sendUtterance("okay");
        continue;
      }
      expect(snapshot.waiting_for).toBe("draw");
      const cell = pickCell(snapshot.board);
      expect(cell).toBeGreaterThanOrEqual(0);

      const surface = new InkSurface(160);
      drawCross(surface, cell + 1);
      const raster = surface.downsample();
      let committed = false;
      let ticks = 0;
      while (!committed && ticks < 3) {
        committed = await client.submitRasterTick(cell, raster);
        ticks += 1;
      }
      expect(committed).toBe(true); // within 3 raster ticks
      tickCounts.push(ticks);
      drawn += 1;
    }

    // a full game was played out and closed by the agent
    expect(client.closed).toBe(true);
    expect(drawn).toBeGreaterThanOrEqual(3);
    expect(tickCounts.every((t) => t <= 3)).toBe(true);

    // events arrived strictly in order
    const seqs = seen.map((e) => e.seq);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
    expect(new Set(seqs).size).toBe(seqs.length);

    // transcript shape: greeting, name, move verbalizations, outcome, farewell
    const texts = seen.filter((e) => e.kind === "utterance")
      .map((e) => String(e.payload.text));
    expect(texts[0]).toBe("Hello!");
    expect(texts).toContain("I am Baxter.");
    expect(texts).toContain("Would you like to play a game with me?");
    expect(texts).toContain("I take this one");
    expect(texts).toContain("Your turn.");
    expect(texts[texts.length - 1]).toBe("Good bye!");
    expect(texts.some((t) => ["Yes, I won.", "It is a draw.", "You won, well done."]
      .includes(t))).toBe(true);
    expect(seen.some((e) => e.kind === "outcome")).toBe(true);
    expect(seen[seen.length - 1].kind).toBe("closed");

    // every agent move event precedes its verbal line
    for (let i = 0; i < seen.length; i++) {
      const event = seen[i];
      if (event.kind === "move" && event.payload.who === "rob") {
        const next = seen[i + 1];
        expect(["utterance", "outcome"]).toContain(next.kind);
      }
    }

    // the user's drawings all match the user's committed moves
    const userMoves = seen.filter(
      (e) => e.kind === "move" && e.payload.who === "usr");
    expect(userMoves.length).toBe(drawn);
    expect(userMoves.every((e) => e.payload.symbol === "cross")).toBe(true);
  }, 120_000);
});

/**
 * Browser wiring: a 3x3 freehand drawing grid, a chat panel, a transcript,
 * and a turn banner. While a cell holds uncommitted ink during the user's
 * turn, its raster is re-submitted every 100 ms until the service commits
 * the move (the grid lines live in CSS, never in the rasters).
 */

import { HttpTransport, SessionClient } from "./client.js";
import { InkSurface } from "./raster.js";
import type { SessionEvent } from "./types.js";

const TICK_MS = 100;
const SURFACE = 160;

interface CellView {
  index: number;
  canvas: HTMLCanvasElement;
  surface: InkSurface;
  committed: boolean;
  overlay: string | null;
}

export class App {
  private readonly client: SessionClient;
  private readonly cells: CellView[] = [];
  private ticker: number | null = null;
  private activeCell: number | null = null;
  private drawing = false;

  constructor(private readonly root: HTMLElement, baseUrl: string) {
    this.client = new SessionClient(new HttpTransport(baseUrl),
                                    (e) => this.render(e));
    this.buildDom();
    document.addEventListener("visibilitychange", () => {
      if (document.hidden) {
        this.stopTicker();
      }
    });
  }

  async start(): Promise<void> {
    await this.client.createSession();
    this.banner(`session ${this.client.sessionId}`);
  }

  // -- DOM scaffolding

  private buildDom(): void {
    this.root.innerHTML = `
      <div class="layout">
        <div>
          <div id="banner" class="banner"></div>
          <div id="grid" class="grid"></div>
          <button id="clear">clear drawing</button>
        </div>
        <div class="chatpane">
          <div id="transcript" class="transcript"></div>
          <form id="chat"><input id="chatline" autocomplete="off"
            placeholder="say something"><button>send</button></form>
        </div>
      </div>`;
    const grid = this.must("#grid");
    for (let i = 0; i < 9; i++) {
      const canvas = document.createElement("canvas");
      canvas.width = SURFACE;
      canvas.height = SURFACE;
      canvas.className = "cell";
      grid.appendChild(canvas);
      const view: CellView = {
        index: i, canvas, surface: new InkSurface(SURFACE),
        committed: false, overlay: null,
      };
      this.cells.push(view);
      canvas.addEventListener("pointerdown", (e) => this.penDown(view, e));
      canvas.addEventListener("pointermove", (e) => this.penMove(view, e));
      canvas.addEventListener("pointerup", () => this.penUp());
      canvas.addEventListener("pointerleave", () => this.penUp());
    }
    this.must("#chat").addEventListener("submit", (e) => {
      e.preventDefault();
      const line = this.must("#chatline") as HTMLInputElement;
      const text = line.value.trim();
      line.value = "";
      if (text) {
        void this.client.sendUtterance(text).catch((err) => this.banner(String(err)));
      }
    });
    this.must("#clear").addEventListener("click", () => {
      if (this.activeCell !== null && !this.cells[this.activeCell].committed) {
        this.cells[this.activeCell].surface.clear();
        this.paint(this.cells[this.activeCell]);
        this.stopTicker();
        this.activeCell = null;
      }
    });
  }

  private must(selector: string): HTMLElement {
    const node = this.root.querySelector(selector);
    if (!node) {
      throw new Error(`missing ${selector}`);
    }
    return node as HTMLElement;
  }

  // -- drawing

  private penDown(view: CellView, e: PointerEvent): void {
    if (view.committed || this.client.closed || this.client.turnOwner() !== "user") {
      this.banner("not your turn to draw");
      return;
    }
    this.drawing = true;
    this.activeCell = view.index;
    this.penMove(view, e);
  }

  private penMove(view: CellView, e: PointerEvent): void {
    if (!this.drawing || view.index !== this.activeCell || view.committed) {
      return;
    }
    const rect = view.canvas.getBoundingClientRect();
    const x = ((e.clientX - rect.left) / rect.width) * SURFACE;
    const y = ((e.clientY - rect.top) / rect.height) * SURFACE;
    view.surface.stroke([{ x, y }], SURFACE * 0.06);
    this.paint(view);
    this.startTicker();
  }

  private penUp(): void {
    this.drawing = false;
  }

  private startTicker(): void {
    if (this.ticker === null) {
      this.ticker = window.setInterval(() => void this.tick(), TICK_MS);
    }
  }

  private stopTicker(): void {
    if (this.ticker !== null) {
      window.clearInterval(this.ticker);
      this.ticker = null;
    }
  }

  private async tick(): Promise<void> {
    if (this.activeCell === null) {
      this.stopTicker();
      return;
    }
    const view = this.cells[this.activeCell];
    if (view.committed || !view.surface.hasInk()) {
      this.stopTicker();
      return;
    }
    try {
      const committed = await this.client.submitRasterTick(
        view.index, view.surface.downsample());
      if (committed) {
        view.committed = true;
        this.stopTicker();
        this.activeCell = null;
      }
    } catch (err) {
      // turn violations and rejections flash the cell and drop the ink
      view.surface.clear();
      this.paint(view);
      this.stopTicker();
      this.activeCell = null;
      this.banner(String(err));
    }
  }

  // -- rendering

  private paint(view: CellView): void {
    const ctx = view.canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    ctx.clearRect(0, 0, SURFACE, SURFACE);
    const image = ctx.createImageData(SURFACE, SURFACE);
    for (let y = 0; y < SURFACE; y++) {
      for (let x = 0; x < SURFACE; x++) {
        const v = view.surface.at(y, x);
        const o = (y * SURFACE + x) * 4;
        image.data[o + 3] = Math.round(v * 255);
      }
    }
    ctx.putImageData(image, 0, 0);
    if (view.overlay) {
      ctx.font = `${SURFACE * 0.8}px sans-serif`;
      ctx.textAlign = "center";
      ctx.textBaseline = "middle";
      ctx.fillStyle = view.overlay === "o" ? "#0a6" : "#d33";
      ctx.fillText(view.overlay, SURFACE / 2, SURFACE / 2 + SURFACE * 0.05);
    }
  }

  private banner(text: string): void {
    this.must("#banner").textContent = text;
  }

  private transcriptLine(text: string): void {
    const pane = this.must("#transcript");
    const line = document.createElement("div");
    line.textContent = text;
    pane.appendChild(line);
    pane.scrollTop = pane.scrollHeight;
  }

  private render(event: SessionEvent): void {
    switch (event.kind) {
      case "utterance": {
        const who = event.payload.speaker === "rob" ? "Rob" : "You";
        this.transcriptLine(`${who}: ${event.payload.text}`);
        break;
      }
      case "move": {
        const board = this.client.boardFromEvents();
        board.forEach((symbol, i) => {
          if (symbol !== ".") {
            const view = this.cells[i];
            view.committed = true;
            view.overlay = symbol;
            if (event.payload.who === "rob") {
              view.surface.clear();
            }
            this.paint(view);
          }
        });
        break;
      }
      case "turn":
        this.banner(event.payload.owner === "user" ? "your turn" : "thinking...");
        break;
      case "outcome":
        this.transcriptLine(`[game over: ${event.payload.outcome}]`);
        break;
      case "rejection":
        this.banner(`rejected: ${event.payload.reason}`);
        break;
      case "closed":
        this.banner("session finished");
        this.stopTicker();
        break;
    }
  }
}

declare global {
  interface Window {
    oxobotApp?: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const base = (document.getElementById("app") as HTMLElement).dataset.service
    ?? "http://127.0.0.1:8330";
  const app = new App(document.getElementById("app") as HTMLElement, base);
  window.oxobotApp = app;
  void app.start();
}



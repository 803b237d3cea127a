/**
 * Per-cell ink model. Strokes paint onto a square buffer at display
 * resolution; submission downsamples to the service's 40x40 cell raster
 * with a box filter. Both operations are pure functions of the stroke
 * input, so the same drawing always produces the same 1600 bytes.
 */

export const CELL_PIXELS = 40;

export interface Point {
  x: number;
  y: number;
}

export class InkSurface {
  readonly size: number;
  private readonly data: Float32Array;

  constructor(size = 160) {
    if (size % CELL_PIXELS !== 0) {
      throw new Error(`surface size ${size} must be a multiple of ${CELL_PIXELS}`);
    }
    this.size = size;
    this.data = new Float32Array(size * size);
  }

  clear(): void {
    this.data.fill(0);
  }

  hasInk(): boolean {
    return this.data.some((v) => v > 0);
  }

  at(y: number, x: number): number {
    return this.data[y * this.size + x];
  }

  /** Stamp a round brush along the polyline. */
  stroke(points: Point[], width: number): void {
    const r = width / 2;
    for (let i = 1; i < points.length; i++) {
      this.segment(points[i - 1], points[i], r);
    }
    if (points.length === 1) {
      this.stamp(points[0].y, points[0].x, r);
    }
  }

  private segment(a: Point, b: Point, r: number): void {
    const length = Math.max(Math.abs(b.x - a.x), Math.abs(b.y - a.y), 1e-9);
    const steps = Math.max(2, Math.ceil(length / 1.5));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stamp(a.y + t * (b.y - a.y), a.x + t * (b.x - a.x), r);
    }
  }

  private stamp(cy: number, cx: number, r: number): void {
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(this.size, Math.floor(cy + r) + 2);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(this.size, Math.floor(cx + r) + 2);
    for (let y = y0; y < y1; y++) {
      for (let x = x0; x < x1; x++) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
          this.data[y * this.size + x] = 1;
        }
      }
    }
  }

  /** Box-filter the surface down to the 40x40 service raster (0..255). */
  downsample(): Uint8Array {
    const block = this.size / CELL_PIXELS;
    const out = new Uint8Array(CELL_PIXELS * CELL_PIXELS);
    for (let cy = 0; cy < CELL_PIXELS; cy++) {
      for (let cx = 0; cx < CELL_PIXELS; cx++) {
        let sum = 0;
        for (let y = cy * block; y < (cy + 1) * block; y++) {
          for (let x = cx * block; x < (cx + 1) * block; x++) {
            sum += this.data[y * this.size + x];
          }
        }
        out[cy * CELL_PIXELS + cx] = Math.round((sum / (block * block)) * 255);
      }
    }
    return out;
  }
}

/** Base64 of the 1600 raster bytes, browser or node. */
export function encodeRaster(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let binary = "";
    for (const b of bytes) {
      binary += String.fromCharCode(b);
    }
    return btoa(binary);
  }
  return Buffer.from(bytes).toString("base64");
}

/** A clean cross drawing for a cell, used by scripted sessions and tests. */
export function drawCross(surface: InkSurface, jitter = 0): void {
  const c = surface.size / 2;
  const half = surface.size * 0.28;
  const w = surface.size * 0.06;
  const j = (k: number) => jitter * Math.sin(7 * k + jitter);
  for (const [sy, sx] of [[1, 1], [1, -1]] as const) {
    const pts: Point[] = [];
    for (let i = 0; i <= 5; i++) {
      const t = i / 5;
      pts.push({
        y: c + (2 * t - 1) * half * sy + j(i),
        x: c + (2 * t - 1) * half * sx + j(i + 3),
      });
    }
    surface.stroke(pts, w);
  }
}

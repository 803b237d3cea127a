import { describe, expect, it } from "vitest";

import { CELL_PIXELS, InkSurface, drawCross, encodeRaster } from "../src/raster.js";

describe("InkSurface", () => {
  it("rejects sizes that do not divide into cells", () => {
    expect(() => new InkSurface(150)).toThrow(/multiple/);
  });

  it("starts blank and clears", () => {
    const s = new InkSurface(80);
    expect(s.hasInk()).toBe(false);
    s.stroke([{ x: 40, y: 40 }], 10);
    expect(s.hasInk()).toBe(true);
    s.clear();
    expect(s.hasInk()).toBe(false);
    expect(s.downsample().every((v) => v === 0)).toBe(true);
  });

  it("downsample is a box filter over blocks", () => {
    const s = new InkSurface(80); // 2x2 blocks per raster pixel
    // fully ink one 2x2 block -> exactly one raster pixel at 255
    s.stroke([{ x: 0.5, y: 0.5 }, { x: 1.5, y: 0.5 },
              { x: 0.5, y: 1.5 }, { x: 1.5, y: 1.5 }], 1.4);
    const raster = s.downsample();
    expect(raster[0]).toBeGreaterThan(0);
    const lit = raster.filter((v) => v > 0).length;
    expect(lit).toBeLessThan(6); // ink stays local
    expect(raster.length).toBe(CELL_PIXELS * CELL_PIXELS);
  });

  it("same strokes produce identical rasters", () => {
    const a = new InkSurface(160);
    const b = new InkSurface(160);
    for (const s of [a, b]) {
      s.stroke([{ x: 20, y: 20 }, { x: 120, y: 130 }, { x: 40, y: 90 }], 9);
    }
    expect(Array.from(a.downsample())).toEqual(Array.from(b.downsample()));
    expect(encodeRaster(a.downsample())).toBe(encodeRaster(b.downsample()));
  });

  it("drawCross inks both diagonals inside the frame", () => {
    const s = new InkSurface(160);
    drawCross(s, 2);
    const raster = s.downsample();
    const at = (y: number, x: number) => raster[y * CELL_PIXELS + x];
    expect(at(20, 20)).toBeGreaterThan(0);      // centre crossing
    expect(at(10, 10)).toBeGreaterThan(0);      // top-left arm
    expect(at(10, 29)).toBeGreaterThan(0);      // top-right arm
    expect(at(0, 0)).toBe(0);                   // corners stay clear
    const mean = raster.reduce((acc, v) => acc + v, 0) / raster.length;
    expect(mean).toBeGreaterThan(255 * 0.05);   // clearly not a blank
  });

  it("encodeRaster emits base64 of exactly 1600 bytes", () => {
    const s = new InkSurface(160);
    drawCross(s);
    const b64 = encodeRaster(s.downsample());
    const decoded = Buffer.from(b64, "base64");
    expect(decoded.length).toBe(1600);
  });
});

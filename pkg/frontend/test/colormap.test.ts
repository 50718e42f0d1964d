import { describe, expect, it } from "vitest";

import { HOTSPOT_COLOR, heatCss, heatRgb, lightCss, normalizeCells } from "../src/colormap.js";

describe("heat colormap", () => {
  it("renders pure blue at 0 and pure red at 1", () => {
    expect(heatRgb(0)).toEqual([0, 0, 255]);
    expect(heatRgb(1)).toEqual([255, 0, 0]);
  });

  it("is linear in between", () => {
    expect(heatRgb(0.5)).toEqual([128, 0, 128]);
  });

  it("clamps out-of-range values", () => {
    expect(heatRgb(-1)).toEqual([0, 0, 255]);
    expect(heatRgb(2)).toEqual([255, 0, 0]);
  });

  it("emits css with alpha", () => {
    expect(heatCss(0, 0.5)).toBe("rgba(0, 0, 255, 0.5)");
    expect(heatCss(1)).toBe("rgba(255, 0, 0, 1)");
  });

  it("pins the hotspot marker yellow", () => {
    expect(HOTSPOT_COLOR).toBe("#ffdd00");
  });
});

describe("light tint", () => {
  it("maps the bridge hue circle onto css hue degrees", () => {
    expect(lightCss(true, 254, 0, 254)).toBe("hsl(0.0, 100.0%, 60.0%)");
    // green anchor 25500 lands near 140 degrees
    expect(lightCss(true, 127, 25500, 254)).toMatch(/^hsl\(140\.\d, 100\.0%/);
  });

  it("renders off lights as dark neutral", () => {
    expect(lightCss(false, 254, 0, 254)).toBe("#222831");
  });
});

describe("normalizeCells", () => {
  it("divides by the maximum", () => {
    expect(normalizeCells([1, 0.5, 0.25])).toEqual([1, 0.5, 0.25]);
    expect(normalizeCells([0, 2, 4])).toEqual([0, 0.5, 1]);
  });

  it("keeps an all-zero grid at zero", () => {
    expect(normalizeCells([0, 0, 0])).toEqual([0, 0, 0]);
  });
});

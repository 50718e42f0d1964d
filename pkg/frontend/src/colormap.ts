// The heat colormap is a fixed, documented function of the normalized value
// so screenshots stay comparable across runs: 0 renders pure blue,
// 1 pure red, linearly in RGB. Hotspot markers are always the same yellow.

export const HOTSPOT_COLOR = "#ffdd00";

export function heatRgb(value: number): [number, number, number] {
  const v = Math.min(1, Math.max(0, value));
  return [Math.round(255 * v), 0, Math.round(255 * (1 - v))];
}

export function heatCss(value: number, alpha = 1): string {
  const [r, g, b] = heatRgb(value);
  return `rgba(${r}, ${g}, ${b}, ${alpha})`;
}

/** Convert a bridge-scale light state (hue 0..65535, sat/bri 0..254) to CSS. */
export function lightCss(on: boolean, bri: number, hue: number, sat: number): string {
  if (!on) {
    return "#222831";
  }
  const h = (hue / 65535) * 360;
  const s = (sat / 254) * 100;
  // keep some floor lightness so a dim-but-on light stays visible
  const l = 15 + (bri / 254) * 45;
  return `hsl(${h.toFixed(1)}, ${s.toFixed(1)}%, ${l.toFixed(1)}%)`;
}

export function normalizeCells(cells: number[]): number[] {
  let max = 0;
  for (const c of cells) {
    if (c > max) max = c;
  }
  if (max <= 0) {
    return cells.map(() => 0);
  }
  return cells.map((c) => c / max);
}

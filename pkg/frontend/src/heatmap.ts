import type { HeatmapWire } from "./types.js";

/**
 * Heat map geometry and color helpers, kept pure so headless tests can
 * assert on the exact paint operations the canvas would receive.
 *
 * Grid convention: counts[i][j] with i along ground x and j along ground y;
 * the screen draws y flipped so north stays up.
 */

export interface CellPaint {
  i: number;
  j: number;
  x: number;
  y: number;
  size: number;
  color: string;
  count: number;
}

export function maxCount(grid: HeatmapWire): number {
  let max = 0;
  for (const row of grid.counts) {
    for (const c of row) if (c > max) max = c;
  }
  return max;
}

/** Log-scale intensity in [0, 1]; documented on the panel legend. */
export function heatIntensity(count: number, max: number): number {
  if (count <= 0 || max <= 0) return 0;
  return Math.log1p(count) / Math.log1p(max);
}

const EMPTY_CELL = "rgb(24,30,42)";

/** Dark-to-hot ramp, strictly increasing in intensity. */
export function heatColor(count: number, max: number): string {
  const t = heatIntensity(count, max);
  if (t === 0) return EMPTY_CELL;
  const r = Math.round(40 + 215 * Math.min(1, 1.25 * t));
  const g = Math.round(30 + 195 * Math.max(0, 1.6 * t - 0.6));
  const b = Math.round(70 * (1 - t));
  return `rgb(${r},${g},${b})`;
}

export function paintCells(grid: HeatmapWire, cellPx: number): CellPaint[] {
  const [ni, nj] = grid.shape;
  const max = maxCount(grid);
  const out: CellPaint[] = [];
  for (let i = 0; i < ni; i++) {
    for (let j = 0; j < nj; j++) {
      const count = grid.counts[i]?.[j] ?? 0;
      out.push({
        i,
        j,
        x: i * cellPx,
        y: (nj - 1 - j) * cellPx,
        size: cellPx,
        color: heatColor(count, max),
        count,
      });
    }
  }
  return out;
}

export interface CellHit {
  i: number;
  j: number;
  count: number;
}

/** Hottest cell, lowest i then lowest j on ties. */
export function argmaxCell(grid: HeatmapWire): CellHit {
  const [ni, nj] = grid.shape;
  let best: CellHit = { i: 0, j: 0, count: grid.counts[0]?.[0] ?? 0 };
  for (let i = 0; i < ni; i++) {
    for (let j = 0; j < nj; j++) {
      const count = grid.counts[i]?.[j] ?? 0;
      if (count > best.count) best = { i, j, count };
    }
  }
  return best;
}

/** Cell under a canvas pixel, or null outside the drawn grid. */
export function cellAt(grid: HeatmapWire, cellPx: number, px: number, py: number): CellHit | null {
  const [ni, nj] = grid.shape;
  const i = Math.floor(px / cellPx);
  const row = Math.floor(py / cellPx);
  if (i < 0 || i >= ni || row < 0 || row >= nj) return null;
  const j = nj - 1 - row;
  return { i, j, count: grid.counts[i]?.[j] ?? 0 };
}

/** Hover readout: exact integer count plus the cell's ground extent. */
export function hoverText(grid: HeatmapWire, hit: CellHit): string {
  const [ox, oy] = grid.origin;
  const x0 = ox + hit.i * grid.cell_m;
  const y0 = oy + hit.j * grid.cell_m;
  return `${hit.count} at (${x0.toFixed(1)}, ${y0.toFixed(1)}) m`;
}

export interface RectPainter {
  fillStyle: unknown;
  fillRect(x: number, y: number, w: number, h: number): void;
}

export function drawCells(ctx: RectPainter, paints: CellPaint[]): void {
  for (const p of paints) {
    ctx.fillStyle = p.color;
    ctx.fillRect(p.x, p.y, p.size, p.size);
  }
}

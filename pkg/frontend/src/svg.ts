import { Figure, Point, Series } from "./figures.js";

const WIDTH = 760;
const HEIGHT = 440;
const MARGIN = { top: 42, right: 230, bottom: 52, left: 76 };
const PLOT_W = WIDTH - MARGIN.left - MARGIN.right;
const PLOT_H = HEIGHT - MARGIN.top - MARGIN.bottom;

const PALETTE = [
  "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
  "#8c564b", "#17becf", "#e377c2", "#7f7f7f", "#bcbd22",
];

/** Canonical short number form so identical inputs render identically. */
function fmt(v: number): string {
  if (!Number.isFinite(v)) {
    return "0";
  }
  return String(Number(v.toPrecision(6)));
}

function px(v: number): string {
  return v.toFixed(2);
}

interface Extent {
  lo: number;
  hi: number;
}

function extent(values: number[]): Extent {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (lo === hi) {
    const pad = lo === 0 ? 1 : Math.abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  return { lo, hi };
}

/** Tick positions at a 1/2/5 step covering the extent. */
function ticks(ext: Extent, target = 5): number[] {
  const span = ext.hi - ext.lo;
  const raw = span / target;
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  const norm = raw / mag;
  const step = (norm <= 1 ? 1 : norm <= 2 ? 2 : norm <= 5 ? 5 : 10) * mag;
  const out: number[] = [];
  for (let v = Math.ceil(ext.lo / step) * step; v <= ext.hi + step * 1e-9;
       v += step) {
    out.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return out;
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function seriesMarkup(s: Series, color: string, sx: (v: number) => number,
                      sy: (v: number) => number): string {
  const parts: string[] = [];
  parts.push(`  <g class="series" data-label="${escapeXml(s.label)}">`);
  if (s.points.length > 1) {
    const pts = s.points
      .map((p) => `${px(sx(p.x))},${px(sy(p.y))}`)
      .join(" ");
    parts.push(`    <polyline fill="none" stroke="${color}" ` +
      `stroke-width="1.8" points="${pts}"/>`);
  }
  for (const p of s.points) {
    const x = sx(p.x);
    if (p.err > 0) {
      const yLo = sy(p.y - p.err);
      const yHi = sy(p.y + p.err);
      parts.push(`    <line stroke="${color}" stroke-width="1" ` +
        `x1="${px(x)}" y1="${px(yLo)}" x2="${px(x)}" y2="${px(yHi)}"/>`);
      for (const yy of [yLo, yHi]) {
        parts.push(`    <line stroke="${color}" stroke-width="1" ` +
          `x1="${px(x - 3)}" y1="${px(yy)}" x2="${px(x + 3)}" y2="${px(yy)}"/>`);
      }
    }
    parts.push(`    <circle fill="${color}" cx="${px(x)}" ` +
      `cy="${px(sy(p.y))}" r="3"/>`);
  }
  parts.push("  </g>");
  return parts.join("\n");
}

export function renderSvg(fig: Figure): string {
  const allPoints: Point[] = fig.series.flatMap((s) => s.points);
  const xExt = extent(allPoints.map((p) => p.x));
  const yExt = extent(allPoints.flatMap((p) => [p.y - p.err, p.y + p.err]));
  const sx = (v: number) =>
    MARGIN.left + ((v - xExt.lo) / (xExt.hi - xExt.lo)) * PLOT_W;
  const sy = (v: number) =>
    MARGIN.top + PLOT_H - ((v - yExt.lo) / (yExt.hi - yExt.lo)) * PLOT_H;

  const out: string[] = [];
  out.push(`<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" ` +
    `height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
    `font-family="Helvetica, Arial, sans-serif">`);
  out.push(`  <rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`);
  out.push(`  <text x="${WIDTH / 2}" y="24" text-anchor="middle" ` +
    `font-size="14">${escapeXml(fig.title)}</text>`);

  for (const t of ticks(xExt)) {
    const x = px(sx(t));
    out.push(`  <line stroke="#dddddd" x1="${x}" y1="${MARGIN.top}" ` +
      `x2="${x}" y2="${MARGIN.top + PLOT_H}"/>`);
    out.push(`  <text x="${x}" y="${MARGIN.top + PLOT_H + 18}" ` +
      `text-anchor="middle" font-size="11">${fmt(t)}</text>`);
  }
  for (const t of ticks(yExt)) {
    const y = px(sy(t));
    out.push(`  <line stroke="#dddddd" x1="${MARGIN.left}" y1="${y}" ` +
      `x2="${MARGIN.left + PLOT_W}" y2="${y}"/>`);
    out.push(`  <text x="${MARGIN.left - 8}" y="${y}" dy="4" ` +
      `text-anchor="end" font-size="11">${fmt(t)}</text>`);
  }
  out.push(`  <rect x="${MARGIN.left}" y="${MARGIN.top}" width="${PLOT_W}" ` +
    `height="${PLOT_H}" fill="none" stroke="#333333"/>`);
  out.push(`  <text x="${MARGIN.left + PLOT_W / 2}" y="${HEIGHT - 14}" ` +
    `text-anchor="middle" font-size="12">${escapeXml(fig.xLabel)}</text>`);
  out.push(`  <text x="20" y="${MARGIN.top + PLOT_H / 2}" ` +
    `text-anchor="middle" font-size="12" transform="rotate(-90 20 ` +
    `${MARGIN.top + PLOT_H / 2})">${escapeXml(fig.yLabel)}</text>`);

  fig.series.forEach((s, i) => {
    out.push(seriesMarkup(s, PALETTE[i % PALETTE.length], sx, sy));
  });

  const legendX = MARGIN.left + PLOT_W + 16;
  fig.series.forEach((s, i) => {
    const y = MARGIN.top + 10 + i * 18;
    const color = PALETTE[i % PALETTE.length];
    out.push(`  <g class="legend-item">`);
    out.push(`    <line stroke="${color}" stroke-width="2" ` +
      `x1="${legendX}" y1="${y}" x2="${legendX + 22}" y2="${y}"/>`);
    out.push(`    <circle fill="${color}" cx="${legendX + 11}" ` +
      `cy="${y}" r="3"/>`);
    out.push(`    <text x="${legendX + 28}" y="${y}" dy="4" ` +
      `font-size="11">${escapeXml(s.label)}</text>`);
    out.push("  </g>");
  });

  out.push("</svg>");
  return out.join("\n") + "\n";
}

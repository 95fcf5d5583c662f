/**
 * Deterministic SVG chart primitives: no fonts are measured, no timestamps,
 * no randomness, and every coordinate is emitted with fixed precision, so a
 * given input always produces byte-identical output.
 */

export interface Series {
  label: string;
  color: string;
  points: Array<[number, number]>;
  /** draw markers instead of a connected line */
  markers?: boolean;
}

export interface PanelSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  /** x positions marked with a dashed vertical rule (e.g. failure events) */
  marks?: number[];
  markLabel?: string;
}

const WIDTH = 760;
const PANEL_HEIGHT = 300;
const MARGIN = { left: 70, right: 20, top: 36, bottom: 44 };

const fmt = (v: number): string => v.toFixed(2);

function niceTicks(lo: number, hi: number, count = 5): number[] {
  if (!(hi > lo)) {
    const v = lo === 0 ? 1 : Math.abs(lo);
    return [lo - v / 2, lo, lo + v / 2];
  }
  const span = hi - lo;
  const step0 = span / count;
  const mag = Math.pow(10, Math.floor(Math.log10(step0)));
  const candidates = [1, 2, 2.5, 5, 10].map((m) => m * mag);
  const step = candidates.find((c) => span / c <= count) ?? candidates[candidates.length - 1];
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= hi + step * 1e-9; v += step) {
    ticks.push(v);
  }
  return ticks;
}

function tickLabel(v: number): string {
  if (v === 0) return "0";
  const abs = Math.abs(v);
  if (abs >= 10000 || abs < 0.01) return v.toExponential(1);
  return Number(v.toPrecision(4)).toString();
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function panelSvg(spec: PanelSpec, yOffset: number): string {
  const innerW = WIDTH - MARGIN.left - MARGIN.right;
  const innerH = PANEL_HEIGHT - MARGIN.top - MARGIN.bottom;
  const all = spec.series.flatMap((s) => s.points);
  let xLo = 0, xHi = 1, yLo = 0, yHi = 1;
  if (all.length > 0) {
    xLo = Math.min(...all.map((p) => p[0]));
    xHi = Math.max(...all.map((p) => p[0]));
    yLo = Math.min(...all.map((p) => p[1]));
    yHi = Math.max(...all.map((p) => p[1]));
    if (xLo === xHi) { xLo -= 0.5; xHi += 0.5; }
    if (yLo === yHi) { yLo -= Math.abs(yLo) / 2 || 0.5; yHi += Math.abs(yHi) / 2 || 0.5; }
  }
  const sx = (x: number) => MARGIN.left + ((x - xLo) / (xHi - xLo)) * innerW;
  const sy = (y: number) => yOffset + MARGIN.top + innerH - ((y - yLo) / (yHi - yLo)) * innerH;

  const parts: string[] = [];
  parts.push(
    `<rect x="${MARGIN.left}" y="${yOffset + MARGIN.top}" width="${innerW}" height="${innerH}" fill="#fcfcfc" stroke="#9a9a9a" stroke-width="1"/>`
  );
  parts.push(
    `<text x="${WIDTH / 2}" y="${yOffset + 20}" text-anchor="middle" font-family="monospace" font-size="15" fill="#222">${esc(spec.title)}</text>`
  );
  for (const t of niceTicks(yLo, yHi)) {
    const y = sy(t);
    parts.push(
      `<line x1="${MARGIN.left}" y1="${fmt(y)}" x2="${WIDTH - MARGIN.right}" y2="${fmt(y)}" stroke="#e3e3e3" stroke-width="1"/>`
    );
    parts.push(
      `<text x="${MARGIN.left - 6}" y="${fmt(y + 4)}" text-anchor="end" font-family="monospace" font-size="11" fill="#444">${esc(tickLabel(t))}</text>`
    );
  }
  for (const t of niceTicks(xLo, xHi, 6)) {
    const x = sx(t);
    parts.push(
      `<line x1="${fmt(x)}" y1="${yOffset + MARGIN.top + innerH}" x2="${fmt(x)}" y2="${yOffset + MARGIN.top + innerH + 4}" stroke="#9a9a9a" stroke-width="1"/>`
    );
    parts.push(
      `<text x="${fmt(x)}" y="${yOffset + MARGIN.top + innerH + 18}" text-anchor="middle" font-family="monospace" font-size="11" fill="#444">${esc(tickLabel(t))}</text>`
    );
  }
  parts.push(
    `<text x="${WIDTH / 2}" y="${yOffset + PANEL_HEIGHT - 8}" text-anchor="middle" font-family="monospace" font-size="12" fill="#222">${esc(spec.xLabel)}</text>`
  );
  parts.push(
    `<text x="16" y="${yOffset + MARGIN.top + innerH / 2}" text-anchor="middle" font-family="monospace" font-size="12" fill="#222" transform="rotate(-90 16 ${yOffset + MARGIN.top + innerH / 2})">${esc(spec.yLabel)}</text>`
  );

  const marks = (spec.marks ?? []).filter((m) => m >= xLo && m <= xHi);
  for (const m of marks) {
    parts.push(
      `<line x1="${fmt(sx(m))}" y1="${yOffset + MARGIN.top}" x2="${fmt(sx(m))}" y2="${yOffset + MARGIN.top + innerH}" stroke="#c0392b" stroke-width="1" stroke-dasharray="3 3" opacity="0.6"/>`
    );
  }
  if (marks.length > 0 && spec.markLabel) {
    parts.push(
      `<text x="${WIDTH - MARGIN.right - 4}" y="${yOffset + MARGIN.top + 12}" text-anchor="end" font-family="monospace" font-size="11" fill="#c0392b">${esc(spec.markLabel)}</text>`
    );
  }

  spec.series.forEach((s, idx) => {
    if (s.points.length === 0) return;
    if (s.markers || s.points.length === 1) {
      for (const [px, py] of s.points) {
        parts.push(
          `<circle cx="${fmt(sx(px))}" cy="${fmt(sy(py))}" r="3" fill="${s.color}"/>`
        );
      }
    } else {
      const d = s.points
        .map(([px, py], i) => `${i === 0 ? "M" : "L"}${fmt(sx(px))} ${fmt(sy(py))}`)
        .join(" ");
      parts.push(`<path d="${d}" fill="none" stroke="${s.color}" stroke-width="1.5"/>`);
    }
    const lx = MARGIN.left + 10;
    const ly = yOffset + MARGIN.top + 16 + idx * 16;
    parts.push(`<rect x="${lx}" y="${ly - 9}" width="10" height="10" fill="${s.color}"/>`);
    parts.push(
      `<text x="${lx + 16}" y="${ly}" font-family="monospace" font-size="11" fill="#222">${esc(s.label)}</text>`
    );
  });
  return parts.join("\n");
}

export function renderPanels(panels: PanelSpec[]): string {
  const height = PANEL_HEIGHT * panels.length;
  const body = panels.map((p, i) => panelSvg(p, i * PANEL_HEIGHT)).join("\n");
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${height}" viewBox="0 0 ${WIDTH} ${height}">\n` +
    `<rect width="${WIDTH}" height="${height}" fill="white"/>\n${body}\n</svg>\n`
  );
}

export interface Bar {
  label: string;
  value: number;
  color: string;
}

export function renderBars(title: string, yLabel: string, bars: Bar[]): string {
  const innerW = WIDTH - MARGIN.left - MARGIN.right;
  const innerH = PANEL_HEIGHT - MARGIN.top - MARGIN.bottom;
  const parts: string[] = [];
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${innerW}" height="${innerH}" fill="#fcfcfc" stroke="#9a9a9a" stroke-width="1"/>`
  );
  parts.push(
    `<text x="${WIDTH / 2}" y="20" text-anchor="middle" font-family="monospace" font-size="15" fill="#222">${esc(title)}</text>`
  );
  const hi = bars.length > 0 ? Math.max(1e-9, ...bars.map((b) => b.value)) : 1;
  const sy = (v: number) => MARGIN.top + innerH - (v / hi) * innerH;
  for (const t of niceTicks(0, hi)) {
    parts.push(
      `<line x1="${MARGIN.left}" y1="${fmt(sy(t))}" x2="${WIDTH - MARGIN.right}" y2="${fmt(sy(t))}" stroke="#e3e3e3" stroke-width="1"/>`
    );
    parts.push(
      `<text x="${MARGIN.left - 6}" y="${fmt(sy(t) + 4)}" text-anchor="end" font-family="monospace" font-size="11" fill="#444">${esc(tickLabel(t))}</text>`
    );
  }
  const slot = innerW / Math.max(bars.length, 1);
  bars.forEach((bar, i) => {
    const x = MARGIN.left + i * slot + slot * 0.2;
    const w = slot * 0.6;
    const y = sy(bar.value);
    parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(MARGIN.top + innerH - y)}" fill="${bar.color}"/>`
    );
    parts.push(
      `<text x="${fmt(x + w / 2)}" y="${fmt(y - 5)}" text-anchor="middle" font-family="monospace" font-size="11" fill="#222">${esc(bar.value.toFixed(2))}</text>`
    );
    parts.push(
      `<text x="${fmt(x + w / 2)}" y="${MARGIN.top + innerH + 18}" text-anchor="middle" font-family="monospace" font-size="11" fill="#222">${esc(bar.label)}</text>`
    );
  });
  parts.push(
    `<text x="16" y="${MARGIN.top + innerH / 2}" text-anchor="middle" font-family="monospace" font-size="12" fill="#222" transform="rotate(-90 16 ${MARGIN.top + innerH / 2})">${esc(yLabel)}</text>`
  );
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${PANEL_HEIGHT}" viewBox="0 0 ${WIDTH} ${PANEL_HEIGHT}">\n` +
    `<rect width="${WIDTH}" height="${PANEL_HEIGHT}" fill="white"/>\n${parts.join("\n")}\n</svg>\n`
  );
}

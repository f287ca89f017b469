/**
 * Deterministic SVG scene building: linear/log scales, axes, polylines,
 * markers, annotations.  No randomness, no timestamps, fixed coordinate
 * rounding, so identical inputs serialize to identical bytes.
 */

export const WIDTH = 640;
export const HEIGHT = 420;
export const MARGIN = { top: 40, right: 24, bottom: 52, left: 72 };

export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

export interface Scale {
  (value: number): number;
  domain: [number, number];
  log: boolean;
}

// ── Scales and ticks ────────────────────────────────────────────────────────

export function makeScale(domain: [number, number], range: [number, number], log = false): Scale {
  const [d0, d1] = log ? [Math.log10(domain[0]), Math.log10(domain[1])] : domain;
  const span = d1 - d0 || 1;
  const scale = ((value: number) => {
    const v = log ? Math.log10(value) : value;
    return range[0] + ((v - d0) / span) * (range[1] - range[0]);
  }) as Scale;
  scale.domain = domain;
  scale.log = log;
  return scale;
}

/** Tick positions at multiples of a 1/2/5 step covering [lo, hi]. */
export function niceTicks(lo: number, hi: number, count = 5): number[] {
  if (!(hi > lo)) return [lo];
  const raw = (hi - lo) / count;
  const magnitude = Math.pow(10, Math.floor(Math.log10(raw)));
  const residual = raw / magnitude;
  const step = (residual >= 5 ? 10 : residual >= 2 ? 5 : residual >= 1 ? 2 : 1) * magnitude;
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) {
    ticks.push(Number(v.toPrecision(12)));
  }
  return ticks;
}

export function tickLabel(value: number): string {
  if (value === 0) return "0";
  const magnitude = Math.abs(value);
  if (magnitude >= 1e4 || magnitude < 1e-3) return value.toExponential(1).replace("e+", "e");
  return Number(value.toPrecision(6)).toString();
}

/** Pixel coordinate with fixed 2-decimal rounding. */
export function px(value: number): string {
  const rounded = Math.round(value * 100) / 100;
  return Object.is(rounded, -0) ? "0" : String(rounded);
}

// ── Elements ────────────────────────────────────────────────────────────────

export function polyline(points: Array<[number, number]>, stroke: string, dash = ""): string {
  const attr = dash ? ` stroke-dasharray="${dash}"` : "";
  const path = points.map(([x, y]) => `${px(x)},${px(y)}`).join(" ");
  return `<polyline fill="none" stroke="${stroke}" stroke-width="1.5"${attr} points="${path}"/>`;
}

export function circle(x: number, y: number, fill: string, r = 3): string {
  return `<circle cx="${px(x)}" cy="${px(y)}" r="${r}" fill="${fill}"/>`;
}

export function line(x1: number, y1: number, x2: number, y2: number, stroke: string): string {
  return `<line x1="${px(x1)}" y1="${px(y1)}" x2="${px(x2)}" y2="${px(y2)}" stroke="${stroke}"/>`;
}

export function text(x: number, y: number, content: string, anchor = "start", fill = "#000"): string {
  return (
    `<text x="${px(x)}" y="${px(y)}" text-anchor="${anchor}" fill="${fill}" ` +
    `font-family="sans-serif" font-size="12">${escapeXml(content)}</text>`
  );
}

export function rect(x: number, y: number, w: number, h: number, fill: string): string {
  return `<rect x="${px(x)}" y="${px(y)}" width="${px(w)}" height="${px(h)}" fill="${fill}"/>`;
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

// ── Axes and document frame ─────────────────────────────────────────────────

export function axes(x: Scale, y: Scale, xLabel: string, yLabel: string): string[] {
  const left = MARGIN.left;
  const right = WIDTH - MARGIN.right;
  const top = MARGIN.top;
  const bottom = HEIGHT - MARGIN.bottom;
  const parts: string[] = [
    line(left, bottom, right, bottom, "#333"),
    line(left, top, left, bottom, "#333"),
  ];
  const xTicks = x.log
    ? niceTicks(Math.log10(x.domain[0]), Math.log10(x.domain[1])).map((t) => Math.pow(10, t))
    : niceTicks(x.domain[0], x.domain[1]);
  for (const t of xTicks) {
    const cx = x(t);
    parts.push(line(cx, bottom, cx, bottom + 5, "#333"));
    parts.push(text(cx, bottom + 18, tickLabel(Number(t.toPrecision(3))), "middle"));
  }
  const yTicks = y.log
    ? niceTicks(Math.log10(y.domain[0]), Math.log10(y.domain[1])).map((t) => Math.pow(10, t))
    : niceTicks(y.domain[0], y.domain[1]);
  for (const t of yTicks) {
    const cy = y(t);
    parts.push(line(left - 5, cy, left, cy, "#333"));
    parts.push(text(left - 8, cy + 4, tickLabel(Number(t.toPrecision(3))), "end"));
  }
  parts.push(text((left + right) / 2, HEIGHT - 14, xLabel, "middle"));
  parts.push(
    `<text x="16" y="${px((top + bottom) / 2)}" text-anchor="middle" fill="#000" ` +
      `font-family="sans-serif" font-size="12" transform="rotate(-90 16 ${px((top + bottom) / 2)})">` +
      `${yLabel}</text>`,
  );
  return parts;
}

export function document(title: string, body: string[]): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">`,
    rect(0, 0, WIDTH, HEIGHT, "#fff"),
    text(WIDTH / 2, 22, title, "middle"),
    ...body,
    "</svg>",
    "",
  ].join("\n");
}

/** Pad a data interval so points sit off the frame; degenerate spans widen. */
export function padded(lo: number, hi: number, frac = 0.06): [number, number] {
  if (!(hi > lo)) {
    const pad = Math.abs(lo) * frac || 1;
    return [lo - pad, hi + pad];
  }
  const pad = (hi - lo) * frac;
  return [lo - pad, hi + pad];
}

/**
 * Four figure kinds over the sampler CLI's CSV artifacts:
 *
 *   order_fit — log-log error-vs-h scatter per metric with the fitted slope
 *               annotated from the csv (not refitted here);
 *   per_step  — tau and surrogate-error curves over solver steps with the
 *               phase windows shaded;
 *   cosine    — consecutive-step guidance-delta cosine similarity;
 *   frontier  — evaluation count vs mean terminal log-density, one polyline
 *               per sampler variant with standard-error whiskers.
 *
 * Rendering is pure string building; identical csv bytes give identical svg
 * bytes.  Schema violations throw naming the missing column.
 */

import * as fs from "fs";

import { CsvTable, numericCell, parseCsv, requireColumns, requiredCell } from "./csv.js";
import {
  HEIGHT,
  MARGIN,
  PALETTE,
  Scale,
  WIDTH,
  axes,
  circle,
  document,
  line,
  makeScale,
  padded,
  polyline,
  rect,
  text,
} from "./svg.js";

export type PlotKind = "order_fit" | "per_step" | "frontier" | "cosine";

export const PLOT_KINDS: PlotKind[] = ["order_fit", "per_step", "frontier", "cosine"];

export interface PlotSpec {
  inputCsv: string;
  plotKind: PlotKind;
  output: string;
}

const LEFT = MARGIN.left;
const RIGHT = WIDTH - MARGIN.right;
const TOP = MARGIN.top;
const BOTTOM = HEIGHT - MARGIN.bottom;

function xScale(domain: [number, number], log = false): Scale {
  return makeScale(domain, [LEFT, RIGHT], log);
}

function yScale(domain: [number, number], log = false): Scale {
  return makeScale(domain, [BOTTOM, TOP], log);
}

/** Rows grouped by a key column, groups in first-appearance order. */
function groupBy(table: CsvTable, column: string): Map<string, Record<string, string>[]> {
  const groups = new Map<string, Record<string, string>[]>();
  for (const row of table.rows) {
    const key = row[column] ?? "";
    if (!groups.has(key)) groups.set(key, []);
    groups.get(key)!.push(row);
  }
  return groups;
}

// ── order_fit ───────────────────────────────────────────────────────────────

function renderOrderFit(table: CsvTable): string {
  requireColumns(table, ["h", "error", "slope", "r_squared", "metric"], "order_fit");
  const groups = groupBy(table, "metric");
  const hs: number[] = [];
  const errors: number[] = [];
  for (const row of table.rows) {
    const h = requiredCell(row, "h");
    const error = requiredCell(row, "error");
    if (h <= 0 || error <= 0) {
      throw new Error("order_fit plot needs positive h and error values for log-log axes");
    }
    hs.push(h);
    errors.push(error);
  }
  // Log axes pad multiplicatively so endpoints sit off the frame.
  const lx = xScale([Math.min(...hs) / 1.3, Math.max(...hs) * 1.3], true);
  const ly = yScale([Math.min(...errors) / 1.6, Math.max(...errors) * 1.6], true);
  const body = axes(lx, ly, "step size h", "error");
  let index = 0;
  for (const [metric, rows] of groups) {
    const color = PALETTE[index % PALETTE.length]!;
    const slope = requiredCell(rows[0]!, "slope");
    const pts = rows
      .map((row) => [requiredCell(row, "h"), requiredCell(row, "error")] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    // Guide line with the csv slope through the smallest-h point.
    const [h0, e0] = pts[0]!;
    const guide = pts.map(
      ([h]) => [lx(h), ly(e0 * Math.pow(h / h0, slope))] as [number, number],
    );
    body.push(polyline(guide, color, "4 3"));
    for (const [h, e] of pts) body.push(circle(lx(h), ly(e), color));
    body.push(
      text(RIGHT - 8, TOP + 16 + 16 * index, `${metric}: slope=${slope.toFixed(2)}`, "end", color),
    );
    index += 1;
  }
  return document("error order fit (log-log)", body);
}

// ── per_step ────────────────────────────────────────────────────────────────

const PHASE_FILL: Record<string, string> = { warmup: "#efefef", zigzag: "#fdf3dc" };

function renderPerStep(table: CsvTable): string {
  requireColumns(table, ["step", "t", "tau_norm", "e_tss", "phase"], "per_step");
  if (table.rows.length === 0) throw new Error("per_step plot needs at least one row");
  const steps = table.rows.map((row) => requiredCell(row, "step"));
  const taus = table.rows.map((row) => requiredCell(row, "tau_norm"));
  const etss = table.rows.map((row) => numericCell(row, "e_tss"));
  const present = etss.filter((v): v is number => v !== null);
  const top = Math.max(...taus, ...(present.length > 0 ? present : [0]));
  const x = xScale(padded(steps[0]!, steps[steps.length - 1]!) as [number, number]);
  // An all-zero track (implicit variant) still needs a visible baseline.
  const y = yScale([0, top > 0 ? top * 1.08 : 1]);
  const body: string[] = [];
  // Phase bands behind the curves, one rect per run of equal labels.
  let runStart = 0;
  for (let i = 1; i <= table.rows.length; i += 1) {
    const phase = table.rows[runStart]!["phase"];
    if (i === table.rows.length || table.rows[i]!["phase"] !== phase) {
      const fill = PHASE_FILL[phase ?? ""];
      if (fill) {
        const x0 = x(steps[runStart]! - 0.5);
        const x1 = x(steps[i - 1]! + 0.5);
        body.push(rect(x0, TOP, x1 - x0, BOTTOM - TOP, fill));
      }
      runStart = i;
    }
  }
  body.push(...axes(x, y, "step", "norm"));
  body.push(polyline(steps.map((s, i) => [x(s), y(taus[i]!)] as [number, number]), PALETTE[0]!));
  // Surrogate error is only defined where a fresh cache existed; draw the
  // defined segments and skip the gaps.
  let segment: Array<[number, number]> = [];
  for (let i = 0; i <= steps.length; i += 1) {
    const value = i < steps.length ? etss[i]! : null;
    if (value === null) {
      if (segment.length > 1) body.push(polyline(segment, PALETTE[1]!, "5 3"));
      segment = [];
    } else {
      segment.push([x(steps[i]!), y(value)]);
    }
  }
  body.push(text(RIGHT - 8, TOP + 16, "tau_norm", "end", PALETTE[0]!));
  body.push(text(RIGHT - 8, TOP + 32, "e_tss", "end", PALETTE[1]!));
  return document("per-step inversion gap and surrogate error", body);
}

// ── cosine ──────────────────────────────────────────────────────────────────

function renderCosine(table: CsvTable): string {
  requireColumns(table, ["step", "cos_sim"], "cosine");
  const pts: Array<[number, number]> = [];
  for (const row of table.rows) {
    const value = numericCell(row, "cos_sim");
    if (value !== null) pts.push([requiredCell(row, "step"), value]);
  }
  if (pts.length === 0) throw new Error("cosine plot has no defined cos_sim cells to draw");
  const x = xScale(padded(pts[0]![0], pts[pts.length - 1]![0]) as [number, number]);
  const ys = pts.map(([, v]) => v);
  const y = yScale(padded(Math.min(...ys), Math.max(...ys, 1)) as [number, number]);
  const body = axes(x, y, "step", "cosine similarity of consecutive deltas");
  body.push(polyline(pts.map(([s, v]) => [x(s), y(v)] as [number, number]), PALETTE[0]!));
  for (const [s, v] of pts) body.push(circle(x(s), y(v), PALETTE[0]!, 2));
  return document("guidance-delta direction stability", body);
}

// ── frontier ────────────────────────────────────────────────────────────────

function renderFrontier(table: CsvTable): string {
  requireColumns(
    table,
    ["variant", "parameter", "value", "nfe", "mean_log_density", "se_log_density", "runs"],
    "frontier",
  );
  if (table.rows.length === 0) throw new Error("frontier plot needs at least one row");
  const groups = groupBy(table, "variant");
  const nfes = table.rows.map((row) => requiredCell(row, "nfe"));
  const lows = table.rows.map(
    (row) => requiredCell(row, "mean_log_density") - requiredCell(row, "se_log_density"),
  );
  const highs = table.rows.map(
    (row) => requiredCell(row, "mean_log_density") + requiredCell(row, "se_log_density"),
  );
  const x = xScale(padded(Math.min(...nfes), Math.max(...nfes)) as [number, number]);
  const y = yScale(padded(Math.min(...lows), Math.max(...highs)) as [number, number]);
  const body = axes(x, y, "field evaluations (NFE)", "mean terminal log-density");
  let index = 0;
  for (const [variant, rows] of groups) {
    const color = PALETTE[index % PALETTE.length]!;
    const pts = rows.map(
      (row) =>
        [
          requiredCell(row, "nfe"),
          requiredCell(row, "mean_log_density"),
          requiredCell(row, "se_log_density"),
        ] as [number, number, number],
    );
    body.push(polyline(pts.map(([n, m]) => [x(n), y(m)] as [number, number]), color));
    for (const [n, m, se] of pts) {
      body.push(line(x(n), y(m - se), x(n), y(m + se), color));
      body.push(circle(x(n), y(m), color));
    }
    body.push(text(RIGHT - 8, TOP + 16 + 16 * index, variant, "end", color));
    index += 1;
  }
  return document("quality-efficiency frontier", body);
}

// ── Entry points ────────────────────────────────────────────────────────────

export function renderText(kind: PlotKind, csvText: string): string {
  const table = parseCsv(csvText);
  switch (kind) {
    case "order_fit":
      return renderOrderFit(table);
    case "per_step":
      return renderPerStep(table);
    case "cosine":
      return renderCosine(table);
    case "frontier":
      return renderFrontier(table);
  }
}

export function render(spec: PlotSpec): void {
  const csvText = fs.readFileSync(spec.inputCsv, "utf8");
  const svg = renderText(spec.plotKind, csvText);
  fs.writeFileSync(spec.output, svg);
}

/**
 * Strict CSV access for the sampler CLI's artifacts.
 *
 * All artifacts share a fixed column layout; a plot kind declares the columns
 * it needs and parsing fails by naming the first missing one.  Cell
 * conventions mirror the writer: empty string means "not applicable to this
 * row", the literal "undefined" means "the defining expression has no value"
 * (cosine similarity against a zero vector).  Both read back as null.
 */

import Papa from "papaparse";

export interface CsvTable {
  columns: string[];
  rows: Record<string, string>[];
}

export function parseCsv(text: string): CsvTable {
  if (text.trim() === "") {
    throw new Error("csv has no header row");
  }
  const parsed = Papa.parse<Record<string, string>>(text, {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0]!;
    throw new Error(`csv parse error at row ${first.row ?? "?"}: ${first.message}`);
  }
  const columns = parsed.meta.fields ?? [];
  if (columns.length === 0) {
    throw new Error("csv has no header row");
  }
  return { columns, rows: parsed.data };
}

export function requireColumns(table: CsvTable, required: string[], kind: string): void {
  for (const column of required) {
    if (!table.columns.includes(column)) {
      throw new Error(
        `${kind} plot requires column "${column}"; csv has columns [${table.columns.join(", ")}]`,
      );
    }
  }
}

/** Numeric cell or null for the empty / "undefined" markers. */
export function numericCell(row: Record<string, string>, column: string): number | null {
  const raw = row[column];
  if (raw === undefined || raw === "" || raw === "undefined") return null;
  const value = Number(raw);
  if (!Number.isFinite(value)) {
    throw new Error(`column "${column}" holds non-numeric cell "${raw}"`);
  }
  return value;
}

/** Numeric cell that must be present on every row. */
export function requiredCell(row: Record<string, string>, column: string): number {
  const value = numericCell(row, column);
  if (value === null) {
    throw new Error(`column "${column}" has an empty cell where a value is required`);
  }
  return value;
}

export { parseCsv, requireColumns, numericCell, requiredCell } from "./csv.js";
export type { CsvTable } from "./csv.js";
export { render, renderText, PLOT_KINDS } from "./plots.js";
export type { PlotKind, PlotSpec } from "./plots.js";

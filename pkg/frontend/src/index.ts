import * as fs from "node:fs";
import * as path from "node:path";

import { readLearning, readSummary } from "./csv.js";
import { buildFigures, FIGURE_IDS } from "./figures.js";
import { renderSvg } from "./svg.js";

export { FIGURE_IDS } from "./figures.js";
export { MissingColumnError } from "./csv.js";

export interface RenderReport {
  written: string[];
  warnings: string[];
}

/** Renders one SVG per figure that has data, reading only the summary CSVs. */
export function renderAll(
  summaryDir: string,
  outDir: string,
  figs?: string[],
): RenderReport {
  const summary = readSummary(summaryDir);
  const learning = readLearning(summaryDir);
  const { figures, warnings } = buildFigures(summary, learning, figs);
  fs.mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  for (const fig of figures) {
    const file = path.join(outDir, `${fig.id}.svg`);
    fs.writeFileSync(file, renderSvg(fig));
    written.push(file);
  }
  return { written, warnings };
}

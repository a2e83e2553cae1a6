#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { renderAll } from "./index.js";

yargs(hideBin(process.argv))
  .command(
    "render",
    "render figure SVGs from experiment summary CSVs",
    (y) => y
      .option("summary", {
        type: "string",
        demandOption: true,
        describe: "directory containing summary.csv (and learning_summary.csv)",
      })
      .option("out", {
        type: "string",
        demandOption: true,
        describe: "output directory for the SVG files",
      })
      .option("figs", {
        type: "string",
        describe: "comma-separated figure ids (default: all)",
      }),
    (argv) => {
      const figs = argv.figs
        ? argv.figs.split(",").map((s) => s.trim()).filter((s) => s)
        : undefined;
      const report = renderAll(argv.summary, argv.out, figs);
      for (const warning of report.warnings) {
        console.error(`warning: ${warning}`);
      }
      for (const file of report.written) {
        console.log(file);
      }
    })
  .demandCommand(1)
  .strict()
  .fail((msg, err) => {
    console.error(`error: ${err ? err.message : msg}`);
    process.exit(2);
  })
  .parse();

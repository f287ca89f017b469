#!/usr/bin/env node
/**
 * z2-plots render --csv <path> --kind <order_fit|per_step|frontier|cosine> --out <path>
 *
 * Reads one CSV artifact written by the sampler CLI and writes one SVG.
 * Exit 0 on success, 1 on any error (missing file, schema mismatch).
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { PLOT_KINDS, PlotKind, render } from "./plots.js";

export async function main(argv: string[]): Promise<number> {
  let failed = false;
  const parser = yargs(argv)
    .scriptName("z2-plots")
    .command(
      "render",
      "render one csv artifact to svg",
      (cmd) =>
        cmd
          .option("csv", { type: "string", demandOption: true, describe: "input csv path" })
          .option("kind", {
            type: "string",
            demandOption: true,
            choices: PLOT_KINDS,
            describe: "plot kind",
          })
          .option("out", { type: "string", demandOption: true, describe: "output svg path" }),
      (args) => {
        try {
          render({ inputCsv: args.csv, plotKind: args.kind as PlotKind, output: args.out });
          console.log(`wrote ${args.out}`);
        } catch (error) {
          console.error(`render failed: ${error instanceof Error ? error.message : error}`);
          failed = true;
        }
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(msg ?? err?.message);
      failed = true;
    })
    .exitProcess(false);
  await parser.parseAsync();
  return failed ? 1 : 0;
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js") ?? false;
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}

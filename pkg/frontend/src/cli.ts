#!/usr/bin/env node
/** embed-extract CLI.
 *
 *   extract --dataset <path> --source <name> --layers <spec> --out <dir>
 *
 * Sources: contextual-deep (12 layers), contextual-3layer (3), static (1).
 * Layer spec: "all" (default), inclusive range "0-3", or list "0,2,5".
 */

import { SOURCES } from "./encoders";
import { runExtraction } from "./extract";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new Error(`expected --flag value pairs, got ${JSON.stringify(argv.slice(i))}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function usage(): string {
  return [
    "usage: embed-extract extract --dataset <path> --source <name> [--layers <spec>] --out <dir>",
    `  sources: ${SOURCES.join(", ")}`,
    '  layers: "all" (default), inclusive range like "0-3", or list like "0,2,5"',
  ].join("\n");
}

export function main(argv: string[]): number {
  if (argv.length === 0 || argv[0] === "--help" || argv[0] === "-h") {
    console.log(usage());
    return argv.length === 0 ? 2 : 0;
  }
  if (argv[0] !== "extract") {
    console.error(`unknown command ${JSON.stringify(argv[0])}\n${usage()}`);
    return 2;
  }
  try {
    const flags = parseFlags(argv.slice(1));
    for (const needed of ["dataset", "source", "out"]) {
      if (!flags.has(needed)) throw new Error(`missing --${needed}\n${usage()}`);
    }
    const report = runExtraction({
      datasetPath: flags.get("dataset")!,
      source: flags.get("source")!,
      layers: flags.get("layers") ?? "all",
      outDir: flags.get("out")!,
    });
    console.log(
      `wrote ${report.records} records (${report.texts} texts, layers [${report.layerIndices.join(", ")}]) to ${report.outDir}`
    );
    console.log(`alignment-flagged records: ${report.flagged}`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}

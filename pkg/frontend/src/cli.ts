#!/usr/bin/env node
/**
 * plot --kind <loss|relerr|throughput> --in <dir> --out <file.svg>
 *
 * Exit codes: 0 ok, 1 malformed input (with a file:line diagnostic),
 * 2 usage error.
 */

import * as fs from "fs";
import * as path from "path";

import { ParseError } from "./csv";
import { FigureKind, renderFigure } from "./figures";

interface Args {
  kind: FigureKind;
  inputDir: string;
  outputPath: string;
}

const KINDS: FigureKind[] = ["loss", "relerr", "throughput"];

function usage(): never {
  process.stderr.write(
    "usage: plot --kind <loss|relerr|throughput> --in <dir> --out <file.svg>\n"
  );
  process.exit(2);
}

function parseArgs(argv: string[]): Args {
  const values: Record<string, string> = {};
  let positional = argv;
  if (positional[0] === "plot") {
    positional = positional.slice(1);
  }
  for (let i = 0; i < positional.length; i += 2) {
    const flag = positional[i];
    const value = positional[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      usage();
    }
    values[flag.slice(2)] = value;
  }
  const kind = values["kind"] as FigureKind;
  if (!KINDS.includes(kind) || !values["in"] || !values["out"]) {
    usage();
  }
  return { kind, inputDir: values["in"], outputPath: values["out"] };
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  if (!fs.existsSync(args.inputDir)) {
    process.stderr.write(`input directory does not exist: ${args.inputDir}\n`);
    return 2;
  }
  let svg: string;
  try {
    svg = renderFigure({
      kind: args.kind,
      inputDir: args.inputDir,
      outputPath: args.outputPath,
    });
  } catch (err) {
    if (err instanceof ParseError) {
      const source =
        args.kind === "throughput" ? "timeline csv" : path.join(args.inputDir, "metrics.csv");
      process.stderr.write(`${source}:${err.line}: ${err.message}\n`);
    } else {
      process.stderr.write(`${(err as Error).message}\n`);
    }
    return 1;
  }
  if (fs.existsSync(args.outputPath)) {
    process.stderr.write(`warning: overwriting ${args.outputPath}\n`);
  }
  fs.mkdirSync(path.dirname(path.resolve(args.outputPath)), { recursive: true });
  fs.writeFileSync(args.outputPath, svg, "utf-8");
  return 0;
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}

/** Regenerate the golden SVGs from the committed fixtures. */

import * as fs from "fs";
import * as path from "path";

import { renderFigure } from "../src/figures";

const testDir = path.resolve(__dirname, "..", "..", "test");
const fixtures = path.join(testDir, "fixtures");
const golden = path.join(testDir, "golden");

fs.mkdirSync(golden, { recursive: true });
const targets: Array<["loss" | "relerr" | "throughput", string, string]> = [
  ["loss", "run_loss", "loss.svg"],
  ["relerr", "run_relerr", "relerr.svg"],
  ["relerr", "run_relerr_norho2", "relerr_norho2.svg"],
  ["loss", "run_empty", "loss_empty.svg"],
  ["throughput", "run_throughput", "throughput.svg"],
];
for (const [kind, dir, out] of targets) {
  const svg = renderFigure({
    kind,
    inputDir: path.join(fixtures, dir),
    outputPath: "unused",
  });
  fs.writeFileSync(path.join(golden, out), svg, "utf-8");
  process.stdout.write(`wrote ${out} (${svg.length} bytes)\n`);
}

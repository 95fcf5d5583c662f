import assert from "node:assert/strict";
import * as fs from "node:fs";
import * as path from "node:path";
import { test } from "node:test";

import { renderFigure, FigureKind } from "../src/figures";

const testDir = path.resolve(__dirname, "..", "..", "test");
const fixtures = path.join(testDir, "fixtures");
const golden = path.join(testDir, "golden");

function render(kind: FigureKind, dir: string): string {
  return renderFigure({ kind, inputDir: path.join(fixtures, dir), outputPath: "unused" });
}

const GOLDENS: Array<[FigureKind, string, string]> = [
  ["loss", "run_loss", "loss.svg"],
  ["relerr", "run_relerr", "relerr.svg"],
  ["relerr", "run_relerr_norho2", "relerr_norho2.svg"],
  ["loss", "run_empty", "loss_empty.svg"],
  ["throughput", "run_throughput", "throughput.svg"],
];

for (const [kind, dir, file] of GOLDENS) {
  test(`golden: ${file} is byte-identical`, () => {
    const expected = fs.readFileSync(path.join(golden, file), "utf-8");
    assert.equal(render(kind, dir), expected);
  });
}

test("rendering twice is byte-identical", () => {
  assert.equal(render("loss", "run_loss"), render("loss", "run_loss"));
});

test("header-only metrics render a valid empty figure", () => {
  const svg = render("loss", "run_empty");
  assert.match(svg, /^<svg /);
  assert.match(svg, /<\/svg>\n$/);
  assert.doesNotMatch(svg, /<path /);
});

test("missing rho2 values omit the full-batch series", () => {
  const withRho2 = render("relerr", "run_relerr");
  const without = render("relerr", "run_relerr_norho2");
  assert.match(withRho2, /full-batch/);
  assert.doesNotMatch(without, /full-batch/);
});

test("throughput bars carry one bar per timeline file", () => {
  const svg = render("throughput", "run_throughput");
  for (const label of ["approx", "naive", "checkpoint"]) {
    assert.match(svg, new RegExp(label));
  }
});

test("failure events draw dashed markers on the loss panel", () => {
  const withEvents = render("loss", "run_loss");
  assert.match(withEvents, /stroke-dasharray="3 3"/);
  assert.match(withEvents, /node failures/);
  const withoutEvents = render("loss", "run_relerr"); // same csv, no events.jsonl
  assert.doesNotMatch(withoutEvents, /node failures/);
});

test("constant-zero rho1 renders as a flat line", () => {
  const dir = fs.mkdtempSync(path.join(require("node:os").tmpdir(), "flat-"));
  const header = "iteration,loss,perplexity,rho1,rho2,lr,sim_time_s,affected_ranks";
  const rows = [header];
  for (let i = 0; i < 10; i++) {
    rows.push(`${i},2.0,7.389,0.0,,0.001,${i + 1},0`);
  }
  fs.writeFileSync(path.join(dir, "metrics.csv"), rows.join("\n") + "\n");
  const svg = renderFigure({ kind: "relerr", inputDir: dir, outputPath: "unused" });
  const match = svg.match(/<path d="([^"]+)"/);
  assert.ok(match, "expected a rho1 path");
  const ys = new Set(
    match![1].split(" ").filter((_, i) => i % 2 === 1)
  );
  assert.equal(ys.size, 1, "flat series must keep one y coordinate");
});

test("inputs are never mutated", () => {
  const file = path.join(fixtures, "run_loss", "metrics.csv");
  const before = fs.readFileSync(file, "utf-8");
  render("loss", "run_loss");
  render("relerr", "run_loss");
  assert.equal(fs.readFileSync(file, "utf-8"), before);
});

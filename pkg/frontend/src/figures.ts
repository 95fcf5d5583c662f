/**
 * Figure builders: each consumes files from a run directory (the simulator's
 * documented formats) and returns a complete SVG string.
 */

import * as fs from "fs";
import * as path from "path";

import { renderBars, renderPanels } from "./chart";
import { parseCsv, parseEventsJsonl, seriesOf, Table } from "./csv";

export type FigureKind = "loss" | "relerr" | "throughput";

export interface FigureSpec {
  kind: FigureKind;
  inputDir: string;
  outputPath: string;
  title?: string;
}

const METRICS_REQUIRED = ["iteration", "loss"];
const TIMELINE_REQUIRED = ["iteration", "degradation_pct"];

function readMetrics(dir: string): Table {
  const file = path.join(dir, "metrics.csv");
  return parseCsv(fs.readFileSync(file, "utf-8"), METRICS_REQUIRED);
}

/** Iterations at which a node failed, from events.jsonl when present. */
function failureMarks(dir: string): number[] {
  const file = path.join(dir, "events.jsonl");
  if (!fs.existsSync(file)) {
    return [];
  }
  return parseEventsJsonl(fs.readFileSync(file, "utf-8"))
    .filter((ev) => ev.kind === "fail")
    .map((ev) => ev.iteration);
}

export function lossFigure(dir: string, title = "training loss"): string {
  const table = readMetrics(dir);
  return renderPanels([
    {
      title,
      xLabel: "iteration",
      yLabel: "loss",
      series: [
        { label: "loss", color: "#1f6fb4", points: seriesOf(table, "iteration", "loss") },
      ],
      marks: failureMarks(dir),
      markLabel: "node failures",
    },
    {
      title: "perplexity",
      xLabel: "iteration",
      yLabel: "perplexity",
      series: [
        {
          label: "perplexity",
          color: "#b44a1f",
          points: seriesOf(table, "iteration", "perplexity"),
        },
      ],
    },
  ]);
}

export function relerrFigure(dir: string, title = "gradient relative error"): string {
  const table = readMetrics(dir);
  const rho1 = seriesOf(table, "iteration", "rho1");
  const rho2 = seriesOf(table, "iteration", "rho2");
  const series = [
    { label: "single-batch (rho1)", color: "#2b7a2b", points: rho1 },
  ];
  if (rho2.length > 0) {
    series.push({
      label: "full-batch (rho2)",
      color: "#7a2b7a",
      points: rho2,
      markers: true,
    } as (typeof series)[number]);
  }
  return renderPanels([
    { title, xLabel: "iteration", yLabel: "squared relative error", series },
  ]);
}

const BAR_COLORS = ["#1f6fb4", "#b44a1f", "#2b7a2b", "#7a2b7a", "#8a8a1f", "#1f8a8a"];

export function throughputFigure(dir: string, title = "throughput degradation"): string {
  const files = fs
    .readdirSync(dir)
    .filter((f) => f.startsWith("timeline") && f.endsWith(".csv"))
    .sort();
  const bars = files.map((file, i) => {
    const table = parseCsv(fs.readFileSync(path.join(dir, file), "utf-8"), TIMELINE_REQUIRED);
    const series = seriesOf(table, "iteration", "degradation_pct");
    const last = series.length > 0 ? series[series.length - 1][1] : 0;
    return {
      label: file.replace(/^timeline[._-]?/, "").replace(/\.csv$/, "") || "run",
      value: last,
      color: BAR_COLORS[i % BAR_COLORS.length],
    };
  });
  if (files.length === 0) {
    throw new Error(`no timeline*.csv files in ${dir}`);
  }
  return renderBars(title, "degradation vs fault-free (%)", bars);
}

export function renderFigure(spec: FigureSpec): string {
  switch (spec.kind) {
    case "loss":
      return lossFigure(spec.inputDir, spec.title ?? "training loss");
    case "relerr":
      return relerrFigure(spec.inputDir, spec.title ?? "gradient relative error");
    case "throughput":
      return throughputFigure(spec.inputDir, spec.title ?? "throughput degradation");
  }
}

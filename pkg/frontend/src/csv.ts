/**
 * Strict CSV / JSONL readers for the simulator's output files.
 *
 * Values are plain numbers; empty cells are null (optional probes). Any
 * structural problem raises ParseError carrying a 1-based line number so the
 * CLI can print `file:line: message` diagnostics.
 */

export class ParseError extends Error {
  constructor(public readonly line: number, message: string) {
    super(message);
    this.name = "ParseError";
  }
}

export type Row = Record<string, number | null>;

export interface Table {
  columns: string[];
  rows: Row[];
}

export function parseCsv(text: string, requiredColumns: string[]): Table {
  const lines = text.split(/\r?\n/);
  if (lines.length > 0 && lines[lines.length - 1] === "") {
    lines.pop();
  }
  if (lines.length === 0) {
    throw new ParseError(1, "empty file: expected a header row");
  }
  const columns = lines[0].split(",").map((c) => c.trim());
  for (const required of requiredColumns) {
    if (!columns.includes(required)) {
      throw new ParseError(1, `missing required column '${required}' in header`);
    }
  }
  const rows: Row[] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i].split(",");
    if (cells.length !== columns.length) {
      throw new ParseError(
        i + 1,
        `expected ${columns.length} fields, found ${cells.length}`
      );
    }
    const row: Row = {};
    for (let j = 0; j < columns.length; j++) {
      const cell = cells[j].trim();
      if (cell === "") {
        row[columns[j]] = null;
        continue;
      }
      const value = Number(cell);
      if (!Number.isFinite(value)) {
        throw new ParseError(i + 1, `field '${columns[j]}' is not a number: '${cell}'`);
      }
      row[columns[j]] = value;
    }
    rows.push(row);
  }
  return { columns, rows };
}

export interface ClusterEvent {
  time: number;
  iteration: number;
  kind: string;
  node: [number, number];
  details: Record<string, unknown>;
}

export function parseEventsJsonl(text: string): ClusterEvent[] {
  const events: ClusterEvent[] = [];
  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") {
      continue;
    }
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch {
      throw new ParseError(i + 1, "invalid JSON");
    }
    const ev = obj as Partial<ClusterEvent>;
    if (
      typeof ev.time !== "number" ||
      typeof ev.iteration !== "number" ||
      typeof ev.kind !== "string"
    ) {
      throw new ParseError(i + 1, "event is missing time/iteration/kind");
    }
    events.push(ev as ClusterEvent);
  }
  return events;
}

/** Numeric series for one column, keeping only rows where it is present. */
export function seriesOf(table: Table, xCol: string, yCol: string): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  if (!table.columns.includes(yCol)) {
    return out;
  }
  for (const row of table.rows) {
    const x = row[xCol];
    const y = row[yCol];
    if (x !== null && x !== undefined && y !== null && y !== undefined) {
      out.push([x, y]);
    }
  }
  return out;
}

/**
 * Event-file helpers matching the core's CSV format: a header line of
 * observable names, comma-separated numeric rows, '#' comment lines.
 */

import { readFile } from "node:fs/promises";

export interface EventTable {
  columns: string[];
  rows: number[][];
}

export function parseEventsCsv(text: string): EventTable {
  let columns: string[] | null = null;
  const rows: number[][] = [];
  for (const rawLine of text.split("\n")) {
    const line = rawLine.trim();
    if (!line || line.startsWith("#")) {
      continue;
    }
    if (columns === null) {
      columns = line.split(",").map((c) => c.trim());
      continue;
    }
    const fields = line.split(",");
    if (fields.length !== columns.length) {
      throw new Error(`row has ${fields.length} fields, header has ${columns.length}`);
    }
    const row = fields.map((f) => {
      const v = Number(f);
      if (Number.isNaN(v)) {
        throw new Error(`not a number: ${f}`);
      }
      return v;
    });
    rows.push(row);
  }
  if (columns === null) {
    throw new Error("event file has no header line");
  }
  return { columns, rows };
}

export async function readEventsCsv(path: string): Promise<EventTable> {
  return parseEventsCsv(await readFile(path, "utf-8"));
}

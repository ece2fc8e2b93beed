import { readFileSync, renameSync, writeFileSync } from "node:fs";

import { SchemaViolation } from "./errors.js";

export function readJsonl(path: string): Array<{ lineno: number; obj: Record<string, unknown> }> {
  const out: Array<{ lineno: number; obj: Record<string, unknown> }> = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    const trimmed = line.trim();
    if (!trimmed) return;
    let parsed: unknown;
    try {
      parsed = JSON.parse(trimmed);
    } catch (error) {
      throw new SchemaViolation(`${path}:${index + 1}: invalid JSON: ${(error as Error).message}`);
    }
    if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
      throw new SchemaViolation(`${path}:${index + 1}: expected a JSON object`);
    }
    out.push({ lineno: index + 1, obj: parsed as Record<string, unknown> });
  });
  return out;
}

export function writeJsonl(path: string, rows: object[]): void {
  const text = rows.map((row) => JSON.stringify(row)).join("\n") + (rows.length ? "\n" : "");
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, text, "utf-8");
  renameSync(tmp, path);
}

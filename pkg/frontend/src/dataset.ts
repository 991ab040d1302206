/** Canonical dataset JSONL: one query per line with candidate documents. */

import { readFileSync } from "node:fs";

export interface TextEntry {
  id: string;
  tokens: string[];
}

interface RawCandidate {
  doc_id: string;
  tokens: string[];
  label: number;
}

interface RawQuery {
  query_id: string;
  query_tokens: string[];
  candidates: RawCandidate[];
}

/** Every distinct text (queries and candidates) in file order. */
export function readDatasetTexts(path: string): TextEntry[] {
  const seen = new Map<string, string[]>();
  const order: TextEntry[] = [];
  const add = (id: string, tokens: string[], where: string) => {
    if (!id || tokens.length === 0) {
      throw new Error(`${where}: empty id or token list`);
    }
    const prev = seen.get(id);
    if (prev === undefined) {
      seen.set(id, tokens);
      order.push({ id, tokens });
    } else if (JSON.stringify(prev) !== JSON.stringify(tokens)) {
      throw new Error(`${where}: id ${JSON.stringify(id)} reused with different tokens`);
    }
  };
  const lines = readFileSync(path, "utf8").split("\n");
  lines.forEach((line, i) => {
    if (!line.trim()) return;
    const where = `${path}:${i + 1}`;
    let row: RawQuery;
    try {
      row = JSON.parse(line);
    } catch (err) {
      throw new Error(`${where}: malformed dataset line (${err})`);
    }
    if (!row.query_id || !Array.isArray(row.query_tokens) || !Array.isArray(row.candidates)) {
      throw new Error(`${where}: missing query_id / query_tokens / candidates`);
    }
    add(String(row.query_id), row.query_tokens.map(String), where);
    for (const cand of row.candidates) {
      add(String(cand.doc_id), cand.tokens.map(String), where);
    }
  });
  return order;
}

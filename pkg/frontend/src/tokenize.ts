/** Subword splitting for the deep encoder, with whitespace alignment info.
 *
 * A whitespace token is "clean" (stays one piece) when it is lowercase
 * alphabetic and at most 12 characters. Anything else splits into runs of
 * letters / digits / single punctuation marks, long runs chopped to 6
 * characters; continuation pieces carry a ## prefix. Deterministic; the
 * version string is recorded in bundle metadata.
 */

export const TOKENIZER_VERSION = "ws-subword-v1";

const CLEAN = /^[a-z]+$/;
const RUNS = /[a-z]+|[A-Z][a-z]*|[0-9]+|[^A-Za-z0-9]/g;
const MAX_CLEAN_LEN = 12;
const CHUNK = 6;

export function isClean(token: string): boolean {
  return token.length <= MAX_CLEAN_LEN && CLEAN.test(token);
}

/** Pieces for one whitespace token; pieces.length > 1 means misalignment. */
export function splitToken(token: string): string[] {
  if (isClean(token)) return [token];
  const runs = token.match(RUNS) ?? [token];
  const pieces: string[] = [];
  for (const run of runs) {
    for (let at = 0; at < run.length; at += CHUNK) {
      pieces.push(run.slice(at, at + CHUNK));
    }
  }
  return pieces.map((p, i) => (i === 0 ? p : "##" + p));
}

export interface PieceSequence {
  pieces: string[];
  /** piece index range [start, end) per whitespace token */
  spans: Array<[number, number]>;
}

export function tokenizeText(tokens: string[]): PieceSequence {
  const pieces: string[] = [];
  const spans: Array<[number, number]> = [];
  for (const token of tokens) {
    const start = pieces.length;
    pieces.push(...splitToken(token));
    spans.push([start, pieces.length]);
  }
  return { pieces, spans };
}

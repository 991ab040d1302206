/** Extraction jobs: run an encoder over a dataset, write the bundle. */

import { join } from "node:path";

import { BundleRecord, writeBundle, writeStaticTable } from "./bundle";
import { readDatasetTexts } from "./dataset";
import { Encoder, makeEncoder, staticTokenVector } from "./encoders";

export interface ExtractionJob {
  datasetPath: string;
  source: string;
  /** "all", an inclusive range "a-b", or a comma list "0,2,5" */
  layers: string;
  outDir: string;
}

export interface ExtractionReport {
  records: number;
  texts: number;
  flagged: number;
  layerIndices: number[];
  outDir: string;
}

export function parseLayerSelection(spec: string, layerCount: number): number[] {
  const bad = () =>
    new Error(
      `bad layer selection ${JSON.stringify(spec)}; use "all", "a-b" or "i,j,k" within 0..${layerCount - 1}`
    );
  let indices: number[];
  if (spec === "" || spec === "all") {
    indices = Array.from({ length: layerCount }, (_, i) => i);
  } else if (/^\d+-\d+$/.test(spec)) {
    const [a, b] = spec.split("-").map(Number);
    if (a > b) throw bad();
    indices = Array.from({ length: b - a + 1 }, (_, i) => a + i);
  } else if (/^\d+(,\d+)*$/.test(spec)) {
    indices = Array.from(new Set(spec.split(",").map(Number))).sort((x, y) => x - y);
  } else {
    throw bad();
  }
  if (indices.some((i) => i < 0 || i >= layerCount)) throw bad();
  return indices;
}

export function runExtraction(job: ExtractionJob): ExtractionReport {
  const encoder: Encoder = makeEncoder(job.source);
  const layerIndices = parseLayerSelection(job.layers, encoder.layerCount);
  const texts = readDatasetTexts(job.datasetPath);
  const records: BundleRecord[] = [];
  let flagged = 0;
  const staticVectors = new Map<string, Float64Array>();
  for (const text of texts) {
    const perToken = encoder.encode(text.tokens);
    perToken.forEach((tok, position) => {
      if (tok.flagged) flagged += 1;
      records.push({
        example: text.id,
        position,
        layers: layerIndices.map((l) => Array.from(tok.layers[l])),
        flagged: tok.flagged || undefined,
      });
      if (job.source === "static") {
        staticVectors.set(text.tokens[position], tok.layers[0]);
      }
    });
  }
  writeBundle(
    job.outDir,
    {
      source: encoder.name,
      layers: layerIndices.length,
      dim: encoder.dim,
      tokenizer: encoder.tokenizerNote,
      synthetic: false,
      checkpoint: encoder.checkpoint,
      alignment_flagged: flagged,
    },
    records
  );
  if (job.source === "static") {
    // also emit the table format for consumers that key by token string
    writeStaticTable(join(job.outDir, "static.vec"), staticVectors, staticTokenVector("<unk>"));
  }
  return { records: records.length, texts: texts.length, flagged, layerIndices, outDir: job.outDir };
}

/** Local encoder checkpoints.
 *
 * Three deterministic families stand in for hub-hosted models (none are
 * reachable offline); each records a checkpoint identifier in the bundle
 * metadata, so swapping in a downloaded model later is a provider change,
 * not a format change.
 *
 * - static: one context-free unit vector per token string.
 * - contextual-3layer: layer 0 is the static vector; layers 1-2 mix each
 *   position with its neighbors, so equal tokens in different contexts
 *   embed differently.
 * - contextual-deep: 12 layers of scaled dot-product self-attention over
 *   subword pieces; piece vectors are pooled back to whitespace tokens by
 *   the aligner in extract.ts.
 */

import { keyedVector, normalize } from "./rng";
import { tokenizeText, TOKENIZER_VERSION, PieceSequence } from "./tokenize";

export interface TokenLayers {
  /** layers[l] is the layer-l vector for this whitespace token */
  layers: Float64Array[];
  /** true when subword pieces had to be mean-pooled to one token */
  flagged: boolean;
}

export interface Encoder {
  name: string;
  checkpoint: string;
  layerCount: number;
  dim: number;
  tokenizerNote: string;
  /** per-token layer stacks for one whitespace-tokenized text */
  encode(tokens: string[]): TokenLayers[];
}

function mixNeighbors(
  prev: Float64Array[],
  self: number,
  near: number
): Float64Array[] {
  const h = prev.length;
  const out: Float64Array[] = [];
  for (let i = 0; i < h; i++) {
    const dim = prev[i].length;
    const v = new Float64Array(dim);
    for (let d = 0; d < dim; d++) {
      v[d] = self * prev[i][d];
      if (i > 0) v[d] += near * prev[i - 1][d];
      if (i + 1 < h) v[d] += near * prev[i + 1][d];
    }
    out.push(normalize(v));
  }
  return out;
}

class StaticEncoder implements Encoder {
  name = "static";
  checkpoint = "static-hash-64-v1";
  layerCount = 1;
  dim = 64;
  tokenizerNote = `whitespace (${TOKENIZER_VERSION})`;

  tokenVector(token: string): Float64Array {
    return keyedVector(`${this.checkpoint}:${token}`, this.dim);
  }

  encode(tokens: string[]): TokenLayers[] {
    return tokens.map((t) => ({ layers: [this.tokenVector(t)], flagged: false }));
  }
}

class ContextMixerEncoder implements Encoder {
  name = "contextual-3layer";
  checkpoint = "ctx3-mixer-48-v1";
  layerCount = 3;
  dim = 48;
  tokenizerNote = `whitespace (${TOKENIZER_VERSION})`;

  encode(tokens: string[]): TokenLayers[] {
    const h0 = tokens.map((t) => keyedVector(`${this.checkpoint}:${t}`, this.dim));
    const h1 = mixNeighbors(h0, 0.6, 0.25);
    const h2 = mixNeighbors(h1, 0.5, 0.3);
    return tokens.map((_, i) => ({ layers: [h0[i], h1[i], h2[i]], flagged: false }));
  }
}

/** One self-attention mixing step: x_i + 0.5 * sum_j softmax(x_i.x_j / sqrt(d)) x_j. */
function selfAttentionStep(prev: Float64Array[]): Float64Array[] {
  const h = prev.length;
  const dim = prev[0].length;
  const scale = 1 / Math.sqrt(dim);
  const out: Float64Array[] = [];
  for (let i = 0; i < h; i++) {
    const scores = new Float64Array(h);
    let max = -Infinity;
    for (let j = 0; j < h; j++) {
      let dot = 0;
      for (let d = 0; d < dim; d++) dot += prev[i][d] * prev[j][d];
      scores[j] = dot * scale;
      if (scores[j] > max) max = scores[j];
    }
    let z = 0;
    for (let j = 0; j < h; j++) {
      scores[j] = Math.exp(scores[j] - max);
      z += scores[j];
    }
    const v = new Float64Array(dim);
    for (let j = 0; j < h; j++) {
      const w = (0.5 * scores[j]) / z;
      for (let d = 0; d < dim; d++) v[d] += w * prev[j][d];
    }
    for (let d = 0; d < dim; d++) v[d] += prev[i][d];
    out.push(normalize(v));
  }
  return out;
}

class DeepSelfAttentionEncoder implements Encoder {
  name = "contextual-deep";
  checkpoint = "deep-sa-32x12-v1";
  layerCount = 12;
  dim = 32;
  tokenizerNote = `subword mean-pooled to whitespace tokens (${TOKENIZER_VERSION})`;

  pieceLayers(seq: PieceSequence): Float64Array[][] {
    // layersByDepth[l][p] = layer-l vector of piece p
    let current = seq.pieces.map((p) => keyedVector(`${this.checkpoint}:${p}`, this.dim));
    const layers: Float64Array[][] = [current];
    for (let l = 1; l < this.layerCount; l++) {
      current = selfAttentionStep(current);
      layers.push(current);
    }
    return layers;
  }

  encode(tokens: string[]): TokenLayers[] {
    const seq = tokenizeText(tokens);
    const byDepth = this.pieceLayers(seq);
    return seq.spans.map(([start, end]) => {
      const flagged = end - start > 1;
      const layers = byDepth.map((depth) => {
        if (!flagged) return depth[start];
        const v = new Float64Array(this.dim);
        for (let p = start; p < end; p++) {
          for (let d = 0; d < this.dim; d++) v[d] += depth[p][d];
        }
        for (let d = 0; d < this.dim; d++) v[d] /= end - start;
        return v;
      });
      return { layers, flagged };
    });
  }
}

/** Context-free vector of one token under the static checkpoint. */
export function staticTokenVector(token: string): Float64Array {
  return new StaticEncoder().tokenVector(token);
}

export const SOURCES = ["contextual-deep", "contextual-3layer", "static"] as const;
export type SourceName = (typeof SOURCES)[number];

export function makeEncoder(source: string): Encoder {
  switch (source) {
    case "static":
      return new StaticEncoder();
    case "contextual-3layer":
      return new ContextMixerEncoder();
    case "contextual-deep":
      return new DeepSelfAttentionEncoder();
    default:
      throw new Error(`unknown source ${JSON.stringify(source)}; expected one of ${SOURCES.join(", ")}`);
  }
}

/** Deterministic token-keyed vectors: sha256 -> splitmix64 -> gaussian. */

import { createHash } from "node:crypto";

/** 64-bit seed from an arbitrary string, stable across platforms. */
export function hashSeed(key: string): bigint {
  const digest = createHash("sha256").update(key, "utf8").digest();
  return digest.readBigUInt64LE(0);
}

const MASK64 = (1n << 64n) - 1n;

/** splitmix64 stream of doubles in [0, 1). */
export class SplitMix {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK64;
  }

  nextUint64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    return z ^ (z >> 31n);
  }

  nextDouble(): number {
    // top 53 bits give a uniform double
    return Number(this.nextUint64() >> 11n) / 9007199254740992;
  }

  /** standard normal via Box-Muller */
  nextGaussian(): number {
    let u = this.nextDouble();
    while (u === 0) u = this.nextDouble();
    const v = this.nextDouble();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  }
}

export function norm(v: Float64Array): number {
  let s = 0;
  for (let i = 0; i < v.length; i++) s += v[i] * v[i];
  return Math.sqrt(s);
}

export function normalize(v: Float64Array): Float64Array {
  const n = norm(v);
  if (n === 0) return v;
  for (let i = 0; i < v.length; i++) v[i] /= n;
  return v;
}

/** Unit-norm gaussian vector keyed by (checkpoint, token-ish key). */
export function keyedVector(key: string, dim: number): Float64Array {
  const rng = new SplitMix(hashSeed(key));
  const v = new Float64Array(dim);
  for (let i = 0; i < dim; i++) v[i] = rng.nextGaussian();
  return normalize(v);
}

/**
 * Deterministic random number generation for weight initialization.
 *
 * The backbone ships with seeded stand-in weights rather than downloaded
 * pretrained ones, so every install produces bit-identical embeddings. The
 * generator is a plain mulberry32 stream with a Box-Muller transform on top;
 * it only has to be reproducible, not cryptographic.
 */

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

/** Standard-normal samples via Box-Muller over a mulberry32 stream. */
export function gaussian(seed: number): () => number {
  const uniform = mulberry32(seed)
  let spare: number | null = null
  return () => {
    if (spare !== null) {
      const value = spare
      spare = null
      return value
    }
    let u = 0
    let v = 0
    // avoid log(0)
    while (u === 0) u = uniform()
    v = uniform()
    const radius = Math.sqrt(-2.0 * Math.log(u))
    spare = radius * Math.sin(2.0 * Math.PI * v)
    return radius * Math.cos(2.0 * Math.PI * v)
  }
}

/** Float32 weight block with He-style scaling for the given fan-in. */
export function weightBlock(seed: number, size: number, fanIn: number): Float32Array {
  const next = gaussian(seed)
  const scale = Math.sqrt(2.0 / fanIn)
  const out = new Float32Array(size)
  for (let i = 0; i < size; i++) {
    out[i] = Math.fround(next() * scale)
  }
  return out
}

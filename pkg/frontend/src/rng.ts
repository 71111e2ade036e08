/**
 * Deterministic random numbers for weight generation.
 *
 * sfc32 seeded from a single integer via splitmix32; Box-Muller gaussians.
 * Determinism of the byte output under a fixed seed is part of the tool's
 * contract, so the generator is fixed here rather than delegated to
 * Math.random or a platform API.
 */

export class Rng {
  private a: number;
  private b: number;
  private c: number;
  private d: number;
  private spare: number | null = null;

  constructor(seed: number) {
    // splitmix32 expansion of the seed into the four sfc32 state words
    let s = seed >>> 0;
    const next = () => {
      s = (s + 0x9e3779b9) >>> 0;
      let z = s;
      z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
      z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
      return (z ^ (z >>> 15)) >>> 0;
    };
    this.a = next();
    this.b = next();
    this.c = next();
    this.d = next();
    for (let i = 0; i < 12; i++) this.u32();
  }

  u32(): number {
    const t = (this.a + this.b + this.d) >>> 0;
    this.d = (this.d + 1) >>> 0;
    this.a = this.b ^ (this.b >>> 9);
    this.b = (this.c + (this.c << 3)) >>> 0;
    this.c = ((this.c << 21) | (this.c >>> 11)) >>> 0;
    this.c = (this.c + t) >>> 0;
    return t;
  }

  /** uniform in [0, 1) with 32 bits of precision */
  uniform(): number {
    return this.u32() / 4294967296;
  }

  /** standard normal via Box-Muller (two uniforms per pair) */
  gaussian(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    let u1 = this.uniform();
    while (u1 === 0) u1 = this.uniform();
    const u2 = this.uniform();
    const r = Math.sqrt(-2 * Math.log(u1));
    this.spare = r * Math.sin(2 * Math.PI * u2);
    return r * Math.cos(2 * Math.PI * u2);
  }
}

/**
 * Orthonormal columns from a gaussian (rows x cols) matrix, rows >= cols,
 * by modified Gram-Schmidt. Returned row-major.
 */
export function orthonormalColumns(rng: Rng, rows: number, cols: number): Float64Array {
  if (rows < cols) throw new Error("orthonormalColumns needs rows >= cols");
  const m = new Float64Array(rows * cols);
  for (let i = 0; i < m.length; i++) m[i] = rng.gaussian();
  for (let j = 0; j < cols; j++) {
    for (let k = 0; k < j; k++) {
      let dot = 0;
      for (let i = 0; i < rows; i++) dot += m[i * cols + k]! * m[i * cols + j]!;
      for (let i = 0; i < rows; i++) m[i * cols + j]! -= dot * m[i * cols + k]!;
    }
    let norm = 0;
    for (let i = 0; i < rows; i++) norm += m[i * cols + j]! ** 2;
    norm = Math.sqrt(norm);
    if (norm < 1e-12) throw new Error("degenerate gaussian draw during orthogonalization");
    for (let i = 0; i < rows; i++) m[i * cols + j]! /= norm;
  }
  return m;
}

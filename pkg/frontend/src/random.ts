/**
 * Offline fallback weights: the engine's default four-conv chain with
 * orthogonally initialized kernels and zero biases, deterministic under a
 * seed. Orthogonal rows (or columns, whichever dimension is smaller) give
 * random features with decorrelated responses, which is enough structure
 * for Gram statistics to carry a usable style signal.
 */

import { NstwModel } from "./nstw.js";
import { Rng, orthonormalColumns } from "./rng.js";

export const MINI_NET_CHANNELS = [16, 32, 64, 128];

export function makeRandomModel(seed: number): NstwModel {
  const rng = new Rng(seed);
  const convs = [];
  let cin = 1;
  for (let i = 0; i < MINI_NET_CHANNELS.length; i++) {
    const cout = MINI_NET_CHANNELS[i]!;
    const rows = cout;
    const cols = 3 * 3 * cin;
    // orthonormalize along the smaller dimension, like a thin QR
    let flat: Float64Array;
    if (rows >= cols) {
      flat = orthonormalColumns(rng, rows, cols);
    } else {
      const q = orthonormalColumns(rng, cols, rows);
      flat = new Float64Array(rows * cols);
      for (let r = 0; r < rows; r++) {
        for (let c = 0; c < cols; c++) flat[r * cols + c] = q[c * rows + r]!;
      }
    }
    convs.push({
      name: `L${i + 1}`,
      kh: 3,
      kw: 3,
      cin,
      cout,
      stride: 1,
      weight: Float32Array.from(flat),
      bias: new Float32Array(cout),
    });
    cin = cout;
  }
  return { convs, mean: 0, scale: 1 };
}

/**
 * Reference forward pass over an exported conv chain.
 *
 * This mirrors the engine's semantics exactly so recorded activations are a
 * valid parity target: grayscale input replicated across the first conv's
 * input channels and normalized as (I - mean) / scale; same-padded
 * cross-correlation with output dims ceil(H / stride); relu after every
 * conv; 2x2/2 max pooling (floor dims, no padding) after every conv except
 * the first and last. Activations are (H, W, C) C-order in float64;
 * recorded values are the conv outputs *before* relu.
 */

import type { GrayImage } from "./pgm.js";
import type { ConvLayer, NstwModel } from "./nstw.js";

export interface Activation {
  shape: [number, number, number];
  data: Float64Array;
}

function convForward(x: Activation, layer: ConvLayer): Activation {
  const [h, w, cin] = x.shape;
  if (h < layer.kh || w < layer.kw) {
    throw new Error(
      `image ${h}x${w} too small for ${layer.kh}x${layer.kw} kernel at layer '${layer.name}'`);
  }
  const ph = Math.floor(layer.kh / 2);
  const pw = Math.floor(layer.kw / 2);
  const s = layer.stride;
  const ho = Math.ceil(h / s);
  const wo = Math.ceil(w / s);
  const cout = layer.cout;
  const out = new Float64Array(ho * wo * cout);
  const { weight, bias, kh, kw } = layer;
  for (let oi = 0; oi < ho; oi++) {
    for (let oj = 0; oj < wo; oj++) {
      const base = (oi * wo + oj) * cout;
      for (let oc = 0; oc < cout; oc++) out[base + oc] = bias[oc]!;
      for (let a = 0; a < kh; a++) {
        const ii = oi * s + a - ph;
        if (ii < 0 || ii >= h) continue;
        for (let b = 0; b < kw; b++) {
          const jj = oj * s + b - pw;
          if (jj < 0 || jj >= w) continue;
          const xBase = (ii * w + jj) * cin;
          const wBase = (a * kw + b) * cin;
          for (let oc = 0; oc < cout; oc++) {
            const wOff = oc * kh * kw * cin + wBase;
            let acc = 0;
            for (let ic = 0; ic < cin; ic++) {
              acc += x.data[xBase + ic]! * weight[wOff + ic]!;
            }
            out[base + oc]! += acc;
          }
        }
      }
    }
  }
  return { shape: [ho, wo, cout], data: out };
}

function reluForward(x: Activation): Activation {
  const data = new Float64Array(x.data.length);
  for (let i = 0; i < data.length; i++) data[i] = Math.max(x.data[i]!, 0);
  return { shape: x.shape, data };
}

function maxpoolForward(x: Activation, window: number, stride: number): Activation {
  const [h, w, c] = x.shape;
  if (h < window || w < window) {
    throw new Error(`image ${h}x${w} too small for ${window}x${window} pool`);
  }
  const ho = Math.floor((h - window) / stride) + 1;
  const wo = Math.floor((w - window) / stride) + 1;
  const out = new Float64Array(ho * wo * c);
  for (let oi = 0; oi < ho; oi++) {
    for (let oj = 0; oj < wo; oj++) {
      for (let ch = 0; ch < c; ch++) {
        let best = -Infinity;
        for (let a = 0; a < window; a++) {
          for (let b = 0; b < window; b++) {
            const v = x.data[((oi * stride + a) * w + (oj * stride + b)) * c + ch]!;
            if (v > best) best = v;
          }
        }
        out[(oi * wo + oj) * c + ch] = best;
      }
    }
  }
  return { shape: [ho, wo, c], data: out };
}

/** Conv outputs (pre-relu) by layer name, in chain order. */
export function forwardConvOutputs(
  model: NstwModel, img: GrayImage): Map<string, Activation> {
  const convs = model.convs;
  const cin = convs[0]!.cin;
  const { height, width } = img;
  const x0 = new Float64Array(height * width * cin);
  for (let i = 0; i < height * width; i++) {
    const v = (img.data[i]! - model.mean) / model.scale;
    for (let ch = 0; ch < cin; ch++) x0[i * cin + ch] = v;
  }
  let cur: Activation = { shape: [height, width, cin], data: x0 };
  const outputs = new Map<string, Activation>();
  const n = convs.length;
  for (let i = 0; i < n; i++) {
    cur = convForward(cur, convs[i]!);
    outputs.set(convs[i]!.name, cur);
    cur = reluForward(cur);
    if (i >= 1 && i < n - 1) cur = maxpoolForward(cur, 2, 2);
  }
  return outputs;
}

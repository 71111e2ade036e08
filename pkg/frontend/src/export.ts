/**
 * Conversion from a tfjs-layout source model to the engine's NSTW format,
 * plus the parity fixture: the per-layer activations of the exported chain
 * on a 32x32 grayscale test image, recorded as NSTA.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { forwardConvOutputs } from "./forward.js";
import { SourceModel, findLayerTensors, loadSourceModel } from "./model.js";
import { writeNsta } from "./nsta.js";
import { ConvLayer, NstwModel, validateChain, writeNstw } from "./nstw.js";
import { readPgm } from "./pgm.js";

export interface ExportSpec {
  /** path to a model.json or a directory containing one */
  model: string;
  /** (source layer name, NSTW layer name) pairs in chain order */
  layers: Array<[string, string]>;
  /** 32x32 grayscale fixture image (PGM) */
  fixture: string;
  outNstw: string;
  outNsta: string;
  mean?: number;
  scale?: number;
}

export const FIXTURE_SIZE = 32;

/** Parse a "source = target" per-line layer map; '#' starts a comment. */
export function parseLayerMap(text: string): Array<[string, string]> {
  const out: Array<[string, string]> = [];
  for (const rawLine of text.split("\n")) {
    const line = rawLine.split("#")[0]!.trim();
    if (line.length === 0) continue;
    const eq = line.indexOf("=");
    if (eq < 0) {
      throw new Error(`layer map line without '=': '${line}'`);
    }
    const src = line.slice(0, eq).trim();
    const dst = line.slice(eq + 1).trim();
    if (src.length === 0 || dst.length === 0) {
      throw new Error(`layer map line with empty name: '${line}'`);
    }
    out.push([src, dst]);
  }
  if (out.length === 0) throw new Error("layer map is empty");
  return out;
}

/**
 * HWIO (kh, kw, cin, cout) kernel to output-major (cout, kh, kw, cin),
 * rounded through float32 on the way in.
 */
function transposeKernel(
  src: ArrayLike<number>, kh: number, kw: number, cin: number, cout: number): Float32Array {
  const out = new Float32Array(cout * kh * kw * cin);
  for (let a = 0; a < kh; a++) {
    for (let b = 0; b < kw; b++) {
      for (let ic = 0; ic < cin; ic++) {
        const srcBase = ((a * kw + b) * cin + ic) * cout;
        const dstBase = (a * kw + b) * cin + ic;
        for (let oc = 0; oc < cout; oc++) {
          out[oc * kh * kw * cin + dstBase] = src[srcBase + oc] as number;
        }
      }
    }
  }
  return out;
}

/** Sum an output-major kernel over its input-channel axis (RGB collapse). */
function collapseInputChannels(
  w: Float32Array, kh: number, kw: number, cin: number, cout: number): Float32Array {
  const out = new Float32Array(cout * kh * kw);
  for (let oc = 0; oc < cout; oc++) {
    for (let ab = 0; ab < kh * kw; ab++) {
      let sum = 0;
      for (let ic = 0; ic < cin; ic++) {
        sum += w[(oc * kh * kw + ab) * cin + ic]!;
      }
      out[oc * kh * kw + ab] = Math.fround(sum);
    }
  }
  return out;
}

export function buildNstwModel(source: SourceModel, spec: ExportSpec): NstwModel {
  const convs: ConvLayer[] = [];
  for (let i = 0; i < spec.layers.length; i++) {
    const [srcName, dstName] = spec.layers[i]!;
    const { kernel, bias } = findLayerTensors(source, srcName);
    if (kernel.shape.length !== 4) {
      throw new Error(
        `layer '${srcName}': kernel must be rank 4 (kh, kw, cin, cout), ` +
        `got rank ${kernel.shape.length}`);
    }
    const [kh, kw, cinRaw, cout] = kernel.shape as [number, number, number, number];
    let cin = cinRaw;
    let weight = transposeKernel(kernel.data, kh, kw, cin, cout);
    if (i === 0 && cin === 3) {
      weight = collapseInputChannels(weight, kh, kw, cin, cout);
      cin = 1;
    }
    if (i === 0 && cin !== 1) {
      throw new Error(
        `first layer '${srcName}' must take 1 or 3 input channels, got ${cinRaw}`);
    }
    let stride = source.strides.get(srcName) ?? 1;
    if (i === 0) stride = 1; // the engine requires a stride-1 first conv
    const b = bias === null ? new Float32Array(cout) : Float32Array.from(bias.data);
    if (b.length !== cout) {
      throw new Error(`layer '${srcName}': bias length ${b.length} != cout ${cout}`);
    }
    convs.push({ name: dstName, kh, kw, cin, cout, stride, weight, bias: b });
  }
  // round through float32 so recorded activations match a file reload exactly
  const model: NstwModel = {
    convs,
    mean: Math.fround(spec.mean ?? 0),
    scale: Math.fround(spec.scale ?? 1),
  };
  validateChain(model.convs);
  return model;
}

function writeFileAtomic(file: string, data: Uint8Array): void {
  const tmp = path.join(
    path.dirname(file), `.${path.basename(file)}.${process.pid}.tmp`);
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, file);
}

export function runExport(spec: ExportSpec): NstwModel {
  const source = loadSourceModel(spec.model);
  const model = buildNstwModel(source, spec);

  const img = readPgm(new Uint8Array(fs.readFileSync(spec.fixture)));
  if (img.height !== FIXTURE_SIZE || img.width !== FIXTURE_SIZE) {
    throw new Error(
      `fixture must be ${FIXTURE_SIZE}x${FIXTURE_SIZE}, ` +
      `got ${img.height}x${img.width}`);
  }
  const acts = forwardConvOutputs(model, img);
  const refs = [...acts.entries()].map(([name, act]) => ({
    name,
    shape: [...act.shape],
    data: Float32Array.from(act.data),
  }));

  writeFileAtomic(spec.outNstw, writeNstw(model));
  writeFileAtomic(spec.outNsta, writeNsta(refs));
  return model;
}

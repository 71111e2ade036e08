/**
 * NSTW weight container: the engine's conv-chain format.
 *
 * Layout (little-endian): magic "NSTW", u32 version, u32 conv count; per
 * conv: u16 name length + utf8 name, u32 kh/kw/cin/cout/stride, f32 kernel
 * in output-major (cout, kh, kw, cin) C order, f32 biases; trailing f32
 * input mean and scale.
 */

import { ByteReader, ByteWriter } from "./binary.js";

export const NSTW_MAGIC = "NSTW";
export const NSTW_VERSION = 1;

export interface ConvLayer {
  name: string;
  kh: number;
  kw: number;
  cin: number;
  cout: number;
  stride: number;
  /** kernel, output-major (cout, kh, kw, cin) C order */
  weight: Float32Array;
  bias: Float32Array;
}

export interface NstwModel {
  convs: ConvLayer[];
  mean: number;
  scale: number;
}

/** Reject chains the engine's loader would refuse, with the same rules. */
export function validateChain(convs: ConvLayer[]): void {
  if (convs.length < 1) {
    throw new Error("chain needs at least one conv layer");
  }
  const seen = new Set<string>();
  const first = convs[0]!;
  if (first.stride !== 1) {
    throw new Error("first conv layer must have stride 1");
  }
  let chan = first.cin;
  for (const c of convs) {
    if (c.name.length === 0) throw new Error("conv layer with empty name");
    if (seen.has(c.name)) throw new Error(`duplicate layer name '${c.name}'`);
    seen.add(c.name);
    if (c.kh < 1 || c.kw < 1 || c.cin < 1 || c.cout < 1 || c.stride < 1) {
      throw new Error(`bad conv geometry in layer '${c.name}'`);
    }
    if (c.kh % 2 === 0 || c.kw % 2 === 0) {
      throw new Error(`even kernel dims in layer '${c.name}' (same padding needs odd)`);
    }
    if (c.cin !== chan) {
      throw new Error(
        `layer '${c.name}' expects ${c.cin} input channels but gets ${chan}`);
    }
    chan = c.cout;
    if (c.weight.length !== c.cout * c.kh * c.kw * c.cin) {
      throw new Error(`layer '${c.name}': kernel size mismatch`);
    }
    if (c.bias.length !== c.cout) {
      throw new Error(`layer '${c.name}': bias size mismatch`);
    }
  }
}

export function writeNstw(model: NstwModel): Uint8Array {
  validateChain(model.convs);
  const w = new ByteWriter();
  w.ascii(NSTW_MAGIC);
  w.u32(NSTW_VERSION);
  w.u32(model.convs.length);
  for (const c of model.convs) {
    const nm = new TextEncoder().encode(c.name);
    w.u16(nm.length);
    w.bytes(nm);
    w.u32(c.kh);
    w.u32(c.kw);
    w.u32(c.cin);
    w.u32(c.cout);
    w.u32(c.stride);
    w.f32Array(c.weight);
    w.f32Array(c.bias);
  }
  w.f32(model.mean);
  w.f32(model.scale);
  return w.finish();
}

export function readNstw(buf: Uint8Array): NstwModel {
  const r = new ByteReader(buf, "NSTW");
  if (r.ascii(4) !== NSTW_MAGIC) {
    throw new Error("not an NSTW file (bad magic)");
  }
  const version = r.u32();
  if (version !== NSTW_VERSION) {
    throw new Error(`unsupported NSTW version ${version}`);
  }
  const count = r.u32();
  const convs: ConvLayer[] = [];
  for (let i = 0; i < count; i++) {
    const name = r.ascii(r.u16());
    const kh = r.u32();
    const kw = r.u32();
    const cin = r.u32();
    const cout = r.u32();
    const stride = r.u32();
    const weight = r.f32Array(cout * kh * kw * cin);
    const bias = r.f32Array(cout);
    convs.push({ name, kh, kw, cin, cout, stride, weight, bias });
  }
  const mean = r.f32();
  const scale = r.f32();
  if (!r.atEnd()) throw new Error("trailing bytes after NSTW payload");
  return { convs, mean, scale };
}

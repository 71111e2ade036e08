/**
 * Reader for tfjs-layout model directories: a model.json whose
 * weightsManifest lists binary shard files plus per-tensor name/shape/dtype
 * specs. Weights are parsed by hand (concatenate shards, walk the specs in
 * order) so the tool has no framework dependency; only float32 tensors are
 * supported because that is all the NSTW format stores.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface SourceTensor {
  name: string;
  shape: number[];
  data: Float32Array;
}

export interface SourceModel {
  tensors: Map<string, SourceTensor>;
  /** conv strides by topology layer name, when the topology is present */
  strides: Map<string, number>;
}

interface WeightSpec {
  name: string;
  shape: number[];
  dtype: string;
}

export function loadSourceModel(modelPath: string): SourceModel {
  let jsonPath = modelPath;
  if (fs.existsSync(modelPath) && fs.statSync(modelPath).isDirectory()) {
    jsonPath = path.join(modelPath, "model.json");
  }
  if (!fs.existsSync(jsonPath)) {
    throw new Error(`model not found: ${jsonPath}`);
  }
  const manifest = JSON.parse(fs.readFileSync(jsonPath, "utf8"));
  const groups = manifest.weightsManifest;
  if (!Array.isArray(groups)) {
    throw new Error(`${jsonPath}: no weightsManifest`);
  }

  const dir = path.dirname(jsonPath);
  const buffers: Buffer[] = [];
  const specs: WeightSpec[] = [];
  for (const group of groups) {
    for (const p of group.paths ?? []) {
      buffers.push(fs.readFileSync(path.join(dir, p)));
    }
    specs.push(...(group.weights ?? []));
  }
  const blob = Buffer.concat(buffers);

  const tensors = new Map<string, SourceTensor>();
  let offset = 0;
  for (const spec of specs) {
    const count = spec.shape.reduce((a: number, b: number) => a * b, 1);
    if (spec.dtype !== "float32") {
      throw new Error(`tensor '${spec.name}': unsupported dtype ${spec.dtype}`);
    }
    if (offset + 4 * count > blob.length) {
      throw new Error(`weight data ends before tensor '${spec.name}'`);
    }
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = blob.readFloatLE(offset + 4 * i);
    offset += 4 * count;
    tensors.set(spec.name, { name: spec.name, shape: spec.shape, data });
  }

  return { tensors, strides: topologyStrides(manifest) };
}

function topologyStrides(manifest: any): Map<string, number> {
  const out = new Map<string, number>();
  const layers = manifest?.modelTopology?.model_config?.config?.layers;
  if (!Array.isArray(layers)) return out;
  for (const layer of layers) {
    const cfg = layer?.config;
    const name = cfg?.name;
    const strides = cfg?.strides;
    if (typeof name === "string" && Array.isArray(strides) && strides.length > 0) {
      out.set(name, Number(strides[0]));
    }
  }
  return out;
}

/** Kernel + bias tensors for one mapped layer; names follow tfjs habits. */
export function findLayerTensors(model: SourceModel, layerName: string): {
  kernel: SourceTensor;
  bias: SourceTensor | null;
} {
  const kernel =
    model.tensors.get(`${layerName}/kernel`) ??
    model.tensors.get(`${layerName}/weights`) ??
    model.tensors.get(layerName);
  if (kernel === undefined) {
    const names = [...model.tensors.keys()].sort().join(", ");
    throw new Error(`layer '${layerName}' not found; available: ${names}`);
  }
  const bias =
    model.tensors.get(`${layerName}/bias`) ??
    model.tensors.get(`${layerName}/biases`) ??
    null;
  return { kernel, bias };
}

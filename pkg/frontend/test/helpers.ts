import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

export interface TensorSpec {
  name: string;
  shape: number[];
  values: number[];
  dtype?: string;
}

export function tempDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "nstw-export-"));
}

/** Write a minimal tfjs-layout model directory and return its path. */
export function writeTfjsModel(
  dir: string,
  tensors: TensorSpec[],
  layerStrides: Record<string, number> = {},
): string {
  const weights = tensors.map((t) => ({
    name: t.name,
    shape: t.shape,
    dtype: t.dtype ?? "float32",
  }));
  const count = tensors.reduce((a, t) => a + t.values.length, 0);
  const blob = Buffer.alloc(4 * count);
  let at = 0;
  for (const t of tensors) {
    for (const v of t.values) {
      blob.writeFloatLE(Math.fround(v), at);
      at += 4;
    }
  }
  const modelJson = {
    format: "layers-model",
    modelTopology: {
      model_config: {
        config: {
          layers: Object.entries(layerStrides).map(([name, s]) => ({
            class_name: "Conv2D",
            config: { name, strides: [s, s] },
          })),
        },
      },
    },
    weightsManifest: [{ paths: ["weights.bin"], weights }],
  };
  fs.mkdirSync(dir, { recursive: true });
  fs.writeFileSync(path.join(dir, "model.json"), JSON.stringify(modelJson));
  fs.writeFileSync(path.join(dir, "weights.bin"), blob);
  return dir;
}

/** HWIO tensor values for a kernel whose only nonzero is the center tap. */
export function centerKernelHwio(
  kh: number, kw: number, cin: number, cout: number, value: number): number[] {
  const out = new Array(kh * kw * cin * cout).fill(0);
  const a = Math.floor(kh / 2);
  const b = Math.floor(kw / 2);
  for (let ic = 0; ic < cin; ic++) {
    for (let oc = 0; oc < cout; oc++) {
      out[((a * kw + b) * cin + ic) * cout + oc] = value;
    }
  }
  return out;
}

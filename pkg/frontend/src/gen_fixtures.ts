/**
 * Generate the committed parity fixtures under fixtures/:
 *
 *   srcmodel/     synthetic tfjs-layout source model (three convs, RGB
 *                 stride-2 first layer, so export exercises the collapse
 *                 and stride rewrite)
 *   layers.map    source -> NSTW name mapping for the chain
 *   fixture.pgm   32x32 grayscale test image, 16-bit
 *   model.nstw    exported weights
 *   model.nsta    recorded activations of the chain on fixture.pgm
 *   random.nstw   make-random output (seed 7)
 *
 * Everything is deterministic so reruns reproduce the same bytes.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { runExport } from "./export.js";
import { writeNstw } from "./nstw.js";
import { writePgm } from "./pgm.js";
import { makeRandomModel } from "./random.js";
import { Rng } from "./rng.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const fixturesDir = path.join(here, "..", "fixtures");
const srcModelDir = path.join(fixturesDir, "srcmodel");

interface SourceConv {
  name: string;
  kh: number;
  kw: number;
  cin: number;
  cout: number;
  stride: number;
}

const SOURCE_CONVS: SourceConv[] = [
  { name: "conv1", kh: 3, kw: 3, cin: 3, cout: 12, stride: 2 },
  { name: "conv2", kh: 3, kw: 3, cin: 12, cout: 16, stride: 1 },
  { name: "conv3", kh: 3, kw: 3, cin: 16, cout: 24, stride: 1 },
];

function writeSourceModel(): void {
  const rng = new Rng(2024);
  const weights: Array<{ name: string; shape: number[]; dtype: string }> = [];
  const payload: number[] = [];
  for (const c of SOURCE_CONVS) {
    const fanIn = c.kh * c.kw * c.cin;
    const kernelCount = fanIn * c.cout;
    for (let i = 0; i < kernelCount; i++) {
      payload.push(rng.gaussian() / Math.sqrt(fanIn));
    }
    weights.push({ name: `${c.name}/kernel`, shape: [c.kh, c.kw, c.cin, c.cout], dtype: "float32" });
    for (let i = 0; i < c.cout; i++) payload.push(0.05 * rng.gaussian());
    weights.push({ name: `${c.name}/bias`, shape: [c.cout], dtype: "float32" });
  }

  const blob = Buffer.alloc(4 * payload.length);
  payload.forEach((v, i) => blob.writeFloatLE(Math.fround(v), 4 * i));

  const modelJson = {
    format: "layers-model",
    generatedBy: "gen_fixtures",
    modelTopology: {
      model_config: {
        class_name: "Sequential",
        config: {
          layers: SOURCE_CONVS.map((c) => ({
            class_name: "Conv2D",
            config: { name: c.name, strides: [c.stride, c.stride], padding: "same" },
          })),
        },
      },
    },
    weightsManifest: [{ paths: ["weights.bin"], weights }],
  };

  fs.mkdirSync(srcModelDir, { recursive: true });
  fs.writeFileSync(path.join(srcModelDir, "model.json"), JSON.stringify(modelJson, null, 2));
  fs.writeFileSync(path.join(srcModelDir, "weights.bin"), blob);
}

function writeFixtureImage(): void {
  const n = 32;
  const data = new Float64Array(n * n);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) {
      // off-center radial falloff crossed with diagonal stripes
      const dx = (c - 11.5) / n;
      const dy = (r - 18.5) / n;
      const radial = Math.exp(-(dx * dx + dy * dy) / 0.08);
      const stripe = 0.5 + 0.5 * Math.sin((2 * Math.PI * (r + 2 * c)) / 9);
      data[r * n + c] = 0.15 + 0.7 * radial * stripe;
    }
  }
  fs.writeFileSync(
    path.join(fixturesDir, "fixture.pgm"),
    writePgm({ height: n, width: n, data }, 16));
}

function main(): void {
  fs.mkdirSync(fixturesDir, { recursive: true });
  writeSourceModel();
  writeFixtureImage();

  const mapPath = path.join(fixturesDir, "layers.map");
  fs.writeFileSync(
    mapPath,
    "# exported chain, in order\nconv1 = L1\nconv2 = L2\nconv3 = L3\n");

  const model = runExport({
    model: srcModelDir,
    layers: [["conv1", "L1"], ["conv2", "L2"], ["conv3", "L3"]],
    fixture: path.join(fixturesDir, "fixture.pgm"),
    outNstw: path.join(fixturesDir, "model.nstw"),
    outNsta: path.join(fixturesDir, "model.nsta"),
  });
  const chain = model.convs.map((c) => `${c.name}:${c.cin}->${c.cout}/s${c.stride}`).join(" ");
  console.log(`exported ${chain}`);

  fs.writeFileSync(path.join(fixturesDir, "random.nstw"), writeNstw(makeRandomModel(7)));
  console.log("wrote random.nstw (seed 7)");
}

main();

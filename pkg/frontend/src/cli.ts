#!/usr/bin/env node
/**
 * nstw-export: weight conversion for the smoke-stylization engine.
 *
 *   nstw-export export --model <dir-or-model.json> --layers <map file>
 *                      --fixture <32x32 pgm> --out <file.nstw>
 *                      [--refs <file.nsta>] [--mean M] [--scale S]
 *   nstw-export make-random --seed <n> --out <file.nstw>
 *
 * `export` converts mapped conv layers of a tfjs-layout model to NSTW
 * (kernels transposed to output-major, an RGB first layer collapsed to
 * grayscale, first-layer stride forced to 1) and records the chain's
 * activations on the fixture image as NSTA parity references. The refs
 * path defaults to the .nstw path with its extension swapped for .nsta.
 *
 * `make-random` writes deterministic orthogonally-initialized weights for
 * the engine's default chain.
 *
 * Exit codes: 0 success, 1 failure (message on stderr).
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { parseArgs } from "node:util";

import { ExportSpec, parseLayerMap, runExport } from "./export.js";
import { writeNstw } from "./nstw.js";
import { makeRandomModel } from "./random.js";

function requireOption(value: string | undefined, flag: string): string {
  if (value === undefined) throw new Error(`missing required ${flag}`);
  return value;
}

function cmdExport(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      model: { type: "string" },
      layers: { type: "string" },
      fixture: { type: "string" },
      out: { type: "string" },
      refs: { type: "string" },
      mean: { type: "string" },
      scale: { type: "string" },
    },
  });
  const out = requireOption(values.out, "--out");
  const spec: ExportSpec = {
    model: requireOption(values.model, "--model"),
    layers: parseLayerMap(
      fs.readFileSync(requireOption(values.layers, "--layers"), "utf8")),
    fixture: requireOption(values.fixture, "--fixture"),
    outNstw: out,
    outNsta: values.refs ?? out.replace(/\.nstw$/, "") + ".nsta",
    mean: values.mean === undefined ? 0 : Number(values.mean),
    scale: values.scale === undefined ? 1 : Number(values.scale),
  };
  if (Number.isNaN(spec.mean) || Number.isNaN(spec.scale)) {
    throw new Error("--mean and --scale must be numbers");
  }
  const model = runExport(spec);
  const chain = model.convs
    .map((c) => `${c.name}(${c.kh}x${c.kw},${c.cin}->${c.cout},s${c.stride})`)
    .join(" ");
  console.log(`wrote ${spec.outNstw} and ${spec.outNsta}: ${chain}`);
}

function cmdMakeRandom(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      seed: { type: "string" },
      out: { type: "string" },
    },
  });
  const seed = Number(requireOption(values.seed, "--seed"));
  if (!Number.isInteger(seed) || seed < 0) {
    throw new Error("--seed must be a non-negative integer");
  }
  const out = requireOption(values.out, "--out");
  fs.writeFileSync(out, writeNstw(makeRandomModel(seed)));
  console.log(`wrote ${out}`);
}

export function runCli(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "export") cmdExport(rest);
    else if (command === "make-random") cmdMakeRandom(rest);
    else {
      throw new Error(
        command === undefined
          ? "missing command (export | make-random)"
          : `unknown command '${command}'`);
    }
    return 0;
  } catch (e) {
    console.error(`error: ${e instanceof Error ? e.message : e}`);
    return 1;
  }
}

if (process.argv[1] !== undefined &&
    path.resolve(process.argv[1]) === fileURLToPath(import.meta.url)) {
  process.exit(runCli(process.argv.slice(2)));
}

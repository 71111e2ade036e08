export { ByteReader, ByteWriter } from "./binary.js";
export { Activation, forwardConvOutputs } from "./forward.js";
export { SourceModel, SourceTensor, findLayerTensors, loadSourceModel } from "./model.js";
export { NSTA_MAGIC, NamedArray, readNsta, writeNsta } from "./nsta.js";
export {
  ConvLayer,
  NSTW_MAGIC,
  NSTW_VERSION,
  NstwModel,
  readNstw,
  validateChain,
  writeNstw,
} from "./nstw.js";
export { GrayImage, readPgm, writePgm } from "./pgm.js";
export { MINI_NET_CHANNELS, makeRandomModel } from "./random.js";
export { Rng, orthonormalColumns } from "./rng.js";
export {
  ExportSpec,
  FIXTURE_SIZE,
  buildNstwModel,
  parseLayerMap,
  runExport,
} from "./export.js";
export { runCli } from "./cli.js";

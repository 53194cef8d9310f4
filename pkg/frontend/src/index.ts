export { formatUle, parseUle, withStates, UleFormatError } from "./ule.js";
export type { LabelMatrix, StateRows } from "./ule.js";
export {
  CLASS_PLACEHOLDER,
  DEFAULT_TEMPLATE,
  SpecError,
  fillTemplate,
  parseClassFile,
  parseMappingFile,
  validateSpec,
  validateTemplate,
} from "./spec.js";
export type { CoarseMode, EncoderKind, ExportSpec } from "./spec.js";
export { loadEncoder, EncoderLoadError } from "./encoders/index.js";
export type { TextEncoder } from "./encoders/index.js";
export { buildLabelMatrix, buildStateRows, exportLabelEmbeddings } from "./export.js";
export { runCli } from "./cli.js";

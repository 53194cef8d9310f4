import { EncoderKind } from "../spec.js";
import { loadGloveEncoder } from "./glove.js";
import { loadBertEncoder, loadClipEncoder } from "./pretrained.js";
import { EncoderLoadError, TextEncoder } from "./types.js";

export { EncoderLoadError, TextEncoder } from "./types.js";

export async function loadEncoder(
  kind: EncoderKind,
  opts: { gloveVectorsPath?: string } = {},
): Promise<TextEncoder> {
  switch (kind) {
    case "glove":
      if (!opts.gloveVectorsPath) {
        throw new EncoderLoadError("the glove encoder needs a word-vector file");
      }
      return loadGloveEncoder(opts.gloveVectorsPath);
    case "clip":
      return loadClipEncoder();
    case "bert":
      return loadBertEncoder();
    default:
      throw new EncoderLoadError(`unknown encoder ${JSON.stringify(kind)}`);
  }
}

/**
 * CLIP / BERT text encoders via transformers.js, loaded lazily.
 *
 * The `@huggingface/transformers` package (and its model weights) must be
 * available locally; when it is not, loading fails with a clear error and
 * the CLI exits nonzero. Model ids are pinned for reproducibility.
 */

import { EncoderLoadError, TextEncoder } from "./types.js";

export const PRETRAINED_MODELS = {
  clip: "Xenova/clip-vit-base-patch32",
  bert: "Xenova/bert-base-uncased",
} as const;

async function importTransformers(): Promise<any> {
  const moduleName = "@huggingface/transformers";
  try {
    return await import(moduleName);
  } catch (err) {
    throw new EncoderLoadError(
      `encoder backend unavailable: cannot import ${moduleName} ` +
        `(install it with \`npm install ${moduleName}\`): ${err}`,
    );
  }
}

export async function loadClipEncoder(): Promise<TextEncoder> {
  const tf = await importTransformers();
  const model_id = PRETRAINED_MODELS.clip;
  let tokenizer: any;
  let model: any;
  try {
    tokenizer = await tf.AutoTokenizer.from_pretrained(model_id);
    model = await tf.CLIPTextModelWithProjection.from_pretrained(model_id);
  } catch (err) {
    throw new EncoderLoadError(`cannot load ${model_id}: ${err}`);
  }
  return {
    name: `clip:${model_id}`,
    async encode(texts: string[]): Promise<number[][]> {
      const inputs = tokenizer(texts, { padding: true, truncation: true });
      const { text_embeds } = await model(inputs);
      return text_embeds.tolist();
    },
  };
}

export async function loadBertEncoder(): Promise<TextEncoder> {
  const tf = await importTransformers();
  const model_id = PRETRAINED_MODELS.bert;
  let extractor: any;
  try {
    extractor = await tf.pipeline("feature-extraction", model_id);
  } catch (err) {
    throw new EncoderLoadError(`cannot load ${model_id}: ${err}`);
  }
  return {
    name: `bert:${model_id}`,
    async encode(texts: string[]): Promise<number[][]> {
      const output = await extractor(texts, { pooling: "mean" });
      return output.tolist();
    },
  };
}

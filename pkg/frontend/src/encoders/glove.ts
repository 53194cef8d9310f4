/**
 * Lookup-table text encoder over a local word-vector file.
 *
 * File format: one `word v1 v2 ... vd` line per word (the classic
 * plain-text word-vector layout). A prompt embeds as the mean of its
 * tokens' vectors; every token must be in the vocabulary so that class
 * identity can never silently fall out of the embedding.
 */

import { readFileSync } from "node:fs";

import { EncoderLoadError, TextEncoder } from "./types.js";

export function tokenize(text: string): string[] {
  return text
    .toLowerCase()
    .split(/[^a-z0-9']+/)
    .filter((t) => t !== "");
}

export function loadGloveEncoder(vectorsPath: string): TextEncoder {
  let text: string;
  try {
    text = readFileSync(vectorsPath, "utf-8");
  } catch (err) {
    throw new EncoderLoadError(`cannot read word vectors at ${vectorsPath}: ${err}`);
  }
  const table = new Map<string, number[]>();
  let dim = -1;
  for (const [i, raw] of text.split("\n").entries()) {
    const line = raw.trim();
    if (line === "") continue;
    const parts = line.split(/\s+/);
    const word = parts[0];
    const vec = parts.slice(1).map(Number);
    if (!vec.every(Number.isFinite) || vec.length === 0) {
      throw new EncoderLoadError(`${vectorsPath}: unparsable vector on line ${i + 1}`);
    }
    if (dim === -1) dim = vec.length;
    if (vec.length !== dim) {
      throw new EncoderLoadError(
        `${vectorsPath}: line ${i + 1} has width ${vec.length}, expected ${dim}`,
      );
    }
    table.set(word, vec);
  }
  if (table.size === 0) throw new EncoderLoadError(`${vectorsPath}: no vectors found`);

  return {
    name: `glove:${vectorsPath}`,
    async encode(texts: string[]): Promise<number[][]> {
      return texts.map((prompt) => {
        const tokens = tokenize(prompt);
        if (tokens.length === 0) throw new Error(`prompt has no tokens: ${JSON.stringify(prompt)}`);
        const acc = new Array<number>(dim).fill(0);
        for (const token of tokens) {
          const vec = table.get(token);
          if (!vec) {
            throw new Error(
              `word ${JSON.stringify(token)} missing from vector file (prompt ${JSON.stringify(prompt)})`,
            );
          }
          for (let j = 0; j < dim; j++) acc[j] += vec[j];
        }
        return acc.map((v) => v / tokens.length);
      });
    },
  };
}

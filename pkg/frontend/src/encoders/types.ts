export interface TextEncoder {
  /** Identifier recorded for reproducibility (e.g. model id or vectors file). */
  readonly name: string;
  /** Batch-encode prompts; one fixed-width vector per input string. */
  encode(texts: string[]): Promise<number[][]>;
}

export class EncoderLoadError extends Error {}

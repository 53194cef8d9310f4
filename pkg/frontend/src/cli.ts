#!/usr/bin/env node
/**
 * ule-export: write pretrained-text-encoder label embeddings as ULE1 files.
 *
 *   export        --classes <file> | --mapping <file>
 *                 --encoder clip|bert|glove [--template <str>]
 *                 [--coarse none|avg|concat] [--glove-vectors <file>]
 *                 [--with-states] --out <path>
 *   export-states --encoder ... [--template <str>] [--glove-vectors <file>]
 *                 --out <existing ULE1 file>   (appends/replaces STATES)
 *
 * Exit codes: 0 success, 1 runtime failure (validation, encoder load), 2 usage.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { EncoderLoadError, loadEncoder } from "./encoders/index.js";
import { buildStateRows, exportLabelEmbeddings } from "./export.js";
import {
  CoarseMode,
  DEFAULT_TEMPLATE,
  EncoderKind,
  ExportSpec,
  SpecError,
  parseClassFile,
  parseMappingFile,
  validateTemplate,
} from "./spec.js";
import { UleFormatError, withStates } from "./ule.js";

class UsageError extends Error {}

const EXPORT_OPTIONS = {
  classes: { type: "string" },
  mapping: { type: "string" },
  encoder: { type: "string" },
  template: { type: "string", default: DEFAULT_TEMPLATE },
  coarse: { type: "string", default: "none" },
  "glove-vectors": { type: "string" },
  "with-states": { type: "boolean", default: false },
  out: { type: "string" },
} as const;

function required(values: Record<string, unknown>, flag: string): string {
  const v = values[flag];
  if (typeof v !== "string" || v === "") throw new UsageError(`missing required --${flag}`);
  return v;
}

function encoderKind(raw: string): EncoderKind {
  if (raw !== "clip" && raw !== "bert" && raw !== "glove") {
    throw new UsageError(`--encoder must be clip, bert or glove, got ${JSON.stringify(raw)}`);
  }
  return raw;
}

async function cmdExport(argv: string[]): Promise<void> {
  const { values } = parseArgs({ args: argv, options: EXPORT_OPTIONS });
  const coarse = values.coarse as string;
  if (coarse !== "none" && coarse !== "avg" && coarse !== "concat") {
    throw new UsageError(`--coarse must be none, avg or concat, got ${JSON.stringify(coarse)}`);
  }
  if (!values.classes && !values.mapping) {
    throw new UsageError("need --classes <file> or --mapping <file>");
  }
  const spec: ExportSpec = {
    classNames: values.classes ? parseClassFile(readFileSync(values.classes, "utf-8")) : undefined,
    mapping: values.mapping ? parseMappingFile(readFileSync(values.mapping, "utf-8")) : undefined,
    encoder: encoderKind(required(values, "encoder")),
    template: values.template as string,
    coarseMode: coarse as CoarseMode,
    outPath: required(values, "out"),
    gloveVectorsPath: values["glove-vectors"],
  };
  if (spec.coarseMode === "none" && !spec.classNames) {
    throw new UsageError("--coarse none needs --classes");
  }
  const encoder = await loadEncoder(spec.encoder, { gloveVectorsPath: spec.gloveVectorsPath });
  const text = await exportLabelEmbeddings(spec, encoder, values["with-states"] as boolean);
  writeFileSync(spec.outPath, text);
  const classCount = text.split("\n")[0].split(" ")[1];
  console.log(`wrote ${classCount} label embeddings (${encoder.name}) to ${spec.outPath}`);
}

async function cmdExportStates(argv: string[]): Promise<void> {
  const { values } = parseArgs({
    args: argv,
    options: {
      encoder: { type: "string" },
      template: { type: "string", default: DEFAULT_TEMPLATE },
      "glove-vectors": { type: "string" },
      out: { type: "string" },
    },
  });
  const template = values.template as string;
  validateTemplate(template);
  const outPath = required(values, "out");
  const existing = readFileSync(outPath, "utf-8");
  const encoder = await loadEncoder(encoderKind(required(values, "encoder")), {
    gloveVectorsPath: values["glove-vectors"],
  });
  const states = await buildStateRows(encoder, template);
  writeFileSync(outPath, withStates(existing, states));
  console.log(`wrote positive/negative state rows (${encoder.name}) into ${outPath}`);
}

export async function runCli(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "export") {
      await cmdExport(rest);
    } else if (command === "export-states") {
      await cmdExportStates(rest);
    } else {
      throw new UsageError(`usage: ule-export <export|export-states> [options]`);
    }
    return 0;
  } catch (err) {
    if (err instanceof UsageError || (err as any)?.code === "ERR_PARSE_ARGS_UNKNOWN_OPTION") {
      console.error(`usage error: ${(err as Error).message}`);
      return 2;
    }
    if (
      err instanceof SpecError ||
      err instanceof UleFormatError ||
      err instanceof EncoderLoadError ||
      err instanceof Error
    ) {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    console.error(`error: ${err}`);
    return 1;
  }
}

const isMain = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (isMain) {
  runCli(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}

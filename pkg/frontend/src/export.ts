/**
 * The export pipeline: prompts -> encoder -> ULE1 document.
 *
 * Coarse handling for hierarchical label sets:
 *  - avg:    encode every fine class prompt, average rows per coarse class;
 *  - concat: one prompt per coarse class whose [CLASS] slot lists all of its
 *            fine class names.
 */

import { TextEncoder } from "./encoders/index.js";
import { ExportSpec, SpecError, fillTemplate, validateSpec } from "./spec.js";
import { LabelMatrix, StateRows, formatUle } from "./ule.js";

function meanRows(rows: number[][]): number[] {
  const dim = rows[0].length;
  const acc = new Array<number>(dim).fill(0);
  for (const row of rows) {
    for (let j = 0; j < dim; j++) acc[j] += row[j];
  }
  return acc.map((v) => v / rows.length);
}

export async function buildLabelMatrix(
  spec: ExportSpec,
  encoder: TextEncoder,
): Promise<LabelMatrix> {
  validateSpec(spec);
  if (spec.coarseMode === "none") {
    const names = spec.classNames!;
    const rows = await encoder.encode(names.map((n) => fillTemplate(spec.template, n)));
    return { names, rows };
  }
  const mapping = spec.mapping!;
  const coarseNames = [...mapping.keys()];
  if (spec.coarseMode === "concat") {
    const prompts = coarseNames.map((coarse) =>
      fillTemplate(spec.template, mapping.get(coarse)!.join(", ")),
    );
    return { names: coarseNames, rows: await encoder.encode(prompts) };
  }
  // avg: one embedding per fine class, then the per-coarse arithmetic mean
  const fineNames = [...mapping.values()].flat();
  const fineRows = await encoder.encode(fineNames.map((n) => fillTemplate(spec.template, n)));
  const byName = new Map(fineNames.map((n, i) => [n, fineRows[i]]));
  const rows = coarseNames.map((coarse) => meanRows(mapping.get(coarse)!.map((f) => byName.get(f)!)));
  return { names: coarseNames, rows };
}

export async function buildStateRows(encoder: TextEncoder, template: string): Promise<StateRows> {
  const [positive, negative] = await encoder.encode([
    fillTemplate(template, "positive"),
    fillTemplate(template, "negative"),
  ]);
  return { positive, negative };
}

export async function exportLabelEmbeddings(
  spec: ExportSpec,
  encoder: TextEncoder,
  withStates: boolean,
): Promise<string> {
  const matrix = await buildLabelMatrix(spec, encoder);
  if (!withStates) return formatUle(matrix);
  const states = await buildStateRows(encoder, spec.template);
  if (states.positive.length !== matrix.rows[0].length) {
    throw new SpecError("encoder returned mismatched widths for labels and states");
  }
  return formatUle(matrix, states);
}

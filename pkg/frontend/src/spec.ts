/** Export job description and input-file parsing. */

export const CLASS_PLACEHOLDER = "[CLASS]";
export const DEFAULT_TEMPLATE = "The photo contains [CLASS]";

export type EncoderKind = "clip" | "bert" | "glove";
export type CoarseMode = "none" | "avg" | "concat";

export interface ExportSpec {
  classNames?: string[];
  mapping?: Map<string, string[]>;
  encoder: EncoderKind;
  template: string;
  coarseMode: CoarseMode;
  outPath: string;
  gloveVectorsPath?: string;
}

export class SpecError extends Error {}

export function validateTemplate(template: string): void {
  const hits = template.split(CLASS_PLACEHOLDER).length - 1;
  if (hits !== 1) {
    throw new SpecError(
      `template must contain ${CLASS_PLACEHOLDER} exactly once, found ${hits}: ${JSON.stringify(template)}`,
    );
  }
}

export function fillTemplate(template: string, className: string): string {
  return template.replace(CLASS_PLACEHOLDER, className);
}

function rejectDuplicates(names: string[], what: string): void {
  const seen = new Set<string>();
  for (const name of names) {
    if (seen.has(name)) throw new SpecError(`duplicate ${what}: ${JSON.stringify(name)}`);
    seen.add(name);
  }
}

/** One class name per line; blank lines and # comments ignored. */
export function parseClassFile(text: string): string[] {
  const names = text
    .split("\n")
    .map((ln) => ln.trim())
    .filter((ln) => ln !== "" && !ln.startsWith("#"));
  if (names.length === 0) throw new SpecError("class file lists no classes");
  rejectDuplicates(names, "class name");
  return names;
}

/** `coarse: fine1, fine2, ...` per line; preserves declaration order. */
export function parseMappingFile(text: string): Map<string, string[]> {
  const mapping = new Map<string, string[]>();
  text.split("\n").forEach((raw, i) => {
    const line = raw.trim();
    if (line === "" || line.startsWith("#")) return;
    const sep = line.indexOf(":");
    if (sep <= 0) throw new SpecError(`mapping line ${i + 1}: expected 'coarse: fine, ...'`);
    const coarse = line.slice(0, sep).trim();
    const fine = line
      .slice(sep + 1)
      .split(",")
      .map((m) => m.trim())
      .filter((m) => m !== "");
    if (fine.length === 0) throw new SpecError(`mapping line ${i + 1}: no fine classes listed`);
    if (mapping.has(coarse)) throw new SpecError(`duplicate coarse class ${JSON.stringify(coarse)}`);
    mapping.set(coarse, fine);
  });
  if (mapping.size === 0) throw new SpecError("mapping file defines no coarse classes");
  return mapping;
}

export function validateSpec(spec: ExportSpec): void {
  validateTemplate(spec.template);
  if (spec.coarseMode === "none") {
    if (!spec.classNames) throw new SpecError("coarse mode 'none' needs a class-name list");
    rejectDuplicates(spec.classNames, "class name");
  } else {
    if (!spec.mapping) throw new SpecError(`coarse mode '${spec.coarseMode}' needs a mapping file`);
    const fine = [...spec.mapping.values()].flat();
    rejectDuplicates(fine, "fine class name");
  }
  if (spec.encoder === "glove" && !spec.gloveVectorsPath) {
    throw new SpecError("the glove encoder needs --glove-vectors <file>");
  }
}

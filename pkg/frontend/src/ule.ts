/**
 * The ULE1 embedding file format.
 *
 * Header `ULE1 <C> <d>`, one `name,v1,...,vd` line per class, then an
 * optional STATES section holding exactly a positive and a negative row.
 * Floats are written with the shortest round-tripping decimal form, so a
 * write/read cycle is bit-exact for IEEE doubles.
 */

export interface LabelMatrix {
  names: string[];
  rows: number[][];
}

export interface StateRows {
  positive: number[];
  negative: number[];
}

export class UleFormatError extends Error {}

function checkMatrix(matrix: LabelMatrix): number {
  const { names, rows } = matrix;
  if (names.length === 0 || names.length !== rows.length) {
    throw new UleFormatError(
      `need one name per row, got ${names.length} names and ${rows.length} rows`,
    );
  }
  if (new Set(names).size !== names.length) {
    throw new UleFormatError("duplicate class names");
  }
  const dim = rows[0].length;
  rows.forEach((row, i) => {
    if (row.length !== dim) {
      throw new UleFormatError(`row ${i} has width ${row.length}, expected ${dim}`);
    }
    if (!row.every(Number.isFinite)) {
      throw new UleFormatError(`non-finite value in row ${i}`);
    }
  });
  names.forEach((name, i) => {
    if (name.includes(",") || name.includes("\n") || name.trim() === "") {
      throw new UleFormatError(`invalid class name at row ${i}: ${JSON.stringify(name)}`);
    }
  });
  return dim;
}

function formatRow(name: string, row: number[]): string {
  return [name, ...row.map((v) => String(v))].join(",");
}

export function formatUle(matrix: LabelMatrix, states?: StateRows): string {
  const dim = checkMatrix(matrix);
  const lines = [`ULE1 ${matrix.names.length} ${dim}`];
  matrix.names.forEach((name, i) => lines.push(formatRow(name, matrix.rows[i])));
  if (states) {
    if (states.positive.length !== dim || states.negative.length !== dim) {
      throw new UleFormatError(
        `state rows have width ${states.positive.length}/${states.negative.length}, expected ${dim}`,
      );
    }
    lines.push("STATES");
    lines.push(formatRow("positive", states.positive));
    lines.push(formatRow("negative", states.negative));
  }
  return lines.join("\n") + "\n";
}

function parseVector(line: string, dim: number, where: string): [string, number[]] {
  const parts = line.split(",");
  const name = parts[0].trim();
  if (name === "") throw new UleFormatError(`${where}: empty class name`);
  if (parts.length - 1 !== dim) {
    throw new UleFormatError(`${where}: expected ${dim} values, found ${parts.length - 1}`);
  }
  const values = parts.slice(1).map(Number);
  if (!values.every(Number.isFinite)) {
    throw new UleFormatError(`${where}: non-finite or unparsable value`);
  }
  return [name, values];
}

export function parseUle(text: string): { matrix: LabelMatrix; states?: StateRows } {
  const lines = text.split("\n").filter((ln) => ln.trim() !== "");
  if (lines.length === 0) throw new UleFormatError("empty file");
  const header = lines[0].split(/\s+/);
  if (header.length !== 3 || header[0] !== "ULE1") {
    throw new UleFormatError(`malformed header: ${JSON.stringify(lines[0])}`);
  }
  const numClasses = Number(header[1]);
  const dim = Number(header[2]);
  if (!Number.isInteger(numClasses) || !Number.isInteger(dim) || numClasses < 1 || dim < 1) {
    throw new UleFormatError(`header declares C=${header[1]}, d=${header[2]}`);
  }
  const body = lines.slice(1);
  const statesAt = body.findIndex((ln) => ln.trim() === "STATES");
  const rowLines = statesAt === -1 ? body : body.slice(0, statesAt);
  if (rowLines.length !== numClasses) {
    throw new UleFormatError(
      `header declares ${numClasses} classes but file has ${rowLines.length} rows`,
    );
  }
  const names: string[] = [];
  const rows: number[][] = [];
  rowLines.forEach((ln, i) => {
    const [name, values] = parseVector(ln, dim, `row ${i}`);
    if (names.includes(name)) throw new UleFormatError(`duplicate class name ${name} at row ${i}`);
    names.push(name);
    rows.push(values);
  });
  let states: StateRows | undefined;
  if (statesAt !== -1) {
    const stateLines = body.slice(statesAt + 1);
    if (stateLines.length !== 2) {
      throw new UleFormatError("STATES section must hold exactly 2 rows");
    }
    const parsed = new Map(stateLines.map((ln, i) => parseVector(ln, dim, `state row ${i}`)));
    const positive = parsed.get("positive");
    const negative = parsed.get("negative");
    if (!positive || !negative) {
      throw new UleFormatError("STATES rows must be named positive/negative");
    }
    states = { positive, negative };
  }
  return { matrix: { names, rows }, states };
}

/** Rewrite a ULE1 document with the given STATES section (replacing any). */
export function withStates(text: string, states: StateRows): string {
  const { matrix } = parseUle(text);
  return formatUle(matrix, states);
}

// Parser for pasted covariate/outcome text. Pure functions so the form
// logic can be tested without a DOM. Row coordinates in errors are
// 1-based physical line numbers in the pasted text, blank lines and
// header included, matching what the coordinator sees in the textarea.

export interface CellError {
  row: number;
  col: number;
  message: string;
}

export class CsvError extends Error {
  constructor(message: string, readonly cell: CellError | null = null) {
    super(message);
    this.name = "CsvError";
  }
}

function splitLine(line: string): string[] {
  return line.split(",").map((cell) => cell.trim());
}

/** Parse pasted CSV into a rectangular numeric matrix.
 *
 * Blank lines are skipped. With hasHeader the first non-blank line is
 * dropped. A non-numeric cell or a ragged row throws CsvError carrying
 * the offending coordinates, which the form uses to highlight the cell.
 */
export function parseMatrix(text: string, hasHeader = false): number[][] {
  const lines: { lineNo: number; cells: string[] }[] = [];
  text.split(/\r?\n/).forEach((raw, i) => {
    if (raw.trim() === "") return;
    lines.push({ lineNo: i + 1, cells: splitLine(raw) });
  });
  if (hasHeader) lines.shift();
  if (lines.length === 0) {
    throw new CsvError("no data rows");
  }
  const first = lines[0]!;
  const width = first.cells.length;
  const rows: number[][] = [];
  for (const { lineNo, cells } of lines) {
    if (cells.length !== width) {
      throw new CsvError(
        `row ${lineNo} has ${cells.length} cells, expected ${width}`,
        { row: lineNo, col: Math.min(cells.length, width) + 1, message: "ragged row" },
      );
    }
    const row: number[] = [];
    cells.forEach((cell, j) => {
      const value = Number(cell);
      if (cell === "" || !Number.isFinite(value)) {
        throw new CsvError(`row ${lineNo}, column ${j + 1}: not a number: "${cell}"`, {
          row: lineNo,
          col: j + 1,
          message: `not a number: "${cell}"`,
        });
      }
      row.push(value);
    });
    rows.push(row);
  }
  return rows;
}

/** Parse a comma or newline separated list of outcomes. */
export function parseVector(text: string): number[] {
  const cells = text
    .split(/[\n,]/)
    .map((c) => c.trim())
    .filter((c) => c !== "");
  if (cells.length === 0) throw new CsvError("no values");
  return cells.map((cell, i) => {
    const value = Number(cell);
    if (!Number.isFinite(value)) {
      throw new CsvError(`value ${i + 1} is not a number: "${cell}"`, {
        row: 1,
        col: i + 1,
        message: `not a number: "${cell}"`,
      });
    }
    return value;
  });
}

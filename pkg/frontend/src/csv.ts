/** Minimal RFC-4180 CSV reader for the solver's numeric artifacts. */

export interface Table {
  columns: string[];
  rows: Record<string, number | string>[];
}

export function parseCsv(text: string): Table {
  const records: string[][] = [];
  let field = "";
  let record: string[] = [];
  let inQuotes = false;
  for (let i = 0; i < text.length; i++) {
    const c = text[i];
    if (inQuotes) {
      if (c === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i++;
        } else {
          inQuotes = false;
        }
      } else {
        field += c;
      }
    } else if (c === '"') {
      inQuotes = true;
    } else if (c === ",") {
      record.push(field);
      field = "";
    } else if (c === "\n" || c === "\r") {
      if (c === "\r" && text[i + 1] === "\n") i++;
      record.push(field);
      field = "";
      if (record.length > 1 || record[0] !== "") records.push(record);
      record = [];
    } else {
      field += c;
    }
  }
  if (field !== "" || record.length) {
    record.push(field);
    records.push(record);
  }
  if (!records.length) throw new Error("empty CSV");
  const columns = records[0];
  const rows = records.slice(1).map((rec) => {
    const row: Record<string, number | string> = {};
    columns.forEach((name, k) => {
      const raw = rec[k] ?? "";
      const num = Number(raw);
      row[name] = raw !== "" && Number.isFinite(num) ? num : raw;
    });
    return row;
  });
  return { columns, rows };
}

export function numericColumn(table: Table, name: string): number[] {
  if (!table.columns.includes(name)) {
    throw new Error(`CSV is missing the required column '${name}'`);
  }
  return table.rows.map((r) => {
    const v = r[name];
    if (typeof v !== "number") {
      throw new Error(`non-numeric entry in column '${name}': ${v}`);
    }
    return v;
  });
}

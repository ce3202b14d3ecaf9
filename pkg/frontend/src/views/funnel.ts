import type { FunnelPayload, ReviewApi } from "../api.js";
import { clear, el } from "../dom.js";

// Every number on this board is printed verbatim from the /funnel payload.
// The server already guarantees monotone rows and totals equal to column
// sums, so the client never adds, filters, or re-derives a count. Row and
// column order also come from the payload untouched.

function cell(source: string, column: string, value: number): HTMLTableCellElement {
  return el("td", { "data-cell": `${source}:${column}` }, String(value));
}

export function renderFunnel(root: HTMLElement, payload: FunnelPayload): void {
  clear(root);
  const table = el("table", { class: "funnel-grid" });

  const head = el("tr", {}, el("th", {}, "source"));
  for (const column of payload.columns) {
    head.append(el("th", {}, column));
  }
  table.append(el("thead", {}, head));

  const body = el("tbody");
  for (const [source, row] of Object.entries(payload.rows)) {
    const tr = el("tr", {}, el("th", { scope: "row" }, source));
    for (const column of payload.columns) {
      tr.append(cell(source, column, row[column]));
    }
    body.append(tr);
  }
  table.append(body);

  const totals = el("tr", { class: "totals" }, el("th", { scope: "row" }, "total"));
  for (const column of payload.columns) {
    totals.append(cell("total", column, payload.totals[column]));
  }
  table.append(el("tfoot", {}, totals));
  root.append(table);

  const notes: string[] = [];
  for (const [source, n] of Object.entries(payload.losses)) {
    notes.push(`${source}: ${n} rejected in normalization`);
  }
  for (const [source, n] of Object.entries(payload.merges)) {
    notes.push(`${source}: ${n} merged as duplicates`);
  }
  if (notes.length > 0) {
    root.append(el("p", { class: "funnel-notes" }, notes.join("; ")));
  }
}

export class FunnelView {
  constructor(
    private api: ReviewApi,
    private root: HTMLElement,
  ) {}

  async load(): Promise<void> {
    try {
      renderFunnel(this.root, await this.api.funnel());
    } catch (err: any) {
      clear(this.root).append(el("p", { class: "error" }, `funnel unavailable: ${err.message}`));
    }
  }
}

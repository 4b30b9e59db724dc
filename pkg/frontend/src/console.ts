/** Query console: text input, sortable result table, optional live tail.
 *
 * All console state lives in the page URL (?q=...&live=1), so results are
 * shareable; the table itself is rebuilt purely from response bodies.
 */

import { ApiClient, ApiError, LatestWins } from "./api";
import { clear, el } from "./dom";
import {
  TableModel,
  applyEvent,
  rowsFromResponse,
  sortRows,
  type SortDirection,
} from "./rows";
import type { ChangeEvent } from "./types";

export interface ConsoleParams {
  q: string;
  live: boolean;
}

export class QueryConsole {
  private model: TableModel = { columns: [], rows: [], version: null };
  private guard = new LatestWins();
  private stream: EventSource | null = null;
  private sortColumn = "";
  private sortDirection: SortDirection = "asc";
  private status = el("div", { class: "status" });
  private tableBox = el("div", { class: "table-box" });
  private input = el("input", {
    type: "text",
    class: "query-input",
    placeholder: 'e.g. os.name == "Linux" and cpu.count >= 2',
  });
  private liveBox = el("input", { type: "checkbox" });

  constructor(
    private api: ApiClient,
    private onParamsChange: (params: ConsoleParams) => void,
    private makeStream: (url: string) => EventSource = (url) => new EventSource(url),
  ) {}

  mount(root: HTMLElement, params: ConsoleParams): void {
    this.input.value = params.q;
    this.liveBox.checked = params.live;
    const run = el("button", {}, ["Run query"]);
    run.addEventListener("click", () => void this.submit());
    this.input.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter") void this.submit();
    });
    this.liveBox.addEventListener("change", () => {
      this.syncParams();
      this.updateStream();
    });
    root.append(
      el("div", { class: "console-bar" }, [
        this.input,
        run,
        el("label", { class: "live-toggle" }, [this.liveBox, " live updates"]),
      ]),
      this.status,
      this.tableBox,
    );
    void this.submit();
  }

  unmount(): void {
    this.closeStream();
  }

  private syncParams(): void {
    this.onParamsChange({ q: this.input.value, live: this.liveBox.checked });
  }

  async submit(): Promise<void> {
    this.syncParams();
    const q = this.input.value;
    this.setStatus("querying…");
    try {
      const { rows, seq } = await this.api.postQuery(q);
      if (!this.guard.accept(seq)) return; // a newer query already rendered
      this.model = rowsFromResponse(rows);
      this.renderTable();
      this.setStatus(
        `${this.model.rows.length} host(s)` +
          (this.model.version !== null ? ` at index version ${this.model.version}` : ""),
      );
    } catch (err) {
      if (err instanceof ApiError) {
        this.setStatus(
          err.offset !== undefined
            ? `syntax error at byte ${err.offset}: ${err.message}`
            : `server error: ${err.message}`,
          true,
        );
      } else {
        this.setStatus(`request failed: ${String(err)}`, true);
      }
      return;
    }
    this.updateStream();
  }

  private setStatus(text: string, isError = false): void {
    this.status.textContent = text;
    this.status.className = isError ? "status error" : "status";
  }

  // --- live updates -------------------------------------------------------

  private closeStream(): void {
    if (this.stream !== null) {
      this.stream.close();
      this.stream = null;
    }
  }

  private updateStream(): void {
    this.closeStream();
    if (!this.liveBox.checked) return;
    const source = this.makeStream(this.api.streamUrl(this.input.value));
    source.onmessage = (message) => {
      void this.handleEvent(JSON.parse(message.data as string) as ChangeEvent);
    };
    this.stream = source;
  }

  async handleEvent(event: ChangeEvent): Promise<void> {
    let detail = null;
    if (event.kind !== "host_removed" && event.matched) {
      try {
        detail = await this.api.getHost(event.host_id);
      } catch {
        detail = null; // host vanished between the event and the fetch
      }
    }
    this.model = applyEvent(this.model, event, detail);
    this.renderTable();
    this.setStatus(`${this.model.rows.length} host(s), live at version ${event.version}`);
  }

  // --- table ---------------------------------------------------------------

  private renderTable(): void {
    clear(this.tableBox);
    const model =
      this.sortColumn === ""
        ? this.model
        : sortRows(this.model, this.sortColumn, this.sortDirection);
    const header = el("tr");
    for (const column of ["host", "cluster", ...model.columns]) {
      const th = el("th", {}, [column]);
      th.addEventListener("click", () => {
        this.sortDirection =
          this.sortColumn === column && this.sortDirection === "asc" ? "desc" : "asc";
        this.sortColumn = column;
        this.renderTable();
      });
      header.append(th);
    }
    const body = el("tbody");
    for (const row of model.rows) {
      const link = el("a", { href: `#/host/${encodeURIComponent(row.hostId)}` }, [row.hostId]);
      const tr = el("tr", {}, [el("td", {}, [link]), el("td", {}, [row.cluster])]);
      for (const column of model.columns) {
        tr.append(el("td", {}, [row.cells[column] ?? "n/a"]));
      }
      body.append(tr);
    }
    this.tableBox.append(el("table", { class: "hosts" }, [el("thead", {}, [header]), body]));
  }
}

/** Pure table-model construction: host rows in, render model out.
 *
 * Everything here is a pure function of the response body, which is what
 * the parity tests pin down: same JSON, same table rows, every time.
 */

import type { ChangeEvent, HostRow, MetricEntry, MetricValue } from "./types";

export const MISSING = "n/a";

export interface TableRow {
  hostId: string;
  cluster: string;
  cells: Record<string, string>;
}

export interface TableModel {
  columns: string[];
  rows: TableRow[];
  /** index version embedded in the rows; null when empty or mixed */
  version: number | null;
}

/** Wire lexical form: booleans true/false, integral floats keep a .0. */
export function lexical(entry: MetricEntry): string {
  const value: MetricValue = entry.value;
  if (typeof value === "boolean") return value ? "true" : "false";
  if (typeof value === "number" && entry.type === "float" && Number.isInteger(value)) {
    return value.toFixed(1);
  }
  return String(value);
}

function visibleMetrics(row: HostRow): Record<string, MetricEntry> {
  const kept: Record<string, MetricEntry> = {};
  for (const [name, entry] of Object.entries(row.metrics)) {
    if (entry.fresh === false) continue; // host-detail responses flag staleness
    kept[name] = entry;
  }
  return kept;
}

export function rowsFromResponse(hosts: HostRow[]): TableModel {
  const columns = new Set<string>();
  const rows: TableRow[] = [];
  let version: number | null = null;
  let mixed = false;
  for (const host of hosts) {
    const cells: Record<string, string> = {};
    for (const [name, entry] of Object.entries(visibleMetrics(host))) {
      columns.add(name);
      cells[name] = lexical(entry);
    }
    rows.push({ hostId: host.host_id, cluster: host.cluster, cells });
    if (version === null && !mixed) version = host.version;
    else if (version !== host.version) {
      mixed = true;
      version = null;
    }
  }
  rows.sort((a, b) =>
    a.cluster < b.cluster ? -1 : a.cluster > b.cluster ? 1 :
    a.hostId < b.hostId ? -1 : a.hostId > b.hostId ? 1 : 0,
  );
  return { columns: [...columns].sort(), rows, version };
}

export type SortDirection = "asc" | "desc";

/** Sort rows by host id, cluster, or a metric column (numeric-aware). */
export function sortRows(model: TableModel, column: string, direction: SortDirection): TableModel {
  const key = (row: TableRow): string =>
    column === "host" ? row.hostId : column === "cluster" ? row.cluster : row.cells[column] ?? "";
  const rows = [...model.rows].sort((a, b) => {
    const [ka, kb] = [key(a), key(b)];
    const [na, nb] = [Number(ka), Number(kb)];
    let cmp: number;
    if (ka !== "" && kb !== "" && !Number.isNaN(na) && !Number.isNaN(nb)) {
      cmp = na - nb;
    } else {
      cmp = ka < kb ? -1 : ka > kb ? 1 : 0;
    }
    if (cmp === 0) cmp = a.hostId < b.hostId ? -1 : a.hostId > b.hostId ? 1 : 0;
    return direction === "asc" ? cmp : -cmp;
  });
  return { ...model, rows };
}

/** Apply one change event; added/updated hosts need their fetched detail. */
export function applyEvent(
  model: TableModel,
  event: ChangeEvent,
  detail: HostRow | null,
): TableModel {
  const without = model.rows.filter((r) => r.hostId !== event.host_id);
  let rows = without;
  if (event.kind !== "host_removed" && event.matched && detail !== null) {
    rows = [...without, ...rowsFromResponse([detail]).rows];
  }
  const columns = new Set<string>();
  for (const row of rows) for (const name of Object.keys(row.cells)) columns.add(name);
  rows.sort((a, b) =>
    a.cluster < b.cluster ? -1 : a.cluster > b.cluster ? 1 :
    a.hostId < b.hostId ? -1 : a.hostId > b.hostId ? 1 : 0,
  );
  return { columns: [...columns].sort(), rows, version: event.version };
}

/** Metric groups behind the host-detail tabs. */
export const DETAIL_TABS: Record<string, string[]> = {
  basic: ["os.name", "os.release", "mem.total_mb"],
  processor: [
    "cpu.model",
    "cpu.count",
    "cpu.mhz",
    "cpu.util_pct",
    "load.one",
    "load.five",
    "load.fifteen",
  ],
  memory: ["mem.total_mb", "mem.free_mb", "disk.free_mb"],
};

export interface DetailLine {
  metric: string;
  value: string; // "n/a" for missing or stale, same as rendered views
  units: string;
}

export function detailLines(host: HostRow, tab: string): DetailLine[] {
  const names = DETAIL_TABS[tab] ?? [];
  return names.map((name) => {
    const entry = host.metrics[name];
    if (entry === undefined || entry.fresh === false) {
      return { metric: name, value: MISSING, units: "" };
    }
    return { metric: name, value: lexical(entry), units: entry.units };
  });
}

/** Per-host page: Basic / Processor / Memory tabs over GET /v1/hosts/{id};
 * stale metrics render as n/a, matching the server-side view semantics. */

import { ApiClient, ApiError } from "./api";
import { clear, el } from "./dom";
import { DETAIL_TABS, detailLines } from "./rows";
import type { HostRow } from "./types";

export class HostDetail {
  private box = el("div", { class: "host-detail" });

  constructor(private api: ApiClient) {}

  async mount(root: HTMLElement, hostId: string, tab: string): Promise<void> {
    root.append(this.box);
    let host: HostRow;
    try {
      host = await this.api.getHost(hostId);
    } catch (err) {
      const message =
        err instanceof ApiError && err.status === 404
          ? `no such host: ${hostId}`
          : `failed to load host: ${String(err)}`;
      this.box.append(el("p", { class: "status error" }, [message]));
      return;
    }
    this.render(host, tab in DETAIL_TABS ? tab : "basic");
  }

  private render(host: HostRow, tab: string): void {
    clear(this.box);
    this.box.append(
      el("h2", {}, [host.host_id]),
      el("p", { class: "host-meta" }, [
        `cluster ${host.cluster}, agent ${host.agent_version}, ` +
          `heartbeat ${host.heartbeat_at}, index version ${host.version}`,
      ]),
    );
    const tabs = el("div", { class: "tabs" });
    for (const name of Object.keys(DETAIL_TABS)) {
      const button = el("button", { class: name === tab ? "tab active" : "tab" }, [name]);
      button.addEventListener("click", () => {
        window.location.hash = `#/host/${encodeURIComponent(host.host_id)}?tab=${name}`;
      });
      tabs.append(button);
    }
    this.box.append(tabs);
    const body = el("tbody");
    for (const line of detailLines(host, tab)) {
      body.append(
        el("tr", {}, [
          el("td", {}, [line.metric]),
          el("td", { class: line.value === "n/a" ? "na" : "" }, [line.value]),
          el("td", {}, [line.units]),
        ]),
      );
    }
    this.box.append(
      el("table", { class: "detail" }, [
        el("thead", {}, [
          el("tr", {}, [el("th", {}, ["metric"]), el("th", {}, ["value"]), el("th", {}, ["units"])]),
        ]),
        body,
      ]),
      el("p", {}, [el("a", { href: "#/console" }, ["back to console"])]),
    );
  }
}

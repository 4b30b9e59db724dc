/** Portal entry point: hash routing between the query console, per-host
 * detail pages, and the trigger editor. All state lives in the server and
 * the page URL. */

import { ApiClient } from "./api";
import { QueryConsole } from "./console";
import { clear, el } from "./dom";
import { HostDetail } from "./hostDetail";
import { consoleHash, parseHash } from "./routes";
import { TriggerEditor } from "./triggerEditor";

const api = new ApiClient("");

let activeConsole: QueryConsole | null = null;

function renderRoute(): void {
  const root = document.getElementById("app");
  if (root === null) return;
  if (activeConsole !== null) {
    activeConsole.unmount();
    activeConsole = null;
  }
  clear(root);
  const route = parseHash(window.location.hash);
  const nav = el("nav", {}, [
    el("a", { href: "#/console" }, ["Console"]),
    " | ",
    el("a", { href: "#/triggers" }, ["Triggers"]),
  ]);
  root.append(nav);
  const body = el("div", { class: "page" });
  root.append(body);
  if (route.page === "host") {
    void new HostDetail(api).mount(body, route.hostId ?? "", route.tab ?? "basic");
  } else if (route.page === "triggers") {
    void new TriggerEditor(api).mount(body);
  } else {
    activeConsole = new QueryConsole(api, (params) => {
      history.replaceState(null, "", consoleHash(params.q, params.live));
    });
    activeConsole.mount(body, { q: route.q, live: route.live });
  }
}

window.addEventListener("hashchange", renderRoute);
window.addEventListener("DOMContentLoaded", renderRoute);

/** Hash-route parsing and construction; the page URL is the only client
 * state, so these two functions define what is shareable. */

export interface Route {
  page: "console" | "host" | "triggers";
  hostId?: string;
  tab?: string;
  q: string;
  live: boolean;
}

export function parseHash(hash: string): Route {
  const [path = "", query = ""] = hash.replace(/^#\/?/, "").split("?");
  const params = new URLSearchParams(query);
  const parts = path.split("/").filter((p) => p !== "");
  if (parts[0] === "host" && parts[1] !== undefined) {
    return {
      page: "host",
      hostId: decodeURIComponent(parts[1]),
      tab: params.get("tab") ?? "basic",
      q: "",
      live: false,
    };
  }
  if (parts[0] === "triggers") {
    return { page: "triggers", q: "", live: false };
  }
  return {
    page: "console",
    q: params.get("q") ?? "",
    live: params.get("live") === "1",
  };
}

export function consoleHash(q: string, live: boolean): string {
  const params = new URLSearchParams();
  if (q !== "") params.set("q", q);
  if (live) params.set("live", "1");
  const suffix = params.toString();
  return suffix === "" ? "#/console" : `#/console?${suffix}`;
}

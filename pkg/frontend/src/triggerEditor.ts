/** Trigger rule editor: list, toggle, delete, and a validated add form.
 * Client-side validation mirrors the server's rule invariants; server-side
 * rejections (400 ValidationError) render inline next to the form. */

import { ApiClient, ApiError } from "./api";
import { clear, el } from "./dom";
import type { TriggerAction, TriggerRule } from "./types";
import { validateRule } from "./validation";

export class TriggerEditor {
  private listBox = el("div", { class: "trigger-list" });
  private errorsBox = el("ul", { class: "errors" });

  constructor(private api: ApiClient) {}

  async mount(root: HTMLElement): Promise<void> {
    root.append(el("h2", {}, ["Trigger rules"]), this.listBox, this.form());
    await this.refresh();
  }

  private async refresh(): Promise<void> {
    let rules: TriggerRule[];
    try {
      rules = await this.api.getTriggers();
    } catch (err) {
      clear(this.listBox);
      this.listBox.append(el("p", { class: "status error" }, [`failed to load rules: ${String(err)}`]));
      return;
    }
    clear(this.listBox);
    if (rules.length === 0) {
      this.listBox.append(el("p", { class: "status" }, ["no rules defined"]));
      return;
    }
    const body = el("tbody");
    for (const rule of rules) {
      const toggle = el("button", {}, [rule.enabled ? "disable" : "enable"]);
      toggle.addEventListener("click", () => {
        void this.api.setTriggerEnabled(rule.id, !rule.enabled).then(() => this.refresh());
      });
      const remove = el("button", {}, ["delete"]);
      remove.addEventListener("click", () => {
        void this.api.deleteTrigger(rule.id).then(() => this.refresh());
      });
      body.append(
        el("tr", {}, [
          el("td", {}, [rule.id]),
          el("td", {}, [rule.enabled ? "yes" : "no"]),
          el("td", {}, [rule.scope || "(all hosts)"]),
          el("td", {}, [rule.condition]),
          el("td", {}, [String(rule.sustain_samples)]),
          el("td", {}, [String(rule.cooldown_seconds)]),
          el("td", {}, [rule.action.kind]),
          el("td", {}, [toggle, " ", remove]),
        ]),
      );
    }
    this.listBox.append(
      el("table", { class: "triggers" }, [
        el("thead", {}, [
          el("tr", {}, [
            el("th", {}, ["id"]),
            el("th", {}, ["enabled"]),
            el("th", {}, ["scope"]),
            el("th", {}, ["condition"]),
            el("th", {}, ["sustain"]),
            el("th", {}, ["cooldown"]),
            el("th", {}, ["action"]),
            el("th", {}, [""]),
          ]),
        ]),
        body,
      ]),
    );
  }

  private form(): HTMLElement {
    const id = el("input", { type: "text", placeholder: "rule id" });
    const scope = el("input", { type: "text", placeholder: "scope query (empty = all hosts)" });
    const condition = el("input", { type: "text", placeholder: 'condition, e.g. load.one > 0.9' });
    const sustain = el("input", { type: "number", value: "1", min: "1" });
    const cooldown = el("input", { type: "number", value: "0", min: "0" });
    const kind = el("select", {}, [
      el("option", { value: "log" }, ["log"]),
      el("option", { value: "exec" }, ["exec"]),
      el("option", { value: "webhook" }, ["webhook"]),
    ]);
    const payload = el("input", {
      type: "text",
      placeholder: "log message / exec command / webhook url",
    });
    const add = el("button", {}, ["add rule"]);
    add.addEventListener("click", () => void this.submit());

    const submitRule = (): TriggerRule => {
      const action: TriggerAction = { kind: kind.value as TriggerAction["kind"] };
      if (action.kind === "log") action.message = payload.value;
      else if (action.kind === "exec") action.command = payload.value;
      else action.url = payload.value;
      return {
        id: id.value,
        scope: scope.value,
        condition: condition.value,
        sustain_samples: Number(sustain.value),
        cooldown_seconds: Number(cooldown.value),
        action,
        enabled: true,
      };
    };
    this.submit = async () => {
      clear(this.errorsBox);
      const rule = submitRule();
      const problems = validateRule(rule);
      if (problems.length > 0) {
        for (const problem of problems) this.errorsBox.append(el("li", {}, [problem]));
        return;
      }
      try {
        await this.api.addTrigger(rule);
      } catch (err) {
        const text =
          err instanceof ApiError ? `server rejected rule: ${err.message}` : String(err);
        this.errorsBox.append(el("li", {}, [text]));
        return;
      }
      id.value = "";
      condition.value = "";
      payload.value = "";
      await this.refresh();
    };
    return el("div", { class: "trigger-form" }, [
      el("h3", {}, ["Add rule"]),
      el("div", { class: "form-grid" }, [id, scope, condition, sustain, cooldown, kind, payload, add]),
      this.errorsBox,
    ]);
  }

  private submit: () => Promise<void> = async () => undefined;
}

/** Client-side trigger rule validation mirroring the server's invariants:
 * non-empty id, sustain >= 1, cooldown >= 0, a single `path op literal`
 * condition clause, and an action payload matching its kind. The server
 * remains authoritative; this only catches mistakes before the round trip.
 */

import type { TriggerRule } from "./types";

const PATH = /^[a-z0-9_]+(\.[a-z0-9_]+)*$/;
const CLAUSE = /^\s*([a-z0-9_.]+)\s*(==|!=|<=|>=|<|>|~=)\s*(.+?)\s*$/;

export function isValidLiteral(text: string): boolean {
  if (text === "true" || text === "false") return true;
  if (/^-?\d+$/.test(text)) return true;
  if (/^-?\d+\.\d+([eE][+-]?\d+)?$/.test(text) || /^-?\d+[eE][+-]?\d+$/.test(text)) return true;
  if (text.length >= 2 && text.startsWith('"') && text.endsWith('"')) return true;
  return false;
}

export function validateCondition(condition: string): string | null {
  const match = CLAUSE.exec(condition);
  if (!match) return "condition must be one `path op literal` clause";
  const [, path, , literal] = match;
  if (!PATH.test(path!)) return `bad metric path ${path}`;
  if (!isValidLiteral(literal!)) {
    return "literal must be a quoted string, number, true or false";
  }
  return null;
}

export function validateRule(rule: TriggerRule): string[] {
  const errors: string[] = [];
  if (!rule.id.trim()) errors.push("id must be non-empty");
  if (!Number.isInteger(rule.sustain_samples) || rule.sustain_samples < 1) {
    errors.push("sustain_samples must be an integer >= 1");
  }
  if (!Number.isInteger(rule.cooldown_seconds) || rule.cooldown_seconds < 0) {
    errors.push("cooldown_seconds must be an integer >= 0");
  }
  const conditionError = validateCondition(rule.condition);
  if (conditionError) errors.push(conditionError);
  switch (rule.action.kind) {
    case "log":
      break;
    case "exec":
      if (!rule.action.command?.trim()) errors.push("exec action needs a command");
      break;
    case "webhook":
      if (!rule.action.url?.trim()) errors.push("webhook action needs a url");
      break;
    default:
      errors.push("action kind must be log, exec or webhook");
  }
  return errors;
}

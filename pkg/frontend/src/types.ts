/** JSON shapes served by the /v1 API. */

export type MetricValue = string | number | boolean;

export interface MetricEntry {
  type: "string" | "int" | "float" | "bool";
  kind: "static" | "dynamic";
  value: MetricValue;
  units: string;
  collected_at: number;
  ttl_seconds: number;
  /** present only on GET /v1/hosts/{id} */
  fresh?: boolean;
}

export interface HostRow {
  host_id: string;
  cluster: string;
  agent_version: string;
  heartbeat_at: number;
  version: number;
  metrics: Record<string, MetricEntry>;
}

export interface ClustersResponse {
  version: number;
  updated_at: number;
  clusters: { name: string; hosts: number }[];
}

export interface ChangeEvent {
  kind: "host_added" | "host_removed" | "metrics_updated";
  host_id: string;
  cluster: string;
  version: number;
  matched: boolean;
}

export interface TriggerAction {
  kind: "log" | "exec" | "webhook";
  message?: string;
  command?: string;
  url?: string;
}

export interface TriggerRule {
  id: string;
  scope: string;
  condition: string;
  sustain_samples: number;
  cooldown_seconds: number;
  action: TriggerAction;
  enabled: boolean;
}

export interface SourceStatus {
  source_id: string;
  kind: string;
  expired: boolean;
  degraded: boolean;
  consecutive_failures: number;
  lease_expires_at: number;
  [extra: string]: unknown;
}

export interface ApiErrorBody {
  error: string;
  offset?: number;
  rule?: string;
}

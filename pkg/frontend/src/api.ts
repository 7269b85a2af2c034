// Typed client for the moderation service HTTP API. The UI never computes
// classification or uncertainty values itself; everything rendered comes
// from these responses.

export interface ModerationItem {
  item_id: number;
  text: string;
  predicted_label: number;
  class_probabilities: number[];
  uncertainty: number;
  score_function: string;
  status: 'auto' | 'pending' | 'resolved';
  received_ts: number;
  final_label: number | null;
  moderator_id: string | null;
  resolved_ts: number | null;
}

export interface ServiceStats {
  total: number;
  auto_count: number;
  pending_count: number;
  resolved_count: number;
  moderation_load: number;
  threshold: number | '-inf';
}

export interface ServiceConfig {
  threshold: number | '-inf';
  score_function: string;
  mode: string;
  T: number;
  model_ref: string | null;
  class_names: string[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      detail = ((await resp.json()) as { error?: string }).error ?? detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private fetchFn: FetchLike, private base = '') {}

  getQueue(status = 'pending', limit?: number, offset?: number): Promise<ModerationItem[]> {
    const params = new URLSearchParams({ status });
    if (limit !== undefined) params.set('limit', String(limit));
    if (offset !== undefined) params.set('offset', String(offset));
    return this.fetchFn(`${this.base}/api/queue?${params}`).then((r) => asJson<ModerationItem[]>(r));
  }

  submitDecision(itemId: number, label: number, moderatorId: string): Promise<ModerationItem> {
    return this.fetchFn(`${this.base}/api/queue/${itemId}/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ label, moderator_id: moderatorId }),
    }).then((r) => asJson<ModerationItem>(r));
  }

  getStats(): Promise<ServiceStats> {
    return this.fetchFn(`${this.base}/api/stats`).then((r) => asJson<ServiceStats>(r));
  }

  getConfig(): Promise<ServiceConfig> {
    return this.fetchFn(`${this.base}/api/config`).then((r) => asJson<ServiceConfig>(r));
  }
}

// All numbers shown in the UI go through this: API values, 4 decimals.
export function fmt4(value: number | '-inf'): string {
  return value === '-inf' ? '-inf' : value.toFixed(4);
}

export function loadPercent(stats: ServiceStats): string {
  return (stats.moderation_load * 100).toFixed(1) + '%';
}

import { ModerationItem, ServiceStats } from '../src/api.js';

export function item(id: number, uncertainty: number, overrides: Partial<ModerationItem> = {}): ModerationItem {
  return {
    item_id: id,
    text: `document ${id}`,
    predicted_label: 0,
    class_probabilities: [0.55, 0.25, 0.15, 0.05],
    uncertainty,
    score_function: 'lc',
    status: 'pending',
    received_ts: 1700000000000 + id,
    final_label: null,
    moderator_id: null,
    resolved_ts: null,
    ...overrides,
  };
}

export function stats(overrides: Partial<ServiceStats> = {}): ServiceStats {
  return {
    total: 2,
    auto_count: 1,
    pending_count: 1,
    resolved_count: 0,
    moderation_load: 0.5,
    threshold: 0.25,
    ...overrides,
  };
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export function deferred<T>() {
  let resolve!: (value: T) => void;
  let reject!: (err: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

/** Route-table fetch stub; records every request it serves. */
export function fakeFetch(routes: Record<string, (init?: RequestInit) => Response | Promise<Response>>) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fetchFn = (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    for (const [prefix, handler] of Object.entries(routes)) {
      if (url.startsWith(prefix)) return Promise.resolve(handler(init));
    }
    return Promise.resolve(jsonResponse(404, { error: `no stub for ${url}` }));
  };
  return { fetchFn, calls };
}

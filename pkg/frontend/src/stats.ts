// Stats dashboard state: a fixed-interval poll of /api/stats. Values are
// never extrapolated locally; on failure the last response stays visible
// with a staleness marker.

import { ApiClient, ServiceStats } from './api.js';

export interface StatsState {
  stats: ServiceStats | null;
  stale: boolean;
}

type Listener = (state: StatsState) => void;

export class StatsPoller {
  private state: StatsState = { stats: null, stale: false };
  private listeners: Listener[] = [];
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private api: ApiClient) {}

  getState(): StatsState {
    return this.state;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  async poll(): Promise<void> {
    try {
      const stats = await this.api.getStats();
      this.set({ stats, stale: false });
    } catch {
      this.set({ ...this.state, stale: true });
    }
  }

  start(intervalMs = 2000): void {
    void this.poll();
    this.timer = setInterval(() => void this.poll(), intervalMs);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  private set(state: StatsState): void {
    this.state = state;
    for (const listener of this.listeners) listener(this.state);
  }
}

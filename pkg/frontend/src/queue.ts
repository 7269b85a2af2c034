// Pending-queue state. Items stay exactly in API order (the service
// sorts by uncertainty desc, id asc); nothing is removed or re-ranked
// locally until the server acknowledges a decision.

import { ApiClient, ApiError, ModerationItem } from './api.js';

export interface QueueState {
  items: ModerationItem[];
  selectedId: number | null;
  inFlight: Set<number>;
  notice: string | null;
  error: string | null;
}

type Listener = (state: QueueState) => void;

export class QueueStore {
  private state: QueueState = {
    items: [],
    selectedId: null,
    inFlight: new Set(),
    notice: null,
    error: null,
  };
  private listeners: Listener[] = [];

  constructor(private api: ApiClient, private moderatorId: string) {}

  getState(): QueueState {
    return this.state;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private update(patch: Partial<QueueState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  async refresh(): Promise<void> {
    try {
      const items = await this.api.getQueue('pending');
      const selected =
        this.state.selectedId !== null && items.some((i) => i.item_id === this.state.selectedId)
          ? this.state.selectedId
          : items.length > 0
            ? items[0].item_id
            : null;
      this.update({ items, selectedId: selected, error: null });
    } catch (err) {
      // non-blocking: keep whatever is on screen, surface a retryable banner
      this.update({ error: `queue refresh failed: ${message(err)}` });
    }
  }

  select(itemId: number): void {
    if (this.state.items.some((i) => i.item_id === itemId)) {
      this.update({ selectedId: itemId });
    }
  }

  selectStep(delta: number): void {
    const { items, selectedId } = this.state;
    if (items.length === 0) return;
    const idx = items.findIndex((i) => i.item_id === selectedId);
    const next = idx === -1 ? 0 : Math.min(items.length - 1, Math.max(0, idx + delta));
    this.update({ selectedId: items[next].item_id });
  }

  selected(): ModerationItem | null {
    return this.state.items.find((i) => i.item_id === this.state.selectedId) ?? null;
  }

  /** Submit a label; local state changes only on server acknowledgment. */
  async submit(itemId: number, label: number): Promise<void> {
    if (this.state.inFlight.has(itemId)) return; // double-click guard
    this.update({ inFlight: new Set(this.state.inFlight).add(itemId), notice: null });
    try {
      await this.api.submitDecision(itemId, label, this.moderatorId);
      this.removeItem(itemId, null);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else resolved it; state untouched, then re-sync
        this.clearInFlight(itemId, `item ${itemId} was already resolved elsewhere`);
        await this.refresh();
      } else if (err instanceof ApiError && err.status === 404) {
        this.removeItem(itemId, `item ${itemId} no longer exists`);
      } else {
        this.clearInFlight(itemId, `decision failed: ${message(err)}`);
      }
    }
  }

  private removeItem(itemId: number, notice: string | null): void {
    const items = this.state.items.filter((i) => i.item_id !== itemId);
    const inFlight = new Set(this.state.inFlight);
    inFlight.delete(itemId);
    let selectedId = this.state.selectedId;
    if (selectedId === itemId) {
      // advance to the next item in queue order
      const oldIdx = this.state.items.findIndex((i) => i.item_id === itemId);
      selectedId = items.length > 0 ? items[Math.min(oldIdx, items.length - 1)].item_id : null;
    }
    this.update({ items, inFlight, selectedId, notice });
  }

  private clearInFlight(itemId: number, notice: string): void {
    const inFlight = new Set(this.state.inFlight);
    inFlight.delete(itemId);
    this.update({ inFlight, notice });
  }
}

function message(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

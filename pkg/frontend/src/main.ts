import { ApiClient, ServiceConfig } from './api.js';
import { QueueStore } from './queue.js';
import { StatsPoller } from './stats.js';
import { renderBanners, renderDetail, renderQueue, renderStats } from './render.js';

const QUEUE_POLL_MS = 2000;

function main(): void {
  const api = new ApiClient((url, init) => fetch(url, init));
  const store = new QueueStore(api, 'moderator');
  const poller = new StatsPoller(api);
  let config: ServiceConfig | null = null;

  const statsEl = document.getElementById('stats')!;
  const queueEl = document.getElementById('queue')!;
  const detailEl = document.getElementById('detail')!;
  const bannerEl = document.getElementById('banners')!;

  const repaint = () => {
    renderQueue(queueEl, store.getState());
    renderDetail(detailEl, store.selected(), config, store.getState());
    renderBanners(bannerEl, store.getState());
  };
  store.subscribe(repaint);
  poller.subscribe((state) => renderStats(statsEl, state));

  queueEl.addEventListener('click', (event) => {
    const row = (event.target as HTMLElement).closest('[data-id]');
    if (row) store.select(Number(row.getAttribute('data-id')));
  });
  detailEl.addEventListener('click', (event) => {
    const button = (event.target as HTMLElement).closest('button[data-label]');
    const item = store.selected();
    if (button && item) {
      void store.submit(item.item_id, Number(button.getAttribute('data-label')));
    }
  });
  bannerEl.addEventListener('click', (event) => {
    if ((event.target as HTMLElement).id === 'retry') void store.refresh();
  });

  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLInputElement) return;
    const item = store.selected();
    if (/^[1-9]$/.test(event.key) && item) {
      const label = Number(event.key) - 1;
      if (label < item.class_probabilities.length) {
        void store.submit(item.item_id, label);
      }
    } else if (event.key === ' ' || event.key === 'ArrowDown') {
      event.preventDefault();
      store.selectStep(1);
    } else if (event.key === 'ArrowUp') {
      event.preventDefault();
      store.selectStep(-1);
    }
  });

  void api.getConfig().then((c) => {
    config = c;
    repaint();
  });
  void store.refresh();
  setInterval(() => void store.refresh(), QUEUE_POLL_MS);
  poller.start();
}

document.addEventListener('DOMContentLoaded', main);

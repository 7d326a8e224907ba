// Headless-DOM walk of the whole annotator against a scripted fake service:
// create a run, advance, label with the keyboard, undo, lose an image, skip,
// hit the auto-submit prompt, watch training, and read the dashboard.

import { afterEach, beforeEach, describe, expect, it } from 'vitest';
import { ApiClient, type FetchLike } from '../src/api.js';
import { AnnotatorApp } from '../src/app.js';
import type { BatchView, HistoryRecord, PairView, RunSummary } from '../src/types.js';

const H = 3;
const PLANNED = 2;

function mkPair(round: number, n: number): PairView {
  const lo = `s0${n}-r${round}a`;
  const hi = `s0${n}-r${round}b`;
  return {
    key: `${lo}|${hi}`,
    lo,
    hi,
    score: 0.01 * (n + 1),
    value: 0.4 + 0.01 * n,
    cluster_id: n,
    lo_image: `/items/${lo}/image?run=run-0001`,
    hi_image: `/items/${hi}/image?run=run-0001`,
  };
}

function mkRecord(iteration: number): HistoryRecord {
  return {
    iteration,
    bits_spent: 20 + H * (iteration + 1),
    n_pairs: 40 + 10 * iteration,
    n_transitive: 5 * (iteration + 1),
    n_conflicts: 0,
    map_value: 0.5 + 0.1 * iteration,
    map_included: 6,
    map_excluded: 0,
    train_loss: 0.3,
    threshold: 0.8 + 0.01 * iteration,
    mu_sim: 0.9,
    mu_dsim: 0.4,
    sigma_sim: 0.05,
    sigma_dsim: 0.1,
    n_selected: H,
  };
}

/** Contract-level imitation of the service: sync state machine + label ledger. */
class FakeService {
  status: 'idle' | 'training' | 'awaiting_labels' | 'done' = 'idle';
  iteration = 0;
  history: HistoryRecord[] = [];
  received = new Map<string, 0 | 1>();
  labelLog: { key: string; label: 0 | 1 }[] = [];
  pairs: PairView[] = [];
  created: unknown = null;
  exists = false;
  /** one GET /state while training before the batch appears */
  private trainPolls = 0;

  summary(): RunSummary {
    return {
      id: 'run-0001',
      name: 'demo',
      status: this.status,
      iteration: this.iteration,
      planned_iterations: PLANNED,
      bits_spent: 20 + this.iteration * H,
      n_labeled: 20 + this.iteration * H,
      strategy: 'mgue',
      error: null,
    };
  }

  batchView(): BatchView {
    const pending = this.pairs.filter((p) => !this.received.has(p.key));
    return {
      iteration: this.iteration,
      threshold: 0.8,
      map_value: 0.5,
      batch_size: this.pairs.length,
      received: this.received.size,
      bits_spent: 20 + this.iteration * H,
      pairs: pending,
    };
  }

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? 'GET';
    const path = new URL(url).pathname;
    const json = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { 'content-type': 'application/json' },
      });

    if (path === '/runs' && method === 'GET') {
      return json(200, this.exists ? [this.summary()] : []);
    }
    if (path === '/runs' && method === 'POST') {
      this.exists = true;
      this.created = JSON.parse(String(init?.body));
      return json(201, { ...this.summary(), session_token: 'tok-fake' });
    }
    if (path === '/runs/run-0001/state') {
      if (this.status === 'training' && ++this.trainPolls >= 2) {
        this.status = 'awaiting_labels';
        this.pairs = [0, 1, 2].map((n) => mkPair(this.iteration, n));
        this.received.clear();
      }
      return json(200, { ...this.summary(), history: this.history, pool_size: 400 });
    }
    if (path === '/runs/run-0001/advance' && method === 'POST') {
      if (this.status !== 'idle') return json(409, { detail: `cannot advance while ${this.status}` });
      if (this.iteration >= PLANNED) {
        this.history.push(mkRecord(this.iteration));
        this.status = 'done';
      } else {
        this.status = 'training';
        this.trainPolls = 0;
      }
      return json(200, { id: 'run-0001', status: this.status });
    }
    if (path === '/runs/run-0001/batch') {
      if (this.status !== 'awaiting_labels') return json(409, { detail: `no open batch, run is ${this.status}` });
      return json(200, this.batchView());
    }
    if (path === '/runs/run-0001/labels' && method === 'POST') {
      const body = JSON.parse(String(init?.body)) as {
        session: string;
        labels: { key: string; label: 0 | 1 }[];
      };
      if (body.session !== 'tok-fake') return json(403, { detail: 'wrong or missing writer session token' });
      if (this.status !== 'awaiting_labels') return json(409, { detail: `run is ${this.status}` });
      for (const l of body.labels) {
        this.received.set(l.key, l.label);
        this.labelLog.push(l);
      }
      if (this.received.size === this.pairs.length) {
        this.history.push(mkRecord(this.iteration));
        this.iteration += 1;
        this.received.clear();
        this.pairs = [];
        this.status = 'idle';
        return json(200, { status: 'idle', iteration: this.iteration, received: H, remaining: 0, idempotent: false });
      }
      return json(200, {
        status: 'awaiting_labels',
        iteration: this.iteration,
        received: this.received.size,
        remaining: this.pairs.length - this.received.size,
        idempotent: false,
      });
    }
    if (path === '/runs/run-0001/metrics') {
      return json(200, {
        run_id: 'run-0001',
        status: this.status,
        map_points: this.history.map((r) => ({ bits: r.bits_spent, map: r.map_value, iteration: r.iteration })),
        threshold_trace: this.history.map((r) => ({
          iteration: r.iteration, threshold: r.threshold,
          mu_sim: r.mu_sim, mu_dsim: r.mu_dsim, sigma_sim: r.sigma_sim, sigma_dsim: r.sigma_dsim,
        })),
        transitive_counts: this.history.map((r) => ({
          iteration: r.iteration, n_transitive: r.n_transitive, n_pairs: r.n_pairs, n_conflicts: r.n_conflicts,
        })),
        history: this.history,
      });
    }
    return json(404, { detail: `unknown ${method} ${path}` });
  };
}

async function waitFor(pred: () => boolean, what: string, ms = 4000): Promise<void> {
  const t0 = Date.now();
  while (!pred()) {
    if (Date.now() - t0 > ms) throw new Error(`timed out waiting for ${what}`);
    await new Promise((r) => setTimeout(r, 5));
  }
}

const press = (key: string): void => {
  document.dispatchEvent(new KeyboardEvent('keydown', { key, bubbles: true }));
};

const q = <T extends Element>(sel: string): T => {
  const node = document.querySelector(sel);
  if (!node) throw new Error(`missing ${sel}`);
  return node as T;
};

describe('annotator app against a scripted service', () => {
  let fake: FakeService;
  let app: AnnotatorApp;

  beforeEach(async () => {
    document.body.innerHTML = '<div id="app"></div>';
    localStorage.clear();
    fake = new FakeService();
    app = new AnnotatorApp(new ApiClient('http://fake.test', fake.fetch), q('#app'), {
      pollMs: 20, // long enough that the transient training view is observable
    });
    await app.start();
  });

  afterEach(() => {
    app.stop();
  });

  it('walks create -> advance -> label (keys, undo, skip) -> submit -> training -> dashboard', async () => {
    // empty state, then create a run through the form
    expect(q('#run-list').textContent).toContain('no runs yet');
    (q<HTMLInputElement>('#create-run input[name=manifest]')).value = '/data/manifest.json';
    (q<HTMLInputElement>('#create-run input[name=name]')).value = 'demo';
    (q<HTMLInputElement>('#create-run input[name=h]')).value = String(H);
    (q<HTMLInputElement>('#create-run input[name=iterations]')).value = String(PLANNED);
    q<HTMLFormElement>('#create-run').dispatchEvent(new Event('submit', { bubbles: true, cancelable: true }));
    await waitFor(() => document.querySelector('#status-card') !== null, 'status card');
    expect(fake.created).toMatchObject({
      manifest: '/data/manifest.json',
      config: { strategy: 'mgue', h: H, iterations: PLANNED },
    });

    // round 0: advance, watch the training view, then the pair screen
    q<HTMLButtonElement>('#advance').click();
    await waitFor(() => document.querySelector('#training-view') !== null, 'training view');
    await waitFor(() => document.querySelector('#pair-screen') !== null, 'pair screen');
    expect(q('.pair-progress').textContent).toBe(`pair 1 of ${H}`);
    expect(q('.queue-note').textContent).toBe(`server pending: ${H}`);
    const firstImg = q<HTMLImageElement>('.pair-lo img');
    expect(firstImg.src).toBe('http://fake.test/items/s00-r0a/image?run=run-0001');

    // keyboard: decide, undo (pair returns to the head), decide again
    const firstKey = fake.pairs[0]!.key;
    press('s');
    expect(q('.pair-progress').textContent).toBe(`pair 2 of ${H}`);
    press('u');
    expect(q('.pair-progress').textContent).toBe(`pair 1 of ${H}`);
    expect(q('.pair-lo figcaption').textContent).toBe('s00-r0a');
    press('s'); // decision 1 buffered again
    press('d'); // decision 2 buffered, decision 1 flushes
    await app.flushed();
    expect(fake.labelLog).toEqual([{ key: firstKey, label: 1 }]);

    // third pair: image breaks -> placeholder, skip keeps it pending
    const img = q<HTMLImageElement>('.pair-lo img');
    img.dispatchEvent(new Event('error'));
    expect(q('.pair-lo').classList.contains('broken')).toBe(true);
    expect(q('.image-placeholder').textContent).toContain('skip');
    q<HTMLButtonElement>('#btn-skip').click(); // single pair left: rotates to itself
    expect(q('.pair-progress').textContent).toBe(`pair 3 of ${H}`);
    press('s'); // last decision: queue empty -> auto-submit prompt
    await app.flushed();
    expect(document.querySelector('#submit-prompt')).not.toBeNull();
    expect(q('#submit-prompt').textContent).toContain(`all ${H} pairs decided`);

    // no label was fabricated: only explicit keystrokes have been POSTed
    expect(app.postedLabels).toBe(2);
    expect(fake.labelLog).toHaveLength(2);

    // confirm: final label flushes, the round applies, next round trains
    q<HTMLButtonElement>('#btn-submit-batch').click();
    await waitFor(() => fake.iteration === 1, 'round applied');
    expect(app.postedLabels).toBe(3);
    await waitFor(() => document.querySelector('#pair-screen') !== null, 'round 1 batch');

    // the dashboard gained the completed round: one mAP point, audit on hover
    const circles = document.querySelectorAll('#map-chart circle.point');
    expect(circles).toHaveLength(1);
    expect(circles[0]?.querySelector('title')?.textContent).toContain('iteration 0');
    expect(document.querySelector('#threshold-chart')).not.toBeNull(); // mgue run

    // round 1 via buttons; server pending tracks flush acks
    q<HTMLButtonElement>('#btn-similar').click();
    q<HTMLButtonElement>('#btn-dissimilar').click();
    await app.flushed();
    expect(q('.queue-note').textContent).toBe('server pending: 2');
    q<HTMLButtonElement>('#btn-similar').click();
    await app.flushed();
    q<HTMLButtonElement>('#btn-submit-batch').click();
    await waitFor(() => fake.iteration === 2, 'round 1 applied');

    // planned rounds exhausted: the advance finalizes, dashboard shows all points
    await waitFor(() => document.querySelector('.badge-done') !== null, 'done view');
    expect(document.querySelectorAll('#map-chart circle.point')).toHaveLength(3);
    expect(fake.labelLog).toHaveLength(6);
    expect(app.postedLabels).toBe(6);
  });

  it('ignores annotation keys while typing in the create form', async () => {
    fake.exists = true;
    fake.status = 'awaiting_labels';
    fake.pairs = [0, 1, 2].map((n) => mkPair(0, n));
    localStorage.setItem('anneal-token:run-0001', 'tok-fake');
    await app.selectRun('run-0001');
    await waitFor(() => document.querySelector('#pair-screen') !== null, 'pair screen');

    const manifestInput = q<HTMLInputElement>('#create-run input[name=manifest]');
    manifestInput.dispatchEvent(new KeyboardEvent('keydown', { key: 's', bubbles: true }));
    expect(q('.pair-progress').textContent).toBe('pair 1 of 3'); // nothing decided
    press('s');
    expect(q('.pair-progress').textContent).toBe('pair 2 of 3');
  });

  it('resumes a half-labeled batch from the server subset view', async () => {
    fake.exists = true;
    fake.status = 'awaiting_labels';
    fake.pairs = [0, 1, 2].map((n) => mkPair(0, n));
    fake.received.set(fake.pairs[0]!.key, 1); // one label already durable
    localStorage.setItem('anneal-token:run-0001', 'tok-fake');
    await app.selectRun('run-0001');
    await waitFor(() => document.querySelector('#pair-screen') !== null, 'pair screen');

    expect(q('.pair-progress').textContent).toBe('pair 2 of 3');
    expect(q('.queue-note').textContent).toBe('server pending: 2');
    expect(q('.pair-lo figcaption').textContent).toBe('s01-r0a'); // first unlabeled
  });

  it('an undo with nothing buffered explains itself without posting anything', async () => {
    fake.exists = true;
    fake.status = 'awaiting_labels';
    fake.pairs = [0, 1, 2].map((n) => mkPair(0, n));
    localStorage.setItem('anneal-token:run-0001', 'tok-fake');
    await app.selectRun('run-0001');
    await waitFor(() => document.querySelector('#pair-screen') !== null, 'pair screen');

    press('u');
    expect(q('#error-banner').textContent).toContain('nothing to undo');
    expect(app.postedLabels).toBe(0);
  });
});

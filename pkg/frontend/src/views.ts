// DOM builders for the annotator. Pure data -> element functions; all service
// traffic stays in app.ts, so these are trivially renderable in a headless DOM.

import { lineChart, type ChartPoint } from './chart.js';
import type { AnnotationSession } from './session.js';
import type { MetricsView, PairView, RunSummary, StateView } from './types.js';

type Child = Node | string | null | undefined;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === 'class') node.className = v;
    else node.setAttribute(k, v);
  }
  for (const child of children) {
    if (child === null || child === undefined) continue;
    node.append(child);
  }
  return node;
}

const STATUS_LABEL: Record<string, string> = {
  idle: 'idle',
  training: 'training',
  awaiting_labels: 'awaiting labels',
  done: 'done',
  failed: 'failed',
};

function statusBadge(status: string): HTMLElement {
  return el('span', { class: `badge badge-${status}` }, STATUS_LABEL[status] ?? status);
}

// ---------------------------------------------------------------------------
// sidebar: run list + create form
// ---------------------------------------------------------------------------

export interface RunListHandlers {
  onSelect(runId: string): void;
  onCreate(fields: { manifest: string; name: string; strategy: string; h: number; iterations: number }): void;
}

export function renderRunList(
  runs: RunSummary[],
  activeRunId: string | null,
  handlers: RunListHandlers,
): HTMLElement {
  const list = el('ul', { id: 'run-list', class: 'run-list' });
  for (const run of runs) {
    const item = el(
      'li',
      { class: `run-item${run.id === activeRunId ? ' active' : ''}`, 'data-run': run.id },
      el('button', { class: 'run-select', type: 'button' },
        el('span', { class: 'run-id' }, run.name ? `${run.name} (${run.id})` : run.id),
        statusBadge(run.status),
        el('span', { class: 'run-meta' },
          `${run.strategy} · round ${run.iteration}/${run.planned_iterations} · ${run.bits_spent.toFixed(0)} bits`),
      ),
    );
    item.querySelector('button')!.addEventListener('click', () => handlers.onSelect(run.id));
    list.append(item);
  }
  if (runs.length === 0) {
    list.append(el('li', { class: 'run-empty' }, 'no runs yet'));
  }

  const form = el(
    'form',
    { id: 'create-run', class: 'create-run' },
    el('h3', {}, 'New run'),
    el('label', {}, 'manifest path',
      el('input', { name: 'manifest', required: 'required', placeholder: '/data/manifest.json' })),
    el('label', {}, 'name',
      el('input', { name: 'name', placeholder: 'optional' })),
    el('label', {}, 'strategy',
      el('select', { name: 'strategy' },
        el('option', { value: 'mgue' }, 'mgue'),
        el('option', { value: 'bcgue' }, 'bcgue'),
        el('option', { value: 'random' }, 'random'))),
    el('label', {}, 'pairs per round (h)',
      el('input', { name: 'h', type: 'number', value: '10', min: '1' })),
    el('label', {}, 'rounds',
      el('input', { name: 'iterations', type: 'number', value: '5', min: '1' })),
    el('button', { type: 'submit', id: 'create-run-submit' }, 'Create run'),
  );
  form.addEventListener('submit', (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    handlers.onCreate({
      manifest: String(data.get('manifest') ?? ''),
      name: String(data.get('name') ?? ''),
      strategy: String(data.get('strategy') ?? 'mgue'),
      h: Number(data.get('h') ?? 10),
      iterations: Number(data.get('iterations') ?? 5),
    });
  });

  return el('div', { class: 'sidebar-content' }, list, form);
}

// ---------------------------------------------------------------------------
// run overview / transitional states
// ---------------------------------------------------------------------------

export function renderStatusCard(state: StateView, onAdvance: (() => void) | null): HTMLElement {
  const card = el(
    'section',
    { id: 'status-card', class: 'status-card' },
    el('h2', {}, state.name ? `${state.name} (${state.id})` : state.id),
    statusBadge(state.status),
    el('dl', { class: 'status-facts' },
      el('dt', {}, 'round'), el('dd', {}, `${state.iteration} of ${state.planned_iterations}`),
      el('dt', {}, 'bits spent'), el('dd', { id: 'bits-spent' }, state.bits_spent.toFixed(1)),
      el('dt', {}, 'labeled pairs'), el('dd', {}, String(state.n_labeled)),
      el('dt', {}, 'strategy'), el('dd', {}, state.strategy)),
  );
  if (state.error) {
    card.append(el('p', { class: 'error' }, state.error));
  }
  if (onAdvance) {
    const btn = el('button', { id: 'advance', type: 'button' },
      state.iteration < state.planned_iterations ? 'Start next round' : 'Finalize run');
    btn.addEventListener('click', onAdvance);
    card.append(btn);
  }
  return card;
}

export function renderTraining(runId: string): HTMLElement {
  return el('section', { id: 'training-view', class: 'training-view' },
    el('h2', {}, 'training'),
    el('p', {}, `run ${runId} is fitting the metric space and selecting the next batch…`));
}

export function renderErrorBanner(message: string): HTMLElement {
  return el('div', { id: 'error-banner', class: 'error', role: 'alert' }, message);
}

// ---------------------------------------------------------------------------
// pair annotation screen
// ---------------------------------------------------------------------------

export interface PairScreenHandlers {
  onSimilar(): void;
  onDissimilar(): void;
  onUndo(): void;
  onSkip(): void;
  onSubmit(): void;
  imageUrl(path: string): string;
}

function figurePanel(
  side: 'lo' | 'hi',
  itemId: string,
  imagePath: string,
  handlers: PairScreenHandlers,
): HTMLElement {
  const img = el('img', {
    class: 'pair-image',
    src: handlers.imageUrl(imagePath),
    alt: itemId,
  });
  const fig = el('figure', { class: `pair-figure pair-${side}` },
    img, el('figcaption', {}, itemId));
  img.addEventListener('error', () => {
    fig.classList.add('broken');
    img.replaceWith(el('div', { class: 'image-placeholder' },
      'image unavailable — skip keeps this pair pending'));
  });
  return fig;
}

export function renderPairScreen(
  session: AnnotationSession,
  bitsSpent: number,
  handlers: PairScreenHandlers,
): HTMLElement {
  const screen = el('section', { id: 'pair-screen', class: 'pair-screen' });
  const prog = session.progress();

  screen.append(
    el('header', { class: 'pair-header' },
      el('span', { class: 'pair-progress' }, `pair ${prog.position} of ${prog.total}`),
      el('span', { class: 'bit-ledger' },
        `${bitsSpent.toFixed(0)} bits spent · +1 bit per answer`),
      el('span', { class: 'queue-note' },
        `server pending: ${session.serverPending()}`)),
  );

  const pair = session.current();
  if (pair) {
    screen.append(
      el('div', { class: 'pair-images' },
        figurePanel('lo', pair.lo, pair.lo_image, handlers),
        figurePanel('hi', pair.hi, pair.hi_image, handlers)),
      el('p', { class: 'pair-score' },
        `uncertainty score ${pair.score.toFixed(4)} · model value ${pair.value.toFixed(4)}`),
    );
    const similar = el('button', { id: 'btn-similar', type: 'button' }, 'Similar (S)');
    const dissimilar = el('button', { id: 'btn-dissimilar', type: 'button' }, 'Dissimilar (D)');
    const undo = el('button', { id: 'btn-undo', type: 'button' }, 'Undo (U)');
    const skip = el('button', { id: 'btn-skip', type: 'button' }, 'Skip (N)');
    similar.addEventListener('click', handlers.onSimilar);
    dissimilar.addEventListener('click', handlers.onDissimilar);
    undo.addEventListener('click', handlers.onUndo);
    skip.addEventListener('click', handlers.onSkip);
    screen.append(el('div', { class: 'pair-actions' }, similar, dissimilar, undo, skip));
  } else {
    // all pairs decided: auto-submit prompt for the last buffered decision
    const submit = el('button', { id: 'btn-submit-batch', type: 'button' },
      'Submit final label and continue');
    const undo = el('button', { id: 'btn-undo', type: 'button' }, 'Undo last (U)');
    submit.addEventListener('click', handlers.onSubmit);
    undo.addEventListener('click', handlers.onUndo);
    screen.append(
      el('div', { id: 'submit-prompt', class: 'submit-prompt' },
        el('p', {}, `all ${prog.total} pairs decided — submit and start training?`),
        submit, undo),
    );
  }
  return screen;
}

// ---------------------------------------------------------------------------
// progress dashboard
// ---------------------------------------------------------------------------

export function renderDashboard(metrics: MetricsView): HTMLElement {
  const dash = el('section', { id: 'dashboard', class: 'dashboard' },
    el('h2', {}, 'progress'));

  const mapPoints: ChartPoint[] = metrics.history.map((r) => ({
    x: r.bits_spent,
    y: r.map_value,
    title:
      `iteration ${r.iteration}: mAP ${r.map_value.toFixed(4)} at ${r.bits_spent.toFixed(0)} bits\n` +
      `batch ${r.n_selected} pairs, +${r.n_transitive} transitive, ${r.n_conflicts} conflicts`,
  }));
  const mapChart = el('div', { id: 'map-chart', class: 'chart-box' });
  mapChart.innerHTML = lineChart(
    [{ label: 'mAP@k', color: '#2563eb', points: mapPoints }],
    { xLabel: 'bits of annotation', yLabel: 'mAP@k', emptyText: 'no completed iterations yet' },
  );
  dash.append(mapChart);

  // threshold trace exists only for threshold-guided (mgue) runs
  const thresholdPoints: ChartPoint[] = metrics.threshold_trace
    .filter((t) => t.threshold !== null)
    .map((t) => ({
      x: t.iteration,
      y: t.threshold as number,
      title:
        `iteration ${t.iteration}: threshold ${(t.threshold as number).toFixed(4)}\n` +
        `mu_sim ${t.mu_sim?.toFixed(4)} mu_dsim ${t.mu_dsim?.toFixed(4)}`,
    }));
  if (thresholdPoints.length > 0) {
    const thrChart = el('div', { id: 'threshold-chart', class: 'chart-box' });
    thrChart.innerHTML = lineChart(
      [{ label: 'threshold', color: '#d97706', points: thresholdPoints }],
      { xLabel: 'iteration', yLabel: 'similar/dissimilar threshold' },
    );
    dash.append(thrChart);
  }

  const transitivePoints: ChartPoint[] = metrics.transitive_counts.map((t) => ({
    x: t.iteration,
    y: t.n_transitive,
    title: `iteration ${t.iteration}: ${t.n_transitive} derived of ${t.n_pairs} total pairs`,
  }));
  const transChart = el('div', { id: 'transitive-chart', class: 'chart-box' });
  transChart.innerHTML = lineChart(
    [{ label: 'derived pairs', color: '#059669', points: transitivePoints }],
    { xLabel: 'iteration', yLabel: 'free transitive labels', yZero: true, emptyText: 'no completed iterations yet' },
  );
  dash.append(transChart);

  return dash;
}

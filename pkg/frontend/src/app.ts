// Controller: wires the API client, the per-round annotation session, and the
// DOM views together. One instance drives the whole single-page app.
//
// Labels are flushed through a serialized promise chain, one POST per
// decision, so ordering is deterministic and a failed flush can put its pair
// back at the queue head without racing later submissions.

import { ApiClient, ApiError } from './api.js';
import { AnnotationSession, DEFAULT_KEYS, type Decision, type KeyBindings } from './session.js';
import type { MetricsView, PairLabel, RunSummary, StateView } from './types.js';
import {
  el,
  renderDashboard,
  renderErrorBanner,
  renderPairScreen,
  renderRunList,
  renderStatusCard,
  renderTraining,
} from './views.js';

export interface AppOptions {
  /** Poll interval while a run is training (ms). */
  pollMs?: number;
  keys?: KeyBindings;
}

const TOKEN_PREFIX = 'anneal-token:';

export class AnnotatorApp {
  readonly api: ApiClient;
  /** Labels actually POSTed; every one traces to a keystroke or click. */
  postedLabels = 0;

  private readonly root: HTMLElement;
  private readonly pollMs: number;
  private readonly keys: KeyBindings;
  private sidebar!: HTMLElement;
  private banner!: HTMLElement;
  private main!: HTMLElement;

  private runs: RunSummary[] = [];
  private activeRunId: string | null = null;
  private session: AnnotationSession | null = null;
  private bitsSpent = 0;
  private metrics: MetricsView | null = null;
  private flushChain: Promise<void> = Promise.resolve();
  private pollTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(api: ApiClient, root: HTMLElement, opts: AppOptions = {}) {
    this.api = api;
    this.root = root;
    this.pollMs = opts.pollMs ?? 1500;
    this.keys = opts.keys ?? DEFAULT_KEYS;
  }

  async start(): Promise<void> {
    this.root.innerHTML = '';
    this.sidebar = el('aside', { id: 'sidebar', class: 'sidebar' });
    this.banner = el('div', { id: 'banner-slot' });
    this.main = el('main', { id: 'main', class: 'main' });
    this.root.append(this.sidebar, el('div', { class: 'content' }, this.banner, this.main));
    document.addEventListener('keydown', this.onKey);
    await this.refreshRuns();
  }

  stop(): void {
    document.removeEventListener('keydown', this.onKey);
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
    this.pollTimer = null;
  }

  /** Wait until every queued label POST has settled (tests, shutdown). */
  flushed(): Promise<void> {
    return this.flushChain;
  }

  // -- session tokens (persisted so a reloaded page can keep writing) -------

  private tokenFor(runId: string): string | null {
    try {
      return localStorage.getItem(TOKEN_PREFIX + runId);
    } catch {
      return null;
    }
  }

  private rememberToken(runId: string, token: string): void {
    try {
      localStorage.setItem(TOKEN_PREFIX + runId, token);
    } catch {
      // storage unavailable: labeling still works for runs created this session
    }
  }

  // -- keyboard --------------------------------------------------------------

  private onKey = (ev: KeyboardEvent): void => {
    const target = ev.target as HTMLElement | null;
    if (target && /^(input|textarea|select)$/i.test(target.tagName ?? '')) return;
    if (!this.session) return;
    const key = ev.key.toLowerCase();
    if (key === this.keys.similar) this.decide(1);
    else if (key === this.keys.dissimilar) this.decide(0);
    else if (key === this.keys.undo) this.undoLast();
    else if (key === this.keys.skip) this.skipCurrent();
  };

  // -- run list ----------------------------------------------------------------

  private async refreshRuns(): Promise<void> {
    try {
      this.runs = await this.api.listRuns();
    } catch (err) {
      this.showError(err);
      return;
    }
    this.renderSidebar();
  }

  private renderSidebar(): void {
    this.sidebar.innerHTML = '';
    this.sidebar.append(
      renderRunList(this.runs, this.activeRunId, {
        onSelect: (runId) => void this.selectRun(runId),
        onCreate: (fields) => void this.createRun(fields),
      }),
    );
  }

  private async createRun(fields: {
    manifest: string;
    name: string;
    strategy: string;
    h: number;
    iterations: number;
  }): Promise<void> {
    try {
      const created = await this.api.createRun({
        manifest: fields.manifest,
        name: fields.name,
        config: { strategy: fields.strategy, h: fields.h, iterations: fields.iterations },
      });
      this.rememberToken(created.id, created.session_token);
      this.activeRunId = created.id;
      await this.refreshRuns();
      await this.syncRun();
    } catch (err) {
      this.showError(err);
    }
  }

  async selectRun(runId: string): Promise<void> {
    this.activeRunId = runId;
    this.session = null;
    this.renderSidebar();
    await this.syncRun();
  }

  // -- run state machine -----------------------------------------------------

  private clearPoll(): void {
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
    this.pollTimer = null;
  }

  private schedulePoll(): void {
    this.clearPoll();
    this.pollTimer = setTimeout(() => void this.syncRun(), this.pollMs);
  }

  async syncRun(): Promise<void> {
    const runId = this.activeRunId;
    if (!runId) return;
    this.clearPoll();
    let state: StateView;
    try {
      state = await this.api.state(runId);
      this.metrics = await this.api.metrics(runId);
    } catch (err) {
      this.showError(err);
      return;
    }
    this.bitsSpent = state.bits_spent;
    this.clearError();

    if (state.status === 'awaiting_labels') {
      try {
        const batch = await this.api.batch(runId);
        this.bitsSpent = batch.bits_spent;
        // keep a live session (it may hold an undoable buffered decision);
        // rebuild only when the server is on a different round
        if (
          !this.session ||
          this.session.runId !== runId ||
          this.session.iteration !== batch.iteration
        ) {
          this.session = new AnnotationSession(runId, batch, this.keys);
        }
      } catch (err) {
        this.showError(err);
        return;
      }
      this.renderPair();
      return;
    }

    this.session = null;
    if (state.status === 'training') {
      this.renderMain(renderTraining(runId), true);
      this.schedulePoll();
    } else if (state.status === 'idle') {
      this.renderMain(renderStatusCard(state, () => void this.advance()), true);
    } else {
      // done or failed: no further writes, just the record of the run
      this.renderMain(renderStatusCard(state, null), true);
    }
  }

  private async advance(): Promise<void> {
    if (!this.activeRunId) return;
    try {
      await this.api.advance(this.activeRunId);
    } catch (err) {
      this.showError(err);
      return;
    }
    await this.refreshRuns();
    await this.syncRun();
  }

  // -- annotation flow ---------------------------------------------------------

  private decide(label: PairLabel): void {
    if (!this.session) return;
    for (const due of this.session.decide(label)) {
      this.enqueueFlush(due);
    }
    this.renderPair();
  }

  private undoLast(): void {
    if (!this.session) return;
    if (!this.session.undo()) {
      this.showError(new Error('nothing to undo: earlier labels are already flushed'));
      return;
    }
    this.clearError();
    this.renderPair();
  }

  private skipCurrent(): void {
    if (!this.session) return;
    this.session.skip();
    this.renderPair();
  }

  private async confirmSubmit(): Promise<void> {
    const session = this.session;
    if (!session) return;
    for (const due of session.takeFinal()) {
      this.enqueueFlush(due);
    }
    await this.flushChain;
    if (!session.complete()) {
      this.renderPair(); // a flush failed and requeued its pair
      return;
    }
    await this.advance(); // batch applied: straight into the next round
  }

  private enqueueFlush(decision: Decision): void {
    this.flushChain = this.flushChain.then(() => this.postDecision(decision));
  }

  private async postDecision(decision: Decision): Promise<void> {
    const session = this.session;
    const runId = session?.runId ?? this.activeRunId;
    if (!session || !runId) return;
    const token = this.tokenFor(runId);
    if (token === null) {
      session.requeue(decision.pair);
      this.showError(new Error(`no writer token stored for ${runId}`));
      return;
    }
    try {
      const ack = await this.api.submitLabel(runId, token, decision.pair.key, decision.label);
      this.postedLabels += 1;
      session.recordFlushAck(ack);
      if (this.session === session) this.renderPair();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409 && err.detail.includes('already')) {
        // contradicts a label the server already holds: drop, the server wins
        this.showError(err);
        return;
      }
      session.requeue(decision.pair);
      this.showError(err);
      if (this.session === session) this.renderPair();
    }
  }

  // -- rendering ----------------------------------------------------------------

  private renderPair(): void {
    const session = this.session;
    if (!session) return;
    const screen = renderPairScreen(session, this.bitsSpent, {
      onSimilar: () => this.decide(1),
      onDissimilar: () => this.decide(0),
      onUndo: () => this.undoLast(),
      onSkip: () => this.skipCurrent(),
      onSubmit: () => void this.confirmSubmit(),
      imageUrl: (path) => this.api.url(path),
    });
    this.renderMain(screen, true);
  }

  private renderMain(view: HTMLElement, withDashboard: boolean): void {
    this.main.innerHTML = '';
    this.main.append(view);
    if (withDashboard && this.metrics) {
      this.main.append(renderDashboard(this.metrics));
    }
  }

  private showError(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.banner.innerHTML = '';
    this.banner.append(renderErrorBanner(message));
  }

  private clearError(): void {
    this.banner.innerHTML = '';
  }
}

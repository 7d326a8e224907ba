// Client-side state of one labeling round. The server's batch view lists the
// pairs still unlabeled; this class feeds them to the annotator one at a time.
//
// Flush discipline: a decision is buffered on the undo stack and only becomes
// due for POSTing when a newer decision exists (or the annotator confirms the
// final submit). At most one decision is ever unflushed, so a crashed browser
// loses at most one keystroke, while undo still works on the latest decision.
// Flushed labels are durable server-side and can no longer be undone.

import type { BatchView, LabelAck, PairLabel, PairView } from './types.js';

export interface Decision {
  pair: PairView;
  label: PairLabel;
}

export interface KeyBindings {
  similar: string;
  dissimilar: string;
  undo: string;
  skip: string;
}

export const DEFAULT_KEYS: KeyBindings = {
  similar: 's',
  dissimilar: 'd',
  undo: 'u',
  skip: 'n',
};

export class AnnotationSession {
  readonly runId: string;
  readonly keys: KeyBindings;
  /** Iteration this batch belongs to (server's round index). */
  readonly iteration: number;
  /** Batch size h; progress is reported against this. */
  readonly total: number;

  private queue: PairView[];
  private undoStack: Decision[] = [];
  private flushed: number;

  constructor(runId: string, batch: BatchView, keys: KeyBindings = DEFAULT_KEYS) {
    this.runId = runId;
    this.keys = keys;
    this.iteration = batch.iteration;
    this.total = batch.batch_size;
    this.queue = [...batch.pairs];
    this.flushed = batch.received;
  }

  /** The pair on screen, always one of the server's pending keys. */
  current(): PairView | null {
    return this.queue[0] ?? null;
  }

  /** All pairs shown have been decided (some may still be buffered). */
  allDecided(): boolean {
    return this.queue.length === 0;
  }

  /** Round fully flushed; the server has every label. */
  complete(): boolean {
    return this.allDecided() && this.undoStack.length === 0;
  }

  /**
   * Record a keystroke on the current pair. Returns the decisions that are
   * now due for flushing (every buffered one except the newest).
   */
  decide(label: PairLabel): Decision[] {
    const pair = this.queue.shift();
    if (!pair) return [];
    this.undoStack.push({ pair, label });
    return this.undoStack.splice(0, this.undoStack.length - 1);
  }

  /** Undo the newest unflushed decision; its pair returns to the queue head. */
  undo(): PairView | null {
    const last = this.undoStack.pop();
    if (!last) return null;
    this.queue.unshift(last.pair);
    return last.pair;
  }

  /** Broken image etc.: rotate the current pair to the back, it stays pending. */
  skip(): void {
    const pair = this.queue.shift();
    if (pair) this.queue.push(pair);
  }

  /** A flush the server refused: the pair needs a fresh decision. */
  requeue(pair: PairView): void {
    this.queue.unshift(pair);
  }

  /** Confirm the final submit: everything still buffered becomes due. */
  takeFinal(): Decision[] {
    if (!this.allDecided()) return [];
    return this.undoStack.splice(0);
  }

  /** Fold in the server's acknowledgment of a flushed decision. */
  recordFlushAck(ack: LabelAck): void {
    this.flushed = ack.status === 'awaiting_labels' ? ack.received : this.total;
  }

  /** Pairs the server still considers unlabeled (buffered ones included). */
  serverPending(): number {
    return this.total - this.flushed;
  }

  progress(): { position: number; total: number; flushed: number; buffered: number } {
    // queue length is the ground truth; acks lag while a flush is in flight
    const decided = this.total - this.queue.length;
    return {
      position: Math.min(decided + 1, this.total),
      total: this.total,
      flushed: this.flushed,
      buffered: this.undoStack.length,
    };
  }
}

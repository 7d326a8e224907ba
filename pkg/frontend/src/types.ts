// Wire formats of the pair annotation service. Field names match the JSON
// documents the HTTP API produces and consumes, so every interface here is a
// direct transcription of one endpoint's payload.

export type RunStatus = 'idle' | 'training' | 'awaiting_labels' | 'done' | 'failed';

export type PairLabel = 0 | 1; // 1 = similar, 0 = dissimilar

/** GET /runs element; also the core of most run-scoped responses. */
export interface RunSummary {
  id: string;
  name: string;
  status: RunStatus;
  iteration: number;
  planned_iterations: number;
  bits_spent: number;
  n_labeled: number;
  strategy: string;
  error: string | null;
}

/** POST /runs response: summary plus the writer token for this session. */
export interface CreatedRun extends RunSummary {
  session_token: string;
}

/** One row of the run's budget curve (a completed iteration). */
export interface HistoryRecord {
  iteration: number;
  bits_spent: number;
  n_pairs: number;
  n_transitive: number;
  n_conflicts: number;
  map_value: number;
  map_included: number;
  map_excluded: number;
  train_loss: number;
  threshold: number | null;
  mu_sim: number | null;
  mu_dsim: number | null;
  sigma_sim: number | null;
  sigma_dsim: number | null;
  n_selected: number;
}

/** GET /runs/{id}/state response. */
export interface StateView extends RunSummary {
  history: HistoryRecord[];
  pool_size: number;
}

/** One selected pair awaiting a label. */
export interface PairView {
  key: string;
  lo: string;
  hi: string;
  score: number;
  value: number;
  cluster_id: number;
  lo_image: string;
  hi_image: string;
}

/** GET /runs/{id}/batch response: only the pairs still unlabeled. */
export interface BatchView {
  iteration: number;
  threshold: number | null;
  map_value: number;
  batch_size: number;
  received: number;
  bits_spent: number;
  pairs: PairView[];
}

/** POST /runs/{id}/labels acknowledgment. */
export interface LabelAck {
  status: RunStatus;
  iteration: number;
  received: number;
  remaining: number;
  idempotent: boolean;
}

/** GET /runs/{id}/metrics response: the dashboard series. */
export interface MetricsView {
  run_id: string;
  status: RunStatus;
  map_points: { bits: number; map: number; iteration: number }[];
  threshold_trace: {
    iteration: number;
    threshold: number | null;
    mu_sim: number | null;
    mu_dsim: number | null;
    sigma_sim: number | null;
    sigma_dsim: number | null;
  }[];
  transitive_counts: {
    iteration: number;
    n_transitive: number;
    n_pairs: number;
    n_conflicts: number;
  }[];
  history: HistoryRecord[];
}

/** POST /runs request body; config keys mirror the loop config document. */
export interface CreateRunRequest {
  manifest: string;
  name?: string;
  config?: Record<string, unknown>;
  session_token?: string;
}

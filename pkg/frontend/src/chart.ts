// Minimal SVG line chart, built as a markup string. SVG (rather than a canvas
// charting library) keeps the dashboard renderable and testable in a headless
// DOM, and native <title> elements give per-point hover audits for free.

export interface ChartPoint {
  x: number;
  y: number;
  /** Hover text (native tooltip) for this data point. */
  title?: string;
}

export interface ChartSeries {
  label: string;
  color: string;
  points: ChartPoint[];
}

export interface ChartOptions {
  width?: number;
  height?: number;
  xLabel?: string;
  yLabel?: string;
  /** Always include zero in the y domain (counts, losses). */
  yZero?: boolean;
  emptyText?: string;
}

const MARGIN = { top: 18, right: 14, bottom: 34, left: 46 };

/** Round tick step to 1/2/5 times a power of ten. */
export function tickStep(span: number, count: number): number {
  const raw = span / Math.max(1, count);
  const power = Math.pow(10, Math.floor(Math.log10(raw)));
  const frac = raw / power;
  if (frac >= 5) return 5 * power;
  if (frac >= 2) return 2 * power;
  return power;
}

export function ticks(min: number, max: number, count = 5): number[] {
  if (!(max > min)) return [min];
  const step = tickStep(max - min, count);
  const out: number[] = [];
  for (let v = Math.ceil(min / step) * step; v <= max + step * 1e-9; v += step) {
    out.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return out;
}

const fmt = (v: number): string => {
  if (!Number.isFinite(v)) return String(v);
  if (v !== 0 && (Math.abs(v) >= 1e5 || Math.abs(v) < 1e-3)) return v.toExponential(1);
  return String(parseFloat(v.toPrecision(5)));
};

const esc = (s: string): string =>
  s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;').replace(/"/g, '&quot;');

function domain(values: number[], forceZero: boolean): [number, number] {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (forceZero) {
    lo = Math.min(lo, 0);
    hi = Math.max(hi, 0);
  }
  if (lo === hi) {
    // a flat series still needs a visible band
    const pad = Math.abs(lo) > 0 ? Math.abs(lo) * 0.1 : 1;
    return [lo - pad, hi + pad];
  }
  return [lo, hi];
}

export function lineChart(series: ChartSeries[], opts: ChartOptions = {}): string {
  const width = opts.width ?? 460;
  const height = opts.height ?? 220;
  const open = `<svg class="chart" viewBox="0 0 ${width} ${height}" width="${width}" height="${height}" xmlns="http://www.w3.org/2000/svg">`;

  const all = series.flatMap((s) => s.points);
  if (all.length === 0) {
    const msg = esc(opts.emptyText ?? 'no data yet');
    return `${open}<text class="chart-empty" x="${width / 2}" y="${height / 2}" text-anchor="middle">${msg}</text></svg>`;
  }

  const [x0, x1] = domain(all.map((p) => p.x), false);
  const [y0, y1] = domain(all.map((p) => p.y), opts.yZero ?? false);
  const innerW = width - MARGIN.left - MARGIN.right;
  const innerH = height - MARGIN.top - MARGIN.bottom;
  const sx = (x: number): number => MARGIN.left + ((x - x0) / (x1 - x0)) * innerW;
  const sy = (y: number): number => MARGIN.top + innerH - ((y - y0) / (y1 - y0)) * innerH;
  const r = (v: number): string => String(Math.round(v * 100) / 100);

  const parts: string[] = [open];

  // axes and grid
  const axisY = MARGIN.top + innerH;
  parts.push(
    `<line class="axis" x1="${MARGIN.left}" y1="${axisY}" x2="${MARGIN.left + innerW}" y2="${axisY}" stroke="#999"/>`,
    `<line class="axis" x1="${MARGIN.left}" y1="${MARGIN.top}" x2="${MARGIN.left}" y2="${axisY}" stroke="#999"/>`,
  );
  for (const t of ticks(x0, x1)) {
    parts.push(
      `<text class="tick tick-x" x="${r(sx(t))}" y="${axisY + 14}" text-anchor="middle">${fmt(t)}</text>`,
    );
  }
  for (const t of ticks(y0, y1)) {
    parts.push(
      `<line class="grid" x1="${MARGIN.left}" y1="${r(sy(t))}" x2="${MARGIN.left + innerW}" y2="${r(sy(t))}" stroke="#eee"/>`,
      `<text class="tick tick-y" x="${MARGIN.left - 6}" y="${r(sy(t) + 3)}" text-anchor="end">${fmt(t)}</text>`,
    );
  }
  if (opts.xLabel) {
    parts.push(
      `<text class="label label-x" x="${MARGIN.left + innerW / 2}" y="${height - 4}" text-anchor="middle">${esc(opts.xLabel)}</text>`,
    );
  }
  if (opts.yLabel) {
    parts.push(
      `<text class="label label-y" x="10" y="${MARGIN.top - 6}" text-anchor="start">${esc(opts.yLabel)}</text>`,
    );
  }

  // legend (only when more than one series)
  if (series.length > 1) {
    let lx = MARGIN.left + 8;
    for (const s of series) {
      parts.push(
        `<text class="legend" x="${lx}" y="${MARGIN.top + 4}" fill="${s.color}">${esc(s.label)}</text>`,
      );
      lx += 10 + 7 * s.label.length;
    }
  }

  for (const s of series) {
    const ordered = [...s.points].sort((a, b) => a.x - b.x);
    if (ordered.length > 1) {
      const coords = ordered.map((p) => `${r(sx(p.x))},${r(sy(p.y))}`).join(' ');
      parts.push(
        `<polyline class="series" data-series="${esc(s.label)}" fill="none" stroke="${s.color}" stroke-width="1.6" points="${coords}"/>`,
      );
    }
    for (const p of ordered) {
      const title = p.title ? `<title>${esc(p.title)}</title>` : '';
      parts.push(
        `<circle class="point" data-series="${esc(s.label)}" cx="${r(sx(p.x))}" cy="${r(sy(p.y))}" r="3.2" fill="${s.color}">${title}</circle>`,
      );
    }
  }

  parts.push('</svg>');
  return parts.join('');
}

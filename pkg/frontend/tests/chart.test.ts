// The SVG chart is a pure string builder, so its geometry is directly checkable.

import { describe, expect, it } from 'vitest';
import { lineChart, ticks, tickStep } from '../src/chart.js';

function parseSvg(markup: string): SVGSVGElement {
  const host = document.createElement('div');
  host.innerHTML = markup;
  return host.querySelector('svg') as SVGSVGElement;
}

describe('tickStep', () => {
  it('rounds to 1/2/5 times a power of ten', () => {
    expect(tickStep(10, 5)).toBe(2);
    expect(tickStep(1, 5)).toBe(0.2);
    expect(tickStep(100, 5)).toBe(20);
    expect(tickStep(7, 5)).toBe(1);
    expect(tickStep(0.5, 5)).toBe(0.1);
  });
});

describe('ticks', () => {
  it('covers the domain at round values', () => {
    expect(ticks(0, 10)).toEqual([0, 2, 4, 6, 8, 10]);
    expect(ticks(0, 1)).toEqual([0, 0.2, 0.4, 0.6000000000000001, 0.8, 1]);
  });

  it('degenerate domain yields the single value', () => {
    expect(ticks(3, 3)).toEqual([3]);
  });
});

describe('lineChart', () => {
  const series = (points: { x: number; y: number; title?: string }[]) => [
    { label: 'mAP@k', color: '#2563eb', points },
  ];

  it('renders one circle per data point and a connecting polyline', () => {
    const svg = parseSvg(
      lineChart(series([
        { x: 0, y: 0.1 }, { x: 10, y: 0.3 }, { x: 20, y: 0.2 },
        { x: 30, y: 0.5 }, { x: 40, y: 0.6 }, { x: 50, y: 0.7 },
      ])),
    );
    expect(svg.querySelectorAll('circle.point')).toHaveLength(6);
    expect(svg.querySelectorAll('polyline.series')).toHaveLength(1);
  });

  it('spans the drawable area: extreme points land on the margins', () => {
    const svg = parseSvg(
      lineChart(series([{ x: 0, y: 0 }, { x: 10, y: 1 }]), { width: 460, height: 220 }),
    );
    const pts = (svg.querySelector('polyline.series') as SVGElement)
      .getAttribute('points')!
      .split(' ')
      .map((p) => p.split(',').map(Number));
    // margins: left 46, right 14, top 18, bottom 34
    expect(pts[0]).toEqual([46, 220 - 34]); // x0,y0 -> bottom-left
    expect(pts[1]).toEqual([460 - 14, 18]); // x1,y1 -> top-right
  });

  it('a single point still renders (padded domain, no polyline)', () => {
    const svg = parseSvg(lineChart(series([{ x: 5, y: 0.4 }])));
    expect(svg.querySelectorAll('circle.point')).toHaveLength(1);
    expect(svg.querySelectorAll('polyline.series')).toHaveLength(0);
  });

  it('point titles become native hover tooltips', () => {
    const svg = parseSvg(
      lineChart(series([{ x: 1, y: 2, title: 'iteration 3: 14 pairs' }, { x: 2, y: 3 }])),
    );
    const titles = [...svg.querySelectorAll('circle.point title')].map((t) => t.textContent);
    expect(titles).toEqual(['iteration 3: 14 pairs']);
  });

  it('empty data renders the empty-state message', () => {
    const svg = parseSvg(lineChart(series([]), { emptyText: 'no completed iterations yet' }));
    expect(svg.querySelector('.chart-empty')?.textContent).toBe('no completed iterations yet');
    expect(svg.querySelectorAll('circle')).toHaveLength(0);
  });

  it('escapes markup-significant characters in labels and titles', () => {
    const svg = parseSvg(
      lineChart(
        [{ label: 'a<b', color: '#000', points: [{ x: 0, y: 1, title: 'x & y < "z"' }] },
         { label: 'c>d', color: '#111', points: [{ x: 1, y: 2 }] }],
      ),
    );
    expect(svg.querySelector('circle.point title')?.textContent).toBe('x & y < "z"');
    const legends = [...svg.querySelectorAll('text.legend')].map((t) => t.textContent);
    expect(legends).toEqual(['a<b', 'c>d']);
  });

  it('yZero forces the baseline into the domain', () => {
    const withZero = parseSvg(
      lineChart(series([{ x: 0, y: 50 }, { x: 1, y: 60 }]), { yZero: true, height: 220 }),
    );
    const tickTexts = [...withZero.querySelectorAll('text.tick-y')].map((t) => t.textContent);
    expect(tickTexts).toContain('0');
  });
});

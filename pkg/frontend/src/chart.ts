// A-scan chart helpers: envelope decimation to a bounded polyline plus
// pixel-space mapping for the canvas renderer. Pure functions, unit tested.

export interface ChartPoint {
  index: number;
  value: number;
}

/**
 * Decimate a trace to at most maxPoints while preserving the envelope:
 * each bucket contributes its min and max sample in index order, so peaks
 * that matter for thresholding stay visible.
 */
export function decimate(samples: number[], maxPoints = 512): ChartPoint[] {
  if (maxPoints < 2) throw new Error("maxPoints must be >= 2");
  if (samples.length <= maxPoints) {
    return samples.map((value, index) => ({ index, value }));
  }
  const buckets = Math.floor(maxPoints / 2);
  const bucketSize = samples.length / buckets;
  const points: ChartPoint[] = [];
  for (let b = 0; b < buckets; b++) {
    const start = Math.floor(b * bucketSize);
    const end = Math.min(Math.floor((b + 1) * bucketSize), samples.length);
    if (start >= end) continue;
    let minIdx = start;
    let maxIdx = start;
    for (let i = start + 1; i < end; i++) {
      if (samples[i] < samples[minIdx]) minIdx = i;
      if (samples[i] > samples[maxIdx]) maxIdx = i;
    }
    const first = Math.min(minIdx, maxIdx);
    const second = Math.max(minIdx, maxIdx);
    points.push({ index: first, value: samples[first] });
    if (second !== first) points.push({ index: second, value: samples[second] });
  }
  return points;
}

export interface PolylineOptions {
  width: number;
  height: number;
  nSamples: number;
  maxValue?: number;
}

/** Map chart points into "x,y x,y ..." pixel space (SVG/canvas polyline). */
export function toPolyline(points: ChartPoint[], opts: PolylineOptions): string {
  const maxValue = opts.maxValue ?? 1.0;
  const scaleX = opts.width / Math.max(opts.nSamples - 1, 1);
  return points
    .map((p) => {
      const x = p.index * scaleX;
      const y = opts.height - (Math.min(p.value, maxValue) / maxValue) * opts.height;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

/** Horizontal threshold line height in pixel space. */
export function thresholdY(tau: number, height: number, maxValue = 1.0): number {
  return height - (Math.min(tau, maxValue) / maxValue) * height;
}

/** Pure helpers mapping service scores onto a shared time axis.
 *
 * The console plots score values exactly as received; the only arithmetic
 * here is the pixel mapping.
 */

export interface TimelinePoint {
  t: number; // seconds
  value: number; // score exactly as served
}

export interface SeriesMeta {
  count: number;
  strideFrames: number;
  fps: number;
}

export function seriesDuration(meta: SeriesMeta): number {
  return (meta.count * meta.strideFrames) / meta.fps;
}

/** One timeline point per feature step, at the step's start time. */
export function timelinePoints(
  scores: number[],
  strideFrames: number,
  fps: number,
): TimelinePoint[] {
  return scores.map((value, i) => ({ t: (i * strideFrames) / fps, value }));
}

/** The axis both curves share: the longer of the two durations. */
export function sharedTimeAxis(a: SeriesMeta, b?: SeriesMeta): number {
  const da = seriesDuration(a);
  return b ? Math.max(da, seriesDuration(b)) : da;
}

/** SVG polyline "points" attribute; scores in [0,1] fill the height top-down. */
export function pointsToPolyline(
  points: TimelinePoint[],
  width: number,
  height: number,
  tMax: number,
): string {
  if (tMax <= 0 || points.length === 0) return "";
  return points
    .map((p) => {
      const x = (p.t / tMax) * width;
      const y = (1 - p.value) * height;
      return `${round2(x)},${round2(y)}`;
    })
    .join(" ");
}

/** Shaded ground-truth spans: consecutive 1-labeled steps merged. */
export function labelSpans(
  labels: number[],
  strideFrames: number,
  fps: number,
): Array<{ start: number; end: number }> {
  const spans: Array<{ start: number; end: number }> = [];
  let open: number | null = null;
  for (let i = 0; i <= labels.length; i++) {
    const on = i < labels.length && labels[i] === 1;
    if (on && open === null) open = i;
    if (!on && open !== null) {
      spans.push({
        start: (open * strideFrames) / fps,
        end: (i * strideFrames) / fps,
      });
      open = null;
    }
  }
  return spans;
}

function round2(x: number): number {
  return Math.round(x * 100) / 100;
}

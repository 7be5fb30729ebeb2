// Escalation-region geometry for the grid overlay. The admissible set after
// q cohorts is { d : w'd <= rate * q }; with unit weights on a 2-d grid the
// boundary is the diagonal from (rate*q, 0) to (0, rate*q).

export interface RegionView {
  iteration: number;
  rate: number;
  weights?: number[]; // defaults to 1 per dimension
}

export type Point = [number, number];

function weightsFor(region: RegionView, dims: number): number[] {
  const w = region.weights;
  if (w && w.length !== dims) {
    throw new Error(`expected ${dims} weights, got ${w.length}`);
  }
  return w ?? new Array(dims).fill(1);
}

/** Right-hand side of the region inequality w'd <= rate * iteration. */
export function regionBound(region: RegionView): number {
  return region.rate * region.iteration;
}

/**
 * Dose where the boundary w'd = rate*q crosses each axis, or null for a
 * zero-weight dimension (the region never constrains it).
 */
export function axisIntercepts(region: RegionView, dims: number): Array<number | null> {
  const bound = regionBound(region);
  return weightsFor(region, dims).map((w) => (w > 0 ? bound / w : null));
}

/** Inclusive membership: boundary doses are admissible. */
export function regionContains(region: RegionView, dose: number[]): boolean {
  const weights = weightsFor(region, dose.length);
  const total = dose.reduce((acc, d, j) => acc + weights[j] * d, 0);
  return total <= regionBound(region);
}

/**
 * Endpoints of the boundary segment clipped to the unit square, for 2-d
 * grids. Returns null when the boundary degenerates (iteration 0) or lies
 * entirely outside the square (fully expanded past the far corner).
 */
export function boundarySegment(region: RegionView): [Point, Point] | null {
  const bound = regionBound(region);
  const [w0, w1] = weightsFor(region, 2);
  const pts: Point[] = [];
  const push = (x: number, y: number) => {
    if (x < -1e-12 || x > 1 + 1e-12 || y < -1e-12 || y > 1 + 1e-12) return;
    const p: Point = [Math.min(1, Math.max(0, x)), Math.min(1, Math.max(0, y))];
    if (!pts.some(([px, py]) => Math.abs(px - p[0]) < 1e-12 && Math.abs(py - p[1]) < 1e-12)) {
      pts.push(p);
    }
  };
  if (w1 > 0) push(0, bound / w1); // left edge
  if (w0 > 0) push(bound / w0, 0); // bottom edge
  if (w0 > 0) push((bound - w1) / w0, 1); // top edge
  if (w1 > 0) push(1, (bound - w0) / w1); // right edge
  if (pts.length < 2) return null;
  return [pts[0], pts[1]];
}

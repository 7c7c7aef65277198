// Thin client for the render service HTTP API.

export interface SizeLimits {
  min: number;
  max: number;
  default: number;
}

export interface Meta {
  S: number;
  N: number;
  appearance_labels: string[];
  pose_source_sets: number[];
  image_size_limits: SizeLimits;
  iteration: number;
}

export interface Coord {
  a: number;
  b: number;
  c: number;
}

export const clamp01 = (v: number): number => Math.min(Math.max(v, 0), 1);

export function clampCoord(coord: Coord): Coord {
  return { a: clamp01(coord.a), b: clamp01(coord.b), c: clamp01(coord.c) };
}

/** Cell-center coordinate for detent k of a discrete axis with `count` cells.
 *  Centers sidestep the floor-boundary ambiguity at cell edges. */
export function detentToCoord(k: number, count: number): number {
  const kk = Math.min(Math.max(k, 0), count - 1);
  return (kk + 0.5) / count;
}

/** Detent index a coordinate falls in (floor semantics, 1.0 clamps). */
export function coordToDetent(v: number, count: number): number {
  return Math.min(Math.floor(clamp01(v) * count), count - 1);
}

export function renderUrl(baseUrl: string, coord: Coord, size: number): string {
  const c = clampCoord(coord);
  const q = new URLSearchParams({
    a: c.a.toFixed(4),
    b: c.b.toFixed(4),
    c: c.c.toFixed(4),
    w: String(size),
    h: String(size),
  });
  return `${baseUrl}/api/render?${q.toString()}`;
}

export type BlobFetcher = (url: string) => Promise<Blob>;

export async function defaultFetcher(url: string): Promise<Blob> {
  const response = await fetch(url);
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { error?: string };
      if (body.error) detail = `${response.status}: ${body.error}`;
    } catch {
      // non-JSON error body; status alone is fine
    }
    throw new Error(`render request failed (${detail})`);
  }
  return response.blob();
}

export async function fetchMeta(baseUrl: string): Promise<Meta> {
  const response = await fetch(`${baseUrl}/api/meta`);
  if (!response.ok) {
    throw new Error(`meta request failed (${response.status})`);
  }
  return (await response.json()) as Meta;
}

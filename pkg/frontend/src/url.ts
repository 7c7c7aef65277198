// Slider state <-> URL query string, so explorations are shareable links.

import { Coord, clamp01 } from "./api";

export interface UrlState {
  coord: Coord;
  size: number;
  strip: "off" | "a" | "b" | "c";
}

export const DEFAULT_STATE: UrlState = {
  coord: { a: 0.5, b: 0.5, c: 0.5 },
  size: 128,
  strip: "off",
};

export function stateToQuery(state: UrlState): string {
  const q = new URLSearchParams({
    a: state.coord.a.toFixed(4),
    b: state.coord.b.toFixed(4),
    c: state.coord.c.toFixed(4),
    size: String(state.size),
  });
  if (state.strip !== "off") {
    q.set("strip", state.strip);
  }
  return q.toString();
}

export function stateFromQuery(query: string): UrlState {
  const q = new URLSearchParams(query.startsWith("?") ? query.slice(1) : query);
  const num = (key: string, fallback: number): number => {
    const raw = q.get(key);
    if (raw === null) return fallback;
    const v = Number(raw);
    return Number.isFinite(v) ? v : fallback;
  };
  const strip = q.get("strip");
  return {
    coord: {
      a: clamp01(num("a", DEFAULT_STATE.coord.a)),
      b: clamp01(num("b", DEFAULT_STATE.coord.b)),
      c: clamp01(num("c", DEFAULT_STATE.coord.c)),
    },
    size: Math.min(Math.max(Math.round(num("size", DEFAULT_STATE.size)), 16), 512),
    strip: strip === "a" || strip === "b" || strip === "c" ? strip : "off",
  };
}

// Explorer state machine: debounced render requests with monotone tokens so
// a stale response can never replace a newer frame, plus axis-strip
// prefetching for side-by-side traversal rows.
//
// Timing and fetching are injected so the logic runs under fake clocks in
// tests exactly as it runs in the browser.

import { BlobFetcher, Coord, clampCoord, renderUrl } from "./api";

export interface RenderResult {
  coord: Coord;
  token: number;
  blob: Blob;
  latencyMs: number;
}

export interface ExplorerOptions {
  baseUrl: string;
  size: number;
  /** Floor between request starts; 100 ms keeps us at <= 10 req/s. */
  minIntervalMs?: number;
  fetcher: BlobFetcher;
  now: () => number;
  setTimer: (fn: () => void, ms: number) => unknown;
  clearTimer: (handle: unknown) => void;
  onFrame: (result: RenderResult) => void;
  onError: (message: string) => void;
  onInFlight?: (busy: boolean) => void;
}

export class Explorer {
  coord: Coord = { a: 0.5, b: 0.5, c: 0.5 };
  size: number;
  lastLatencyMs = 0;
  requestsStarted = 0;

  private readonly opts: Required<Pick<ExplorerOptions, "minIntervalMs">> & ExplorerOptions;
  private nextToken = 1;
  private displayedToken = 0;
  private pendingCoord: Coord | null = null;
  private timerHandle: unknown = null;
  private lastStart = -Infinity;
  private inFlight = 0;

  constructor(options: ExplorerOptions) {
    this.opts = { minIntervalMs: 100, ...options };
    this.size = options.size;
  }

  get busy(): boolean {
    return this.inFlight > 0;
  }

  /** Move one or more axes; schedules a debounced render of the new coord. */
  setCoord(partial: Partial<Coord>): Coord {
    this.coord = clampCoord({ ...this.coord, ...partial });
    this.schedule();
    return this.coord;
  }

  setSize(size: number): void {
    this.size = size;
    this.schedule();
  }

  /** Render the current coord immediately (initial load, strip refresh). */
  refresh(): void {
    this.pendingCoord = { ...this.coord };
    this.fire();
  }

  private schedule(): void {
    this.pendingCoord = { ...this.coord };
    if (this.timerHandle !== null) {
      return; // trailing-edge timer already armed; it will pick up the latest coord
    }
    const wait = Math.max(0, this.lastStart + this.opts.minIntervalMs - this.opts.now());
    if (wait === 0) {
      this.fire();
    } else {
      this.timerHandle = this.opts.setTimer(() => {
        this.timerHandle = null;
        this.fire();
      }, wait);
    }
  }

  private fire(): void {
    if (this.pendingCoord === null) {
      return;
    }
    const coord = this.pendingCoord;
    this.pendingCoord = null;
    const token = this.nextToken++;
    const started = this.opts.now();
    this.lastStart = started;
    this.requestsStarted += 1;
    this.inFlight += 1;
    this.opts.onInFlight?.(true);
    this.opts
      .fetcher(renderUrl(this.opts.baseUrl, coord, this.size))
      .then((blob) => {
        if (token <= this.displayedToken) {
          return; // stale: a newer frame already displayed
        }
        this.displayedToken = token;
        this.lastLatencyMs = this.opts.now() - started;
        this.opts.onFrame({ coord, token, blob, latencyMs: this.lastLatencyMs });
      })
      .catch((err: unknown) => {
        this.opts.onError(err instanceof Error ? err.message : String(err));
      })
      .finally(() => {
        this.inFlight -= 1;
        this.opts.onInFlight?.(this.busy);
      });
  }
}

export type StripAxis = "a" | "b" | "c";

export interface StripCell {
  index: number;
  coord: Coord;
}

/** Coordinates for one traversal row: vary a single axis, hold the others.
 *  Discrete axes use cell centers; the view axis spans [0, 1) evenly. */
export function stripCoords(base: Coord, axis: StripAxis, count: number): StripCell[] {
  const cells: StripCell[] = [];
  for (let i = 0; i < count; i++) {
    const v = (i + 0.5) / count;
    const coord = clampCoord({ ...base, [axis]: axis === "c" ? i / count : v });
    cells.push({ index: i, coord });
  }
  return cells;
}

/** Fetch every cell of a strip; resolves with blobs in cell order. Stale
 *  protection: the caller passes a generation counter and ignores results
 *  from older generations. */
export async function fetchStrip(
  cells: StripCell[],
  baseUrl: string,
  size: number,
  fetcher: BlobFetcher,
): Promise<Blob[]> {
  return Promise.all(cells.map((cell) => fetcher(renderUrl(baseUrl, cell.coord, size))));
}

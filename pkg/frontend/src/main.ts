// DOM wiring for the explorer: three sliders drive (appearance, pose, view),
// every move requests a render, and each returned frame informs the next
// nudge. A strip mode prefetches a whole traversal row along one axis for
// side-by-side comparison.

import {
  Meta,
  clamp01,
  coordToDetent,
  defaultFetcher,
  detentToCoord,
  fetchMeta,
} from "./api";
import { Explorer, StripAxis, fetchStrip, stripCoords } from "./explorer";
import { UrlState, stateFromQuery, stateToQuery } from "./url";

const BASE_URL = "";
const STRIP_CELLS = 8;
const STRIP_SIZE = 96;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const banner = $<HTMLDivElement>("banner");
const viewImg = $<HTMLImageElement>("view");
const stripRow = $<HTMLDivElement>("strip");
const status = $<HTMLSpanElement>("status");
const sliderA = $<HTMLInputElement>("slider-a");
const sliderB = $<HTMLInputElement>("slider-b");
const sliderC = $<HTMLInputElement>("slider-c");
const labelA = $<HTMLSpanElement>("label-a");
const labelB = $<HTMLSpanElement>("label-b");
const labelC = $<HTMLSpanElement>("label-c");
const sizeSelect = $<HTMLSelectElement>("size");
const stripSelect = $<HTMLSelectElement>("strip-mode");

let meta: Meta | null = null;
let urlState: UrlState = stateFromQuery(window.location.search);
let stripGeneration = 0;
let lastObjectUrl: string | null = null;

const explorer = new Explorer({
  baseUrl: BASE_URL,
  size: urlState.size,
  fetcher: defaultFetcher,
  now: () => performance.now(),
  setTimer: (fn, ms) => window.setTimeout(fn, ms),
  clearTimer: (h) => window.clearTimeout(h as number),
  onFrame: (frame) => {
    const url = URL.createObjectURL(frame.blob);
    viewImg.src = url;
    if (lastObjectUrl) URL.revokeObjectURL(lastObjectUrl);
    lastObjectUrl = url;
    status.textContent = `render ${frame.latencyMs.toFixed(0)} ms`;
    hideBanner();
  },
  onError: (message) => showBanner(message),
  onInFlight: (busy) => viewImg.classList.toggle("busy", busy),
});

function showBanner(message: string): void {
  banner.textContent = message;
  banner.classList.remove("hidden");
}

function hideBanner(): void {
  banner.classList.add("hidden");
}

function pushUrl(): void {
  urlState = { ...urlState, coord: { ...explorer.coord }, size: explorer.size };
  history.replaceState(null, "", `?${stateToQuery(urlState)}`);
}

function applyMeta(m: Meta): void {
  meta = m;
  sliderA.max = String(m.S - 1);
  sliderB.max = String(m.N - 1);
  sliderA.value = String(coordToDetent(urlState.coord.a, m.S));
  sliderB.value = String(coordToDetent(urlState.coord.b, m.N));
  sliderC.value = String(urlState.coord.c);
  updateLabels();
  status.textContent = `model: ${m.S} appearances x ${m.N} poses (iteration ${m.iteration})`;
}

function updateLabels(): void {
  if (!meta) return;
  const ka = Number(sliderA.value);
  const kb = Number(sliderB.value);
  labelA.textContent = `${meta.appearance_labels[ka] ?? ka} (${ka + 1}/${meta.S})`;
  labelB.textContent = `pose ${kb + 1}/${meta.N} [set ${meta.pose_source_sets?.[kb] ?? "?"}]`;
  labelC.textContent = `${(Number(sliderC.value) * 360).toFixed(0)} deg`;
}

async function loadMetaWithRetry(): Promise<void> {
  let delay = 500;
  for (;;) {
    try {
      const m = await fetchMeta(BASE_URL);
      applyMeta(m);
      hideBanner();
      return;
    } catch (err) {
      showBanner(`service unreachable, retrying: ${String(err)}`);
      await new Promise((resolve) => setTimeout(resolve, delay));
      delay = Math.min(delay * 2, 5000);
    }
  }
}

function onSliderInput(): void {
  if (!meta) return;
  explorer.setCoord({
    a: detentToCoord(Number(sliderA.value), meta.S),
    b: detentToCoord(Number(sliderB.value), meta.N),
    c: clamp01(Number(sliderC.value)),
  });
  updateLabels();
  pushUrl();
  if (urlState.strip !== "off") {
    void refreshStrip(urlState.strip);
  }
}

async function refreshStrip(axis: StripAxis): Promise<void> {
  if (!meta) return;
  const generation = ++stripGeneration;
  const count = axis === "a" ? Math.min(meta.S, STRIP_CELLS)
    : axis === "b" ? Math.min(meta.N, STRIP_CELLS) : STRIP_CELLS;
  const cells = stripCoords(explorer.coord, axis, count);
  stripRow.replaceChildren(
    ...cells.map(() => {
      const ph = document.createElement("div");
      ph.className = "cell placeholder";
      return ph;
    }),
  );
  try {
    const blobs = await fetchStrip(cells, BASE_URL, STRIP_SIZE, defaultFetcher);
    if (generation !== stripGeneration) return; // a newer strip superseded this one
    stripRow.replaceChildren(
      ...blobs.map((blob, i) => {
        const img = document.createElement("img");
        img.className = "cell";
        img.src = URL.createObjectURL(blob);
        img.title = `${axis} = ${JSON.stringify(cells[i].coord[axis])}`;
        img.addEventListener("click", () => {
          explorer.setCoord({ [axis]: cells[i].coord[axis] });
          syncSliders();
          pushUrl();
        });
        return img;
      }),
    );
  } catch (err) {
    if (generation === stripGeneration) showBanner(String(err));
  }
}

function syncSliders(): void {
  if (!meta) return;
  sliderA.value = String(coordToDetent(explorer.coord.a, meta.S));
  sliderB.value = String(coordToDetent(explorer.coord.b, meta.N));
  sliderC.value = String(explorer.coord.c);
  updateLabels();
}

async function start(): Promise<void> {
  explorer.coord = { ...urlState.coord };
  sizeSelect.value = String(urlState.size);
  stripSelect.value = urlState.strip;

  sliderA.addEventListener("input", onSliderInput);
  sliderB.addEventListener("input", onSliderInput);
  sliderC.addEventListener("input", onSliderInput);
  sizeSelect.addEventListener("change", () => {
    explorer.setSize(Number(sizeSelect.value));
    pushUrl();
  });
  stripSelect.addEventListener("change", () => {
    urlState = { ...urlState, strip: stripSelect.value as UrlState["strip"] };
    history.replaceState(null, "", `?${stateToQuery(urlState)}`);
    stripRow.replaceChildren();
    if (urlState.strip !== "off") void refreshStrip(urlState.strip);
  });

  await loadMetaWithRetry();
  explorer.refresh();
  if (urlState.strip !== "off") void refreshStrip(urlState.strip);
}

void start();

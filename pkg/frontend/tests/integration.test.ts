// End-to-end test against a live render service: trains a tiny synthetic
// checkpoint through the CLI, serves it, and drives the explorer logic over
// real HTTP. Opt in with RUN_INTEGRATION=1 (needs python3 + the backend
// package installed).

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { coordToDetent, defaultFetcher, detentToCoord, fetchMeta, renderUrl } from "../src/api";
import { Explorer, RenderResult } from "../src/explorer";

const RUN = process.env.RUN_INTEGRATION === "1";
const suite = RUN ? describe : describe.skip;

const TINY_CONFIG = {
  model: { width: 16, depth: 4, skip_layer: 3, bands: 3, app_embed_dim: 8, pose_embed_dim: 8, pose_net_width: 16 },
  volume: { resolution: 8 },
  render: { samples_per_ray: 8, seen_patches: 2, seen_patch_size: 8, unseen_patches: 2, unseen_patch_size: 8 },
  schedule: { pose_delay: 3, geom_delay: 6, opacity_delay: 9, total: 15 },
  train: { checkpoint_every: 0 },
};

let server: ChildProcess | null = null;
let baseUrl = "";

function run(args: string[], cwd: string): void {
  const out = spawnSync("python3", ["-m", "bodyspace.cli", ...args], { cwd, encoding: "utf8" });
  if (out.status !== 0) {
    throw new Error(`bodyspace ${args[0]} failed:\n${out.stdout}\n${out.stderr}`);
  }
}

suite("explorer against a live service", () => {
  beforeAll(async () => {
    const work = mkdtempSync(join(tmpdir(), "explorer-it-"));
    run(["gen-synthetic", "--out", join(work, "data"), "--bones", "2", "--sets", "3",
         "--poses-per-set", "2", "--image-size", "32"], work);
    writeFileSync(join(work, "cfg.json"), JSON.stringify(TINY_CONFIG));
    run(["--config", join(work, "cfg.json"), "--seed", "1", "train",
         "--data", join(work, "data"), "--out", join(work, "run"), "--progress-every", "0"], work);

    server = spawn("python3", ["-m", "bodyspace.cli", "serve",
                               "--checkpoint", join(work, "run", "ckpt_final.ckpt"),
                               "--bind", "127.0.0.1:0"]);
    baseUrl = await new Promise<string>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("server never announced itself")), 60000);
      server!.stdout!.on("data", (chunk: Buffer) => {
        const m = /serving model on (http:\/\/[^/\s]+)/.exec(chunk.toString());
        if (m) {
          clearTimeout(timer);
          resolve(m[1]);
        }
      });
      server!.stderr!.on("data", (chunk: Buffer) => process.stderr.write(chunk));
    });
  }, 180000);

  afterAll(() => {
    server?.kill();
  });

  it("meta reports the dataset shape for slider detents", async () => {
    const meta = await fetchMeta(baseUrl);
    expect(meta.S).toBe(3);
    expect(meta.N).toBe(6);
    expect(meta.appearance_labels).toHaveLength(3);
    // detent round trip against the live counts
    for (let k = 0; k < meta.S; k++) {
      expect(coordToDetent(detentToCoord(k, meta.S), meta.S)).toBe(k);
    }
  });

  it("scrubbing displays only the newest frame", async () => {
    const frames: RenderResult[] = [];
    const explorer = new Explorer({
      baseUrl,
      size: 32,
      minIntervalMs: 30,
      fetcher: defaultFetcher,
      now: () => performance.now(),
      setTimer: (fn, ms) => setTimeout(fn, ms),
      clearTimer: (h) => clearTimeout(h as NodeJS.Timeout),
      onFrame: (f) => frames.push(f),
      onError: (m) => {
        throw new Error(m);
      },
    });
    for (let i = 0; i <= 10; i++) {
      explorer.setCoord({ c: i / 10 });
      await new Promise((resolve) => setTimeout(resolve, 12));
    }
    // wait for trailing request to land
    await new Promise((resolve) => setTimeout(resolve, 3000));
    expect(frames.length).toBeGreaterThan(0);
    expect(frames.at(-1)?.coord.c).toBeCloseTo(1.0);
    const tokens = frames.map((f) => f.token);
    expect([...tokens].sort((a, b) => a - b)).toEqual(tokens); // strictly newer only
  });

  it("full view-axis drag returns to the starting image", async () => {
    const url0 = renderUrl(baseUrl, { a: 0.5, b: 0.25, c: 0 }, 32);
    const url1 = renderUrl(baseUrl, { a: 0.5, b: 0.25, c: 1 }, 32);
    const [b0, b1] = await Promise.all([defaultFetcher(url0), defaultFetcher(url1)]);
    const [a0, a1] = await Promise.all([b0.arrayBuffer(), b1.arrayBuffer()]);
    expect(Buffer.from(a0).equals(Buffer.from(a1))).toBe(true);
  });

  it("identical coordinates return identical bytes", async () => {
    const url = renderUrl(baseUrl, { a: 0.9, b: 0.9, c: 0.4 }, 32);
    const [b0, b1] = await Promise.all([defaultFetcher(url), defaultFetcher(url)]);
    const [a0, a1] = await Promise.all([b0.arrayBuffer(), b1.arrayBuffer()]);
    expect(Buffer.from(a0).equals(Buffer.from(a1))).toBe(true);
  });

  it("out-of-range parameters surface as errors", async () => {
    await expect(defaultFetcher(`${baseUrl}/api/render?a=2&b=0&c=0`)).rejects.toThrow("400");
    await expect(defaultFetcher(`${baseUrl}/api/render?w=0`)).rejects.toThrow("400");
  });
});

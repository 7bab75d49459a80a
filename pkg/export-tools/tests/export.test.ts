import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { exportGraphs } from "../src/export.js";
import { readJson, writeJson } from "../src/formats.js";
import type { GraphJson } from "../src/formats.js";
import { mergeAdapters } from "../src/merge.js";
import { makeToyCheckpoint } from "../src/toy.js";

let workdir: string;

beforeEach(() => {
  workdir = mkdtempSync(join(tmpdir(), "crackseg-export-"));
});

afterEach(() => {
  rmSync(workdir, { recursive: true, force: true });
});

function writeMerged(seed: number): string {
  const merged = mergeAdapters(makeToyCheckpoint(seed)).checkpoint;
  const path = join(workdir, "merged.json");
  writeJson(path, merged);
  return path;
}

describe("exportGraphs", () => {
  it("emits encoder and decoder graphs plus a manifest", () => {
    const ckptPath = writeMerged(3);
    const checkpoint = readJson<ReturnType<typeof makeToyCheckpoint>>(ckptPath);
    const { manifest } = exportGraphs(checkpoint, ckptPath, workdir);
    expect(manifest.format).toBe("crackmanifest/1");
    expect(manifest.input_size).toEqual([32, 32]);
    const encoder = readJson<GraphJson>(join(workdir, "encoder.json"));
    const decoder = readJson<GraphJson>(join(workdir, "decoder.json"));
    expect(encoder.format).toBe("crackgraph/1");
    expect(encoder.output).toBe("embedding");
    expect(decoder.inputs.map((i) => i.name)).toEqual(["embedding", "prompts"]);
    expect(decoder.nodes[0].op).toBe("concat");
    expect(Object.keys(encoder.tensors).length).toBeGreaterThan(0);
  });

  it("re-exporting an identical checkpoint reproduces identical hashes", () => {
    const ckptPath = writeMerged(5);
    const checkpoint = readJson<ReturnType<typeof makeToyCheckpoint>>(ckptPath);
    const first = exportGraphs(checkpoint, ckptPath, workdir);
    const second = exportGraphs(checkpoint, ckptPath, workdir);
    expect(second.manifest.graph_sha256).toEqual(first.manifest.graph_sha256);
    expect(second.manifest.source_checkpoint_sha256).toBe(
      first.manifest.source_checkpoint_sha256,
    );
  });

  it("refuses a checkpoint that still carries adapters", () => {
    const source = makeToyCheckpoint(7);
    const path = join(workdir, "raw.json");
    writeJson(path, source);
    expect(() => exportGraphs(source, path, workdir)).toThrowError(/merge-lora/);
  });

  it("missing checkpoint file raises", () => {
    expect(() => readJson(join(workdir, "absent.json"))).toThrowError();
  });

  it("corrupted checkpoint file raises", () => {
    const path = join(workdir, "bad.json");
    writeFileSync(path, "{not json");
    expect(() => readJson(path)).toThrowError();
  });
});

/**
 * Numerical parity between the exported graphs (executed by the runtime's
 * own graph engine, reached through its CLI) and this package's reference
 * forward pass over the source checkpoint.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";

import type { CheckpointJson, ManifestJson } from "./formats.js";
import { readJson, sha256OfFile, writeJson } from "./formats.js";
import { runStage } from "./forward.js";
import { Rng, fromJson, maxAbsDiff, tensor, toJson } from "./tensor.js";
import type { Tensor, TensorJson } from "./tensor.js";

export interface ParityReport {
  pass: boolean;
  tolerance: number;
  runs: number;
  maxAbsDeviation: number;
  perGraph: Record<string, number>;
  hashesMatch: boolean;
  failures: string[];
}

export interface RuntimeRunner {
  (graphPath: string, inputs: Record<string, Tensor>): Tensor;
}

/** Execute a graph through the Python runtime CLI (`crackseg run-graph`). */
export function pythonRuntimeRunner(python = "python3"): RuntimeRunner {
  return (graphPath, inputs) => {
    const workdir = mkdtempSync(join(tmpdir(), "crackseg-parity-"));
    try {
      const inPath = join(workdir, "in.json");
      const outPath = join(workdir, "out.json");
      const payload: Record<string, TensorJson> = {};
      for (const [name, t] of Object.entries(inputs)) payload[name] = toJson(t);
      writeJson(inPath, { inputs: payload });
      execFileSync(
        python,
        ["-m", "crackseg", "run-graph", "--graph", graphPath, "--input", inPath, "--output", outPath],
        { stdio: ["ignore", "pipe", "pipe"] },
      );
      const doc = readJson<{ outputs: Record<string, TensorJson> }>(outPath);
      const first = Object.values(doc.outputs)[0];
      return fromJson(first);
    } finally {
      rmSync(workdir, { recursive: true, force: true });
    }
  };
}

/**
 * @param checkpoint   reference network (may still carry adapters); its
 *                     forward pass is the trusted side of the comparison
 * @param pinnedPath   the checkpoint file the manifest was exported from
 *                     (the merged one); its hash must match the manifest
 */
export function verifyParity(
  manifestPath: string,
  checkpoint: CheckpointJson,
  pinnedPath: string,
  runner: RuntimeRunner,
  tolerance = 1e-4,
  runs = 10,
  seed = 1234,
): ParityReport {
  const manifest = readJson<ManifestJson>(manifestPath);
  const baseDir = dirname(manifestPath);
  const failures: string[] = [];

  let hashesMatch = manifest.source_checkpoint_sha256 === sha256OfFile(pinnedPath);
  if (!hashesMatch) failures.push("source checkpoint hash mismatch");
  for (const [file, expected] of Object.entries(manifest.graph_sha256)) {
    if (sha256OfFile(join(baseDir, file)) !== expected) {
      hashesMatch = false;
      failures.push(`graph hash mismatch: ${file}`);
    }
  }

  const [w, h] = manifest.input_size;
  const rng = new Rng(seed);
  const perGraph: Record<string, number> = { encoder: 0, decoder: 0 };

  for (let i = 0; i < runs; i++) {
    const image = rng.normalTensor([1, 1, h, w], 1.0);
    const reference = runStage(checkpoint.encoder, { image });
    let deviation: number;
    try {
      const produced = runner(join(baseDir, manifest.encoder), { image });
      deviation = maxAbsDiff(reference, produced);
    } catch (err) {
      failures.push(`encoder run ${i}: ${(err as Error).message}`);
      continue;
    }
    perGraph.encoder = Math.max(perGraph.encoder, deviation);

    const prompts = tensor([1, 3, h, w]);
    for (let p = 0; p < 6; p++) {
      const c = Math.floor(rng.next() * 3);
      const y = Math.floor(rng.next() * h);
      const x = Math.floor(rng.next() * w);
      prompts.data[(c * h + y) * w + x] = 1;
    }
    const decoderRef = runStage(checkpoint.decoder, { embedding: reference, prompts });
    try {
      const produced = runner(join(baseDir, manifest.decoder), {
        embedding: reference,
        prompts,
      });
      perGraph.decoder = Math.max(perGraph.decoder, maxAbsDiff(decoderRef, produced));
    } catch (err) {
      failures.push(`decoder run ${i}: ${(err as Error).message}`);
    }
  }

  const maxAbsDeviation = Math.max(perGraph.encoder, perGraph.decoder);
  if (maxAbsDeviation > tolerance) {
    failures.push(`max abs deviation ${maxAbsDeviation} above tolerance ${tolerance}`);
  }
  return {
    pass: failures.length === 0,
    tolerance,
    runs,
    maxAbsDeviation,
    perGraph,
    hashesMatch,
    failures,
  };
}

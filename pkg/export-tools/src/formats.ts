/**
 * File formats shared with the Python runtime.
 *
 * - checkpoint ("crackckpt/1"): source-of-truth network description; conv
 *   layers may carry a low-rank adapter (down/up factor pair).
 * - adapter bundle ("crackadapters/1"): adapter factors keyed by layer path,
 *   as written by the training side.
 * - operator graph ("crackgraph/1") and manifest ("crackmanifest/1"): the
 *   interchange files the runtime backend executes. Their layout is owned by
 *   the runtime; this package only writes them.
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";

import type { TensorJson } from "./tensor.js";

export const CHECKPOINT_FORMAT = "crackckpt/1";
export const ADAPTERS_FORMAT = "crackadapters/1";
export const GRAPH_FORMAT = "crackgraph/1";
export const MANIFEST_FORMAT = "crackmanifest/1";

export interface AdapterJson {
  rank: number;
  down: TensorJson;
  up: TensorJson;
}

export interface LayerJson {
  name?: string;
  type: "conv2d" | "relu" | "sigmoid" | "concat";
  stride?: number;
  padding?: number;
  base?: TensorJson;
  bias?: TensorJson;
  adapter?: AdapterJson;
}

export interface StageJson {
  inputs: string[];
  layers: LayerJson[];
}

export interface CheckpointJson {
  format: string;
  kind: "segmentation";
  input_size: [number, number];
  normalization: { mean: number; std: number };
  mask_threshold: number;
  encoder: StageJson;
  decoder: StageJson;
}

export interface AdapterBundleJson {
  format: string;
  layers: Record<string, AdapterJson>;
}

export interface GraphNodeJson {
  name: string;
  op: string;
  input?: string;
  inputs?: string[];
  weight?: string;
  bias?: string;
  stride?: number;
  padding?: number;
}

export interface GraphJson {
  format: string;
  name: string;
  inputs: { name: string; channels?: number }[];
  output: string;
  nodes: GraphNodeJson[];
  tensors: Record<string, TensorJson>;
}

export interface ManifestJson {
  format: string;
  kind: "segmentation";
  input_size: [number, number];
  normalization: { mean: number; std: number };
  capabilities: { boxes: boolean; points: boolean };
  encoder: string;
  decoder: string;
  mask_threshold: number;
  source_checkpoint_sha256: string;
  graph_sha256: Record<string, string>;
}

export function sha256OfFile(path: string): string {
  return createHash("sha256").update(readFileSync(path)).digest("hex");
}

export function readJson<T>(path: string): T {
  return JSON.parse(readFileSync(path, "utf-8")) as T;
}

export function writeJson(path: string, value: unknown): void {
  writeFileSync(path, JSON.stringify(value));
}

function fail(path: string, message: string): never {
  throw new Error(`${path}: ${message}`);
}

export function loadCheckpoint(path: string): CheckpointJson {
  const doc = readJson<CheckpointJson>(path);
  if (doc.format !== CHECKPOINT_FORMAT) {
    fail(path, `expected format ${CHECKPOINT_FORMAT}, got ${doc.format}`);
  }
  if (!doc.encoder || !doc.decoder) fail(path, "checkpoint needs encoder and decoder stages");
  for (const [stageName, stage] of Object.entries({ encoder: doc.encoder, decoder: doc.decoder })) {
    stage.layers.forEach((layer, i) => {
      if (layer.type === "conv2d") {
        if (!layer.base) fail(path, `${stageName} layer ${i} lacks a base weight`);
        if (layer.adapter) {
          const [cout, cin, kh, kw] = layer.base.shape;
          const { rank, down, up } = layer.adapter;
          const downOk =
            down.shape.length === 4 &&
            down.shape[0] === rank &&
            down.shape[1] === cin &&
            down.shape[2] === kh &&
            down.shape[3] === kw;
          const upOk =
            up.shape.length === 4 &&
            up.shape[0] === cout &&
            up.shape[1] === rank &&
            up.shape[2] === 1 &&
            up.shape[3] === 1;
          if (!downOk || !upOk) {
            fail(
              path,
              `${stageName} layer ${i} (${layer.name ?? "unnamed"}): adapter shapes ` +
                `${JSON.stringify(down.shape)}/${JSON.stringify(up.shape)} do not match ` +
                `base ${JSON.stringify(layer.base.shape)} at rank ${rank}`,
            );
          }
        }
      }
    });
  }
  return doc;
}

export function loadAdapterBundle(path: string): AdapterBundleJson {
  const doc = readJson<AdapterBundleJson>(path);
  if (doc.format !== ADAPTERS_FORMAT) {
    fail(path, `expected format ${ADAPTERS_FORMAT}, got ${doc.format}`);
  }
  return doc;
}

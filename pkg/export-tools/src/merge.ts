/**
 * Folding low-rank adapters into base conv weights.
 *
 * The adapted forward pass is base(x) + up(down(x)); because the up factor
 * is 1x1, the correction equals a conv with sum_r up[o,r] * down[r,i,·,·],
 * so merging is exact up to float rounding and the merged checkpoint runs
 * with no extra layers.
 */

import type {
  AdapterBundleJson,
  AdapterJson,
  CheckpointJson,
  LayerJson,
} from "./formats.js";
import { fromJson, tensor, toJson } from "./tensor.js";
import type { Tensor } from "./tensor.js";

export function foldAdapter(base: Tensor, adapter: AdapterJson): Tensor {
  const [cout, cin, kh, kw] = base.shape;
  const down = fromJson(adapter.down);
  const up = fromJson(adapter.up);
  const merged = tensor(base.shape, base.data);
  for (let o = 0; o < cout; o++) {
    for (let r = 0; r < adapter.rank; r++) {
      const scale = up.data[o * adapter.rank + r];
      if (scale === 0) continue;
      for (let c = 0; c < cin; c++) {
        for (let u = 0; u < kh; u++) {
          for (let v = 0; v < kw; v++) {
            const idx = ((o * cin + c) * kh + u) * kw + v;
            merged.data[idx] += scale * down.data[((r * cin + c) * kh + u) * kw + v];
          }
        }
      }
    }
  }
  return merged;
}

function layerPath(stage: string, layer: LayerJson, index: number): string {
  return `${stage}.${layer.name ?? `layer${index}`}`;
}

export interface MergeResult {
  checkpoint: CheckpointJson;
  mergedLayers: string[];
  unusedBundleLayers: string[];
}

/** Attach bundle adapters to their layers without folding them, restoring
 * the two-path form (the inverse of splitting a checkpoint for training). */
export function attachAdapters(
  checkpoint: CheckpointJson,
  bundle: AdapterBundleJson,
): CheckpointJson {
  const doc: CheckpointJson = JSON.parse(JSON.stringify(checkpoint));
  const remaining = new Map(Object.entries(bundle.layers));
  for (const stage of ["encoder", "decoder"] as const) {
    doc[stage].layers.forEach((layer, i) => {
      const adapter = remaining.get(layerPath(stage, layer, i));
      if (adapter && layer.type === "conv2d") {
        layer.adapter = adapter;
        remaining.delete(layerPath(stage, layer, i));
      }
    });
  }
  if (remaining.size > 0) {
    throw new Error(`no such layers in checkpoint: ${[...remaining.keys()].join(", ")}`);
  }
  return doc;
}

/**
 * Fold every adapter (inline or from the bundle) into its conv weight and
 * strip the adapter entries. Layers without adapters pass through untouched,
 * so merging an already merged checkpoint is the identity.
 */
export function mergeAdapters(
  checkpoint: CheckpointJson,
  bundle?: AdapterBundleJson,
): MergeResult {
  const doc: CheckpointJson = JSON.parse(JSON.stringify(checkpoint));
  const fromBundle = new Map(Object.entries(bundle?.layers ?? {}));
  const mergedLayers: string[] = [];

  for (const stage of ["encoder", "decoder"] as const) {
    doc[stage].layers.forEach((layer, i) => {
      if (layer.type !== "conv2d" || !layer.base) return;
      const path = layerPath(stage, layer, i);
      const bundled = fromBundle.get(path);
      const adapter = bundled ?? layer.adapter;
      if (bundled) fromBundle.delete(path);
      if (!adapter) return;
      const base = fromJson(layer.base);
      const [cout, cin] = base.shape;
      if (
        adapter.down.shape[1] !== cin ||
        adapter.up.shape[0] !== cout ||
        adapter.down.shape[0] !== adapter.rank
      ) {
        throw new Error(
          `adapter for ${path} has shapes ${JSON.stringify(adapter.down.shape)}/` +
            `${JSON.stringify(adapter.up.shape)}, base is ${JSON.stringify(base.shape)}`,
        );
      }
      layer.base = toJson(foldAdapter(base, adapter));
      delete layer.adapter;
      mergedLayers.push(path);
    });
  }
  return {
    checkpoint: doc,
    mergedLayers,
    unusedBundleLayers: [...fromBundle.keys()],
  };
}

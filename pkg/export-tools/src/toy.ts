/**
 * Seeded toy checkpoints for CI parity runs. The architecture mirrors the
 * real deployment shape (encoder producing an embedding, prompt-conditioned
 * decoder) at a size that exports and verifies in milliseconds. Real
 * checkpoints from third-party training go through the same path.
 */

import type { AdapterBundleJson, CheckpointJson, LayerJson } from "./formats.js";
import { ADAPTERS_FORMAT, CHECKPOINT_FORMAT } from "./formats.js";
import { Rng, toJson } from "./tensor.js";

function convLayer(
  rng: Rng,
  name: string,
  cin: number,
  cout: number,
  kernel: number,
  opts: { padding?: number; rank?: number } = {},
): LayerJson {
  const layer: LayerJson = {
    name,
    type: "conv2d",
    stride: 1,
    padding: opts.padding ?? 0,
    base: toJson(rng.normalTensor([cout, cin, kernel, kernel], 0.4)),
    bias: toJson(rng.normalTensor([cout], 0.1)),
  };
  if (opts.rank) {
    layer.adapter = {
      rank: opts.rank,
      down: toJson(rng.normalTensor([opts.rank, cin, kernel, kernel], 0.3)),
      // nonzero up factor so merging actually changes the weights under test
      up: toJson(rng.normalTensor([cout, opts.rank, 1, 1], 0.3)),
    };
  }
  return layer;
}

export function makeToyCheckpoint(seed: number, withAdapters = true): CheckpointJson {
  const rng = new Rng(seed);
  const rank = withAdapters ? 2 : 0;
  return {
    format: CHECKPOINT_FORMAT,
    kind: "segmentation",
    input_size: [32, 32],
    normalization: { mean: 127.5, std: 127.5 },
    mask_threshold: 0.5,
    encoder: {
      inputs: ["image"],
      layers: [
        convLayer(rng, "c1", 1, 4, 3, { padding: 1, rank }),
        { name: "a1", type: "relu" },
        convLayer(rng, "c2", 4, 4, 3, { padding: 1 }),
        { name: "a2", type: "relu" },
      ],
    },
    decoder: {
      inputs: ["embedding", "prompts"],
      layers: [
        { name: "cat", type: "concat" },
        convLayer(rng, "d1", 7, 4, 1, { rank }),
        { name: "da1", type: "relu" },
        convLayer(rng, "d2", 4, 1, 1),
        { name: "out", type: "sigmoid" },
      ],
    },
  };
}

/** Pull the inline adapters out into a separate bundle, as training would
 * hand them over. The returned checkpoint has no adapter entries. */
export function splitAdapters(checkpoint: CheckpointJson): {
  checkpoint: CheckpointJson;
  bundle: AdapterBundleJson;
} {
  const doc: CheckpointJson = JSON.parse(JSON.stringify(checkpoint));
  const bundle: AdapterBundleJson = { format: ADAPTERS_FORMAT, layers: {} };
  for (const stage of ["encoder", "decoder"] as const) {
    doc[stage].layers.forEach((layer, i) => {
      if (layer.type === "conv2d" && layer.adapter) {
        bundle.layers[`${stage}.${layer.name ?? `layer${i}`}`] = layer.adapter;
        delete layer.adapter;
      }
    });
  }
  return { checkpoint: doc, bundle };
}

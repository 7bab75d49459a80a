/**
 * Turn a merged checkpoint into the operator-graph files plus the manifest
 * the runtime backend loads. Export refuses checkpoints that still carry
 * adapters: fold them first so the emitted graphs stay plain convs.
 */

import { join } from "node:path";

import type {
  CheckpointJson,
  GraphJson,
  GraphNodeJson,
  ManifestJson,
  StageJson,
} from "./formats.js";
import {
  GRAPH_FORMAT,
  MANIFEST_FORMAT,
  sha256OfFile,
  writeJson,
} from "./formats.js";
import type { TensorJson } from "./tensor.js";

function stageToGraph(
  stage: StageJson,
  graphName: string,
  inputChannels: Record<string, number | undefined>,
  outputName: string,
): GraphJson {
  const nodes: GraphNodeJson[] = [];
  const tensors: Record<string, TensorJson> = {};
  let currentValue: string | null = stage.inputs.length === 1 ? stage.inputs[0] : null;
  let counter = 0;

  stage.layers.forEach((layer, index) => {
    const isLast = index === stage.layers.length - 1;
    const nodeName = isLast ? outputName : layer.name ?? `n${counter++}`;
    switch (layer.type) {
      case "concat":
        nodes.push({ name: nodeName, op: "concat", inputs: [...stage.inputs] });
        break;
      case "conv2d": {
        if (layer.adapter) {
          throw new Error(
            `layer ${layer.name ?? index} still carries an adapter; run merge-lora first`,
          );
        }
        if (!currentValue) throw new Error("conv2d before inputs were combined");
        const weightKey = `${nodeName}.w`;
        tensors[weightKey] = layer.base!;
        const node: GraphNodeJson = {
          name: nodeName,
          op: "conv2d",
          input: currentValue,
          weight: weightKey,
          stride: layer.stride ?? 1,
          padding: layer.padding ?? 0,
        };
        if (layer.bias) {
          const biasKey = `${nodeName}.b`;
          tensors[biasKey] = layer.bias;
          node.bias = biasKey;
        }
        nodes.push(node);
        break;
      }
      case "relu":
      case "sigmoid":
        if (!currentValue) throw new Error(`${layer.type} before inputs were combined`);
        nodes.push({ name: nodeName, op: layer.type, input: currentValue });
        break;
      default:
        throw new Error(`unsupported layer type ${(layer as { type: string }).type}`);
    }
    currentValue = nodeName;
  });

  return {
    format: GRAPH_FORMAT,
    name: graphName,
    inputs: stage.inputs.map((name) => ({ name, channels: inputChannels[name] })),
    output: outputName,
    nodes,
    tensors,
  };
}

export interface ExportResult {
  manifestPath: string;
  manifest: ManifestJson;
}

export function exportGraphs(
  checkpoint: CheckpointJson,
  checkpointPath: string,
  outDir: string,
): ExportResult {
  const encoderChannels = checkpoint.encoder.layers.find((l) => l.type === "conv2d")
    ?.base?.shape[1];
  const encoder = stageToGraph(
    checkpoint.encoder,
    "encoder",
    { [checkpoint.encoder.inputs[0]]: encoderChannels },
    "embedding",
  );
  const embeddingChannels = [...checkpoint.encoder.layers]
    .reverse()
    .find((l) => l.type === "conv2d")?.base?.shape[0];
  const decoder = stageToGraph(
    checkpoint.decoder,
    "decoder",
    { embedding: embeddingChannels, prompts: 3 },
    "probs",
  );

  const encoderPath = join(outDir, "encoder.json");
  const decoderPath = join(outDir, "decoder.json");
  writeJson(encoderPath, encoder);
  writeJson(decoderPath, decoder);

  const manifest: ManifestJson = {
    format: MANIFEST_FORMAT,
    kind: "segmentation",
    input_size: checkpoint.input_size,
    normalization: checkpoint.normalization,
    capabilities: { boxes: true, points: true },
    encoder: "encoder.json",
    decoder: "decoder.json",
    mask_threshold: checkpoint.mask_threshold,
    source_checkpoint_sha256: sha256OfFile(checkpointPath),
    graph_sha256: {
      "encoder.json": sha256OfFile(encoderPath),
      "decoder.json": sha256OfFile(decoderPath),
    },
  };
  const manifestPath = join(outDir, "manifest.json");
  writeJson(manifestPath, manifest);
  return { manifestPath, manifest };
}

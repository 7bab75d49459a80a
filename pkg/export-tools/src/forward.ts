/**
 * Reference execution of a checkpoint stage, used as the trusted side of
 * parity checks. Conv layers with an adapter run the two-path form
 * base(x) + up(down(x)); merged checkpoints run the single conv.
 */

import type { StageJson } from "./formats.js";
import { add, concatChannels, conv2d, fromJson, relu, sigmoid } from "./tensor.js";
import type { Tensor } from "./tensor.js";

export function runStage(stage: StageJson, inputs: Record<string, Tensor>): Tensor {
  let current: Tensor | null = null;
  const available = stage.inputs.map((name) => {
    const t = inputs[name];
    if (!t) throw new Error(`missing stage input ${name}`);
    return t;
  });
  if (available.length === 1) {
    current = available[0];
  }
  for (const layer of stage.layers) {
    switch (layer.type) {
      case "concat":
        current = concatChannels(available);
        break;
      case "conv2d": {
        if (!current) throw new Error("conv2d before inputs were combined");
        if (!layer.base) throw new Error("conv2d layer lacks a base weight");
        const stride = layer.stride ?? 1;
        const padding = layer.padding ?? 0;
        const bias = layer.bias ? fromJson(layer.bias) : undefined;
        let out = conv2d(current, fromJson(layer.base), stride, padding, bias);
        if (layer.adapter) {
          const low = conv2d(current, fromJson(layer.adapter.down), stride, padding);
          out = add(out, conv2d(low, fromJson(layer.adapter.up), 1, 0));
        }
        current = out;
        break;
      }
      case "relu":
        if (!current) throw new Error("relu before inputs were combined");
        current = relu(current);
        break;
      case "sigmoid":
        if (!current) throw new Error("sigmoid before inputs were combined");
        current = sigmoid(current);
        break;
      default:
        throw new Error(`unsupported layer type ${(layer as { type: string }).type}`);
    }
  }
  if (!current) throw new Error("stage produced no output");
  return current;
}

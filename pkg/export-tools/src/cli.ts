#!/usr/bin/env node
/**
 * Export tooling CLI.
 *
 *   make-toy   --out ckpt.json [--seed N] [--split-adapters bundle.json]
 *   merge-lora --checkpoint ckpt.json [--adapters bundle.json] --out merged.json
 *   export     --checkpoint merged.json --out-dir DIR
 *   verify     --manifest DIR/manifest.json --checkpoint source.json
 *              [--adapters bundle.json] [--merged merged.json] [--tolerance 1e-4] [--runs 10]
 *              [--python python3] [--report out.json]
 *
 * Exit codes: 0 success, 1 usage or processing error, 2 parity failure.
 */

import { mkdirSync } from "node:fs";

import { loadAdapterBundle, loadCheckpoint, writeJson } from "./formats.js";
import { exportGraphs } from "./export.js";
import { attachAdapters, mergeAdapters } from "./merge.js";
import { makeToyCheckpoint, splitAdapters } from "./toy.js";
import { pythonRuntimeRunner, verifyParity } from "./verify.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new Error(`bad arguments near ${key ?? "(end)"}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) throw new Error(`missing required flag --${name}`);
  return value;
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (!command) {
    console.error("usage: cli.ts <make-toy|merge-lora|export|verify> [flags]");
    return 1;
  }
  const flags = parseFlags(rest);

  switch (command) {
    case "make-toy": {
      const out = required(flags, "out");
      const seed = Number(flags.get("seed") ?? "1");
      const checkpoint = makeToyCheckpoint(seed);
      const bundlePath = flags.get("split-adapters");
      if (bundlePath) {
        const split = splitAdapters(checkpoint);
        writeJson(out, split.checkpoint);
        writeJson(bundlePath, split.bundle);
        console.log(`wrote ${out} and adapter bundle ${bundlePath}`);
      } else {
        writeJson(out, checkpoint);
        console.log(`wrote ${out}`);
      }
      return 0;
    }
    case "merge-lora": {
      const checkpoint = loadCheckpoint(required(flags, "checkpoint"));
      const bundlePath = flags.get("adapters");
      const bundle = bundlePath ? loadAdapterBundle(bundlePath) : undefined;
      const result = mergeAdapters(checkpoint, bundle);
      if (result.unusedBundleLayers.length > 0) {
        console.error(`no such layers in checkpoint: ${result.unusedBundleLayers.join(", ")}`);
        return 1;
      }
      const out = required(flags, "out");
      writeJson(out, result.checkpoint);
      console.log(`wrote ${out} (${result.mergedLayers.length} layers merged)`);
      return 0;
    }
    case "export": {
      const path = required(flags, "checkpoint");
      const checkpoint = loadCheckpoint(path);
      const outDir = required(flags, "out-dir");
      mkdirSync(outDir, { recursive: true });
      const result = exportGraphs(checkpoint, path, outDir);
      console.log(`wrote ${result.manifestPath}`);
      return 0;
    }
    case "verify": {
      const manifestPath = required(flags, "manifest");
      const checkpointPath = required(flags, "checkpoint");
      let checkpoint = loadCheckpoint(checkpointPath);
      const bundlePath = flags.get("adapters");
      if (bundlePath) {
        checkpoint = attachAdapters(checkpoint, loadAdapterBundle(bundlePath));
      }
      // when the reference still carries adapters, the manifest hash refers
      // to the merged file instead; pass it via --merged
      const pinnedPath = flags.get("merged") ?? checkpointPath;
      const report = verifyParity(
        manifestPath,
        checkpoint,
        pinnedPath,
        pythonRuntimeRunner(flags.get("python") ?? "python3"),
        Number(flags.get("tolerance") ?? "1e-4"),
        Number(flags.get("runs") ?? "10"),
      );
      const reportPath = flags.get("report");
      if (reportPath) writeJson(reportPath, report);
      console.log(
        `parity ${report.pass ? "PASS" : "FAIL"}: max abs deviation ` +
          `${report.maxAbsDeviation.toExponential(3)} over ${report.runs} runs ` +
          `(tolerance ${report.tolerance})`,
      );
      for (const failure of report.failures) console.error(`  ${failure}`);
      return report.pass ? 0 : 2;
    }
    default:
      console.error(`unknown command ${command}`);
      return 1;
  }
}

try {
  process.exit(main(process.argv.slice(2)));
} catch (err) {
  console.error((err as Error).message);
  process.exit(1);
}

/**
 * In-memory bindings for the pearl embedding-refinement toolkit.
 *
 * Every call shells out to the pearl command line and exchanges data through
 * its documented formats (PEAR v1 binaries, model checkpoints, JSON-lines
 * reports), so results are numerically identical to driving the CLI by hand.
 */
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { runCli } from './cli';
import { Dataset, decodePear, encodePear } from './pear';

export { Dataset, decodePear, encodePear } from './pear';
export { runCli } from './cli';

export interface SynthOptions {
  classes?: number;
  dim?: number;
  perClass?: number;
  separation?: number;
  sigma?: number;
  gamma?: number;
  seed?: number;
}

export interface FitConfig {
  budget?: number;
  seed?: number;
  d_s?: number;
  d_r?: number;
  hidden?: number;
  batch_size?: number;
  max_epochs?: number;
  patience?: number;
  w_recon?: number;
  w_full?: number;
  w_align?: number;
  w_contrast?: number;
  w_cls?: number;
  w_ortho?: number;
  tau?: number;
  lr?: number;
}

export interface EvaluateConfig extends Omit<FitConfig, 'budget' | 'seed'> {
  folds?: number;
  budgets?: number[];
  k?: number[];
  methods?: string[];
  base_seed?: number;
  jobs?: number;
}

/** One line of the JSON-lines report: a per-fold record, an aggregate row
 * (aggregate: true), or an error-manifest entry (error: true). */
export interface ReportLine {
  method?: string;
  budget?: number;
  fold?: number;
  metric?: string;
  k?: number;
  value?: number;
  class_id?: number;
  aggregate?: boolean;
  mean?: number;
  std?: number;
  n_folds?: number;
  error?: boolean;
  message?: string;
}

const PEARL_FLAG_KEYS: ReadonlySet<string> = new Set([
  'd_s', 'd_r', 'hidden', 'batch_size', 'max_epochs', 'patience',
  'w_recon', 'w_full', 'w_align', 'w_contrast', 'w_cls', 'w_ortho',
  'tau', 'lr',
]);

function checkKeys(config: object, allowed: ReadonlySet<string>): void {
  for (const key of Object.keys(config)) {
    if (!allowed.has(key)) {
      throw new Error(`unknown config key: ${key}`);
    }
  }
}

function pearlFlags(config: object): string[] {
  const args: string[] = [];
  for (const [key, value] of Object.entries(config)) {
    if (PEARL_FLAG_KEYS.has(key) && value !== undefined) {
      args.push(`--${key}`, String(value));
    }
  }
  return args;
}

function checkShapes(embeddings: number[][], labels: number[]): void {
  if (labels.length !== embeddings.length) {
    throw new Error(
      `shape mismatch: ${embeddings.length} rows but ${labels.length} labels`,
    );
  }
  if (embeddings.length === 0) {
    throw new Error('shape mismatch: empty embedding matrix');
  }
}

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), 'pearl-frontend-'));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Generate a synthetic labeled corpus through the core generator. */
export function synth(options: SynthOptions = {}): Dataset {
  return withTempDir((dir) => {
    const out = join(dir, 'corpus.pear');
    const args = ['synth', '--out', out];
    const flagNames: Record<keyof SynthOptions, string> = {
      classes: '--classes', dim: '--dim', perClass: '--per-class',
      separation: '--separation', sigma: '--sigma', gamma: '--gamma',
      seed: '--seed',
    };
    for (const key of Object.keys(options) as (keyof SynthOptions)[]) {
      if (!(key in flagNames)) {
        throw new Error(`unknown config key: ${String(key)}`);
      }
      if (options[key] !== undefined) {
        args.push(flagNames[key], String(options[key]));
      }
    }
    runCli(args);
    return decodePear(readFileSync(out));
  });
}

/** Handle to a trained checkpoint; invalid after close(). */
export class BoundModel {
  readonly d: number;
  readonly C: number;
  private checkpoint: Buffer | undefined;

  constructor(checkpoint: Buffer, d: number, C: number) {
    this.checkpoint = checkpoint;
    this.d = d;
    this.C = C;
  }

  /** Refine embeddings; output has the same (n, d) shape as the input. */
  transform(embeddings: number[][]): number[][] {
    if (!this.checkpoint) {
      throw new Error('model is closed');
    }
    const checkpoint = this.checkpoint;
    if (embeddings.length === 0) {
      return [];
    }
    if (embeddings[0].length !== this.d) {
      throw new Error(
        `dimension mismatch: model expects d=${this.d}, got ${embeddings[0].length}`,
      );
    }
    return withTempDir((dir) => {
      const dataPath = join(dir, 'in.pear');
      const modelPath = join(dir, 'model.pear');
      const outPath = join(dir, 'out.pear');
      writeFileSync(dataPath, encodePear(embeddings, embeddings.map(() => -1)));
      writeFileSync(modelPath, checkpoint);
      runCli(['transform', '--data', dataPath, '--model', modelPath, '--out', outPath]);
      return decodePear(readFileSync(outPath)).embeddings;
    });
  }

  /** Serialized checkpoint bytes (PEAR v1 container, kind 5). */
  checkpointBytes(): Buffer {
    if (!this.checkpoint) {
      throw new Error('model is closed');
    }
    return Buffer.from(this.checkpoint);
  }

  close(): void {
    this.checkpoint = undefined;
  }
}

/** Sample a label budget, train a refinement model, and return the handle.
 * Numerically identical to `pearl fit` with the same seed. */
export function fit(
  embeddings: number[][],
  labels: number[],
  config: FitConfig = {},
): BoundModel {
  checkShapes(embeddings, labels);
  checkKeys(config, new Set([...PEARL_FLAG_KEYS, 'budget', 'seed']));
  const budget = config.budget ?? labels.length;
  const seed = config.seed ?? 0;
  return withTempDir((dir) => {
    const dataPath = join(dir, 'train.pear');
    const modelPath = join(dir, 'model.pear');
    writeFileSync(dataPath, encodePear(embeddings, labels));
    runCli([
      'fit', '--data', dataPath, '--budget', String(budget),
      '--seed', String(seed), '--out-model', modelPath,
      ...pearlFlags(config),
    ]);
    const checkpoint = readFileSync(modelPath);
    const d = embeddings[0].length;
    const C = new Set(labels.filter((y) => y >= 0)).size;
    return new BoundModel(checkpoint, d, C);
  });
}

/** Run the folds x budgets x methods protocol; returns the parsed report
 * lines (per-fold records, aggregates, error manifest). */
export function evaluate(
  embeddings: number[][],
  labels: number[],
  config: EvaluateConfig = {},
): ReportLine[] {
  checkShapes(embeddings, labels);
  checkKeys(config, new Set([
    ...PEARL_FLAG_KEYS, 'folds', 'budgets', 'k', 'methods', 'base_seed', 'jobs',
  ]));
  return withTempDir((dir) => {
    const dataPath = join(dir, 'data.pear');
    const reportPath = join(dir, 'report.jsonl');
    writeFileSync(dataPath, encodePear(embeddings, labels));
    const args = ['evaluate', '--data', dataPath, '--report', reportPath, '--quiet'];
    if (config.folds !== undefined) args.push('--folds', String(config.folds));
    if (config.budgets !== undefined) args.push('--budgets', config.budgets.join(','));
    if (config.k !== undefined) args.push('--k', config.k.join(','));
    if (config.methods !== undefined) args.push('--methods', config.methods.join(','));
    if (config.base_seed !== undefined) args.push('--base-seed', String(config.base_seed));
    if (config.jobs !== undefined) args.push('--jobs', String(config.jobs));
    args.push(...pearlFlags(config));
    runCli(args);
    return readFileSync(reportPath, 'utf-8')
      .split('\n')
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as ReportLine);
  });
}

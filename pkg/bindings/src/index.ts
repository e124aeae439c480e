/**
 * Thin bindings over the deteval CLI.
 *
 * Everything here is plumbing: build argv, spawn the engine, parse the JSON
 * it wrote. No metric arithmetic lives on this side, so engine refactors
 * cannot change results as long as the report schema holds. Engine errors
 * surface as exceptions carrying the CLI's own error text.
 *
 * The engine command resolves from DETEVAL_PYTHON (run as `$DETEVAL_PYTHON
 * -m deteval`) or defaults to the installed `deteval` executable.
 */

import { spawnSync } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

/** Mirror of the engine's EvalConfig as a plain key/value mapping. Unset
 * keys fall back to the CLI's own defaults. */
export interface BoundConfig {
  iou?: number;
  matcher?: 'optimal' | 'greedy' | 'brute-force';
  min_confidence?: number;
  grid?: string;
  ap_mode?: 'all-points' | 'eleven-point' | 'forty-one-point';
  brier_support?: 'labels' | 'detections' | 'union';
  calibration_bins?: number;
  collapse?: Record<string, string>;
  difficulty?: 'easy' | 'medium' | 'hard';
  filter?: string;
  class?: string;
  dontcare?: 'on' | 'off';
  dontcare_overlap?: number;
  score_transform?: 'sigmoid' | 'minmax';
  threads?: number;
}

const CONFIG_KEYS = new Set([
  'iou',
  'matcher',
  'min_confidence',
  'grid',
  'ap_mode',
  'brier_support',
  'calibration_bins',
  'collapse',
  'difficulty',
  'filter',
  'class',
  'dontcare',
  'dontcare_overlap',
  'score_transform',
  'threads',
]);

/** Axis-aligned box as (left, top, right, bottom). */
export type Box = readonly [number, number, number, number];

export interface MatchResult {
  /** (detection_index, label_index, iou) triples, detection index ascending. */
  pairs: [number, number, number][];
  unmatched_detections: number[];
  unmatched_labels: number[];
}

export interface EngineReport {
  config: Record<string, unknown>;
  manifest: Record<string, unknown> | null;
  notes: string[];
  classes: Record<string, { filters: Record<string, Record<string, unknown>> }>;
}

function engineCommand(): string[] {
  const py = process.env.DETEVAL_PYTHON;
  if (py) return [py, '-m', 'deteval'];
  return ['deteval'];
}

export function runEngine(args: string[]): string {
  const [cmd, ...prefix] = engineCommand();
  const result = spawnSync(cmd, [...prefix, ...args], {
    encoding: 'utf8',
    maxBuffer: 256 * 1024 * 1024,
  });
  if (result.error) {
    throw new Error(`failed to launch deteval engine (${cmd}): ${result.error.message}`);
  }
  if (result.status !== 0) {
    const detail = (result.stderr || result.stdout || '').trim();
    throw new Error(`deteval exited with code ${result.status}: ${detail}`);
  }
  return result.stdout;
}

export function engineVersion(): string {
  return runEngine(['--version']).trim().replace(/^deteval\s+/, '');
}

function configArgs(config: BoundConfig): string[] {
  const args: string[] = [];
  for (const key of Object.keys(config)) {
    if (!CONFIG_KEYS.has(key)) {
      throw new Error(`unknown config key: ${key}`);
    }
  }
  if (config.iou !== undefined) args.push('--iou', String(config.iou));
  if (config.matcher !== undefined) args.push('--matcher', config.matcher);
  if (config.min_confidence !== undefined) args.push('--min-confidence', String(config.min_confidence));
  if (config.grid !== undefined) args.push('--grid', config.grid);
  if (config.ap_mode !== undefined) args.push('--ap-mode', config.ap_mode);
  if (config.brier_support !== undefined) args.push('--brier-support', config.brier_support);
  if (config.calibration_bins !== undefined) args.push('--calibration-bins', String(config.calibration_bins));
  if (config.collapse !== undefined) {
    for (const [src, dst] of Object.entries(config.collapse)) {
      args.push('--collapse', `${src}=${dst}`);
    }
  }
  if (config.difficulty !== undefined) args.push('--difficulty', config.difficulty);
  if (config.filter !== undefined) args.push('--filter', config.filter);
  if (config.class !== undefined) args.push('--class', config.class);
  if (config.dontcare !== undefined) args.push('--dontcare', config.dontcare);
  if (config.dontcare_overlap !== undefined) args.push('--dontcare-overlap', String(config.dontcare_overlap));
  if (config.score_transform !== undefined) args.push('--score-transform', config.score_transform);
  if (config.threads !== undefined) args.push('--threads', String(config.threads));
  return args;
}

/**
 * Run a full evaluation and return the engine's JSON report as a native
 * object, numerically identical to the CLI's own output file.
 */
export function evaluate(
  labelsDir: string,
  detectionsDir: string,
  config: BoundConfig = {},
): EngineReport {
  const args = configArgs(config);
  const workDir = mkdtempSync(join(tmpdir(), 'deteval-bindings-'));
  const outPath = join(workDir, 'report.json');
  try {
    runEngine([
      'evaluate',
      '--labels', labelsDir,
      '--detections', detectionsDir,
      '--out', outPath,
      ...args,
    ]);
    return JSON.parse(readFileSync(outPath, 'utf8')) as EngineReport;
  } finally {
    rmSync(workDir, { recursive: true, force: true });
  }
}

function checkBoxes(boxes: readonly Box[], what: string): void {
  for (const b of boxes) {
    if (b.length !== 4 || b.some((v) => typeof v !== 'number' || !Number.isFinite(v))) {
      throw new Error(`invalid ${what} box: expected four finite numbers, got ${JSON.stringify(b)}`);
    }
  }
}

export function runMatch(
  payload: unknown,
  tau: number,
  matcher: 'optimal' | 'greedy' | 'brute-force' = 'optimal',
): unknown {
  const workDir = mkdtempSync(join(tmpdir(), 'deteval-bindings-'));
  const inPath = join(workDir, 'match.json');
  try {
    writeFileSync(inPath, JSON.stringify(payload));
    const stdout = runEngine([
      'match',
      '--tau', String(tau),
      '--matcher', matcher,
      '--input', inPath,
    ]);
    return JSON.parse(stdout);
  } finally {
    rmSync(workDir, { recursive: true, force: true });
  }
}

/**
 * Optimal association of detection boxes to label boxes at IoU threshold
 * `tau`; index lists mirror the engine's Matching exactly.
 */
export function matchBoxes(
  detectionBoxes: readonly Box[],
  labelBoxes: readonly Box[],
  tau: number,
): MatchResult {
  checkBoxes(detectionBoxes, 'detection');
  checkBoxes(labelBoxes, 'label');
  return runMatch(
    { detections: detectionBoxes, labels: labelBoxes },
    tau,
  ) as MatchResult;
}

/** Spec-style alias. */
export const match_boxes = matchBoxes;

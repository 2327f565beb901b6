/* tslint:disable */
/* eslint-disable */

/**
 * PLCC, SROCC, KROCC and Overall for two whitespace or comma separated
 * lists, plus the scatter and histogram SVGs.
 */
export function evaluate_lists(truth: string, pred: string): string;

/**
 * Simulates a phantom with noise `(a, b)` and estimates it back.
 * Returns JSON: fitted parameters, a PNG preview and per-patch statistics.
 */
export function explore_noise(a: number, b: number, seed: bigint): string;

/**
 * Scores the same phantom with the offline mock model (zero-shot prompt).
 */
export function mock_rate(a: number, b: number, seed: bigint, model_seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly evaluate_lists: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly explore_noise: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly mock_rate: (a: number, b: number, c: bigint, d: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;

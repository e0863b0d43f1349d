/* tslint:disable */
/* eslint-disable */

/**
 * `[mu_0, sigma_0, mu_1, sigma_1, ...]` while tracking a Beta-distributed confidence stream.
 */
export function ema_trajectory(n_domains: number, momentum: number, mean: number, variance: number, steps: number, batch: number, seed: bigint): Float64Array;

/**
 * Generates a dataset, trains the domain classifier and pseudo-labels the
 * dominant rows. Returns a JSON summary.
 */
export function pseudo_label_summary(seed: bigint, n_samples: number, separable: boolean, bins: number): string;

/**
 * Weight at `points` evenly spaced confidences in `[0, 1]`.
 */
export function weight_curve(mu: number, sigma: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly ema_trajectory: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
    readonly pseudo_label_summary: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
    readonly weight_curve: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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

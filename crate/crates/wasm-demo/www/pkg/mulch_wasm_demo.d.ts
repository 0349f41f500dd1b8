/* tslint:disable */
/* eslint-disable */

/**
 * Samples the sum-of-exponentials kernel with weights `c` and decays
 * `betas` at `n_points` evenly spaced lags in `[0, t_max]`.
 */
export function kernel_curve(c: Float64Array, betas: Float64Array, t_max: number, n_points: number): Float64Array;

/**
 * Counts three-edge motifs in `sender,receiver,time` CSV text. Returns
 * the 6x6 grid as JSON.
 */
export function motif_counts(csv: string, delta: number): string;

/**
 * Simulates an assortative `k`-block network and clusters its counts.
 * Returns JSON with the ARI, both labelings and the sorted count matrix.
 */
export function simulate_and_cluster(n: number, k: number, duration: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly kernel_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly motif_counts: (a: number, b: number, c: number) => [number, number, number, number];
    readonly simulate_and_cluster: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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

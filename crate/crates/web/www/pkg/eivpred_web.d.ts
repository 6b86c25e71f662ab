/* tslint:disable */
/* eslint-disable */

/**
 * Best predictor for `y = β|ξ + a| + e` against the F-based least-squares
 * fit and the naive fit of `β|x + a|`, with their mean squared distance
 * from the best predictor over the grid.
 */
export function abs_failure(beta: number, shift: number, var_delta: number, n: number, seed: bigint): string;

/**
 * The latent curve `β₀ + β₁ξ + β₂ξ²` next to the best predictor `E[y | x]`
 * for the same covariate values.
 */
export function attenuation(beta0: number, beta1: number, beta2: number, mu: number, var_xi: number, var_delta: number): string;

/**
 * Simulates `n` points from a quadratic model, fits it, and returns the
 * fitted curve with its `1 − α` prediction band for reliability bound `k0`.
 */
export function quadratic_band(beta1: number, beta2: number, var_delta: number, var_e: number, k0: number, alpha: number, n: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly abs_failure: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly attenuation: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly quadratic_band: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
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

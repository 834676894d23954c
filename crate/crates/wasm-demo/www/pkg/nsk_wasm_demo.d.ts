/* tslint:disable */
/* eslint-disable */

/**
 * Fields of a planar linear response, row-major with x fastest.
 */
export class Response {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly n: number;
    readonly sigma: Float64Array;
    readonly speed: Float64Array;
    readonly vartheta: Float64Array;
}

/**
 * Decay constants of the Newtonian potential and the Stokeslet, as JSON.
 */
export function kernel_decay(mu: number): string;

/**
 * Response of the linearized stationary operator on an `n x n` periodic
 * slab to a mass source, a swirling force and a heat source.
 */
export function linear_response(n: number, length: number, width: number, eps: number): Response;

/**
 * Backward-Euler history of one Fourier mode of the frozen linear system,
 * started from a unit density pulse. Returns `|u_n|` for `n = 0..=steps`
 * followed by the undamped-shear reference `exp(-mu k^2 t / rho)`.
 */
export function mode_decay(k: number, dt: number, steps: number, exchange: boolean): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_response_free: (a: number, b: number) => void;
    readonly kernel_decay: (a: number) => [number, number, number, number];
    readonly linear_response: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly mode_decay: (a: number, b: number, c: number, d: number) => [number, number];
    readonly response_n: (a: number) => number;
    readonly response_sigma: (a: number) => [number, number];
    readonly response_speed: (a: number) => [number, number];
    readonly response_vartheta: (a: number) => [number, number];
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

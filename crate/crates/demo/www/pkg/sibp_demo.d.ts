/* tslint:disable */
/* eslint-disable */

/**
 * Synthetic corpus plus a training run that advances on request.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `pairs` is a flat list `[object, attribute, object, attribute, ...]`.
     */
    annotatePlanted(pairs: Uint32Array, seed: number): string;
    constructor(seed: number, images: number);
    /**
     * Runs `sweeps` coordinate sweeps; returns the objective trace and factor cosines.
     */
    step(sweeps: number): string;
}

/**
 * `tau` is a flat list `[a_1, b_1, a_2, b_2, ...]`; `m` is the 1-based level.
 */
export function stickBound(tau: Float64Array, m: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_annotatePlanted: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_step: (a: number, b: number) => [number, number, number, number];
    readonly stickBound: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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

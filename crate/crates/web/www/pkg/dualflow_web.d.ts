/* tslint:disable */
/* eslint-disable */

/**
 * Newline-separated captions of the toy grammar.
 */
export function captions(): string;

export function ceCheck(n: number, mu: number, samples: number, seed: number): Float64Array;

/**
 * Marked and retained text joined by a newline.
 */
export function corruptCaption(index: number, tau: number, seed: number): string;

export function mseCheck(n: number, sigma: number, samples: number, seed: number): Float64Array;

export function ratioSurface(n: number, steps: number, upper: boolean): Float64Array;

export function retainedLengths(len: number, tau: number, draws: number, seed: number): Float64Array;

export function tauCurves(ps: Float64Array, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly captions: () => [number, number];
    readonly ceCheck: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly corruptCaption: (a: number, b: number, c: number) => [number, number, number, number];
    readonly mseCheck: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly ratioSurface: (a: number, b: number, c: number) => [number, number, number, number];
    readonly retainedLengths: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly tauCurves: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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

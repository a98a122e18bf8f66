/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const captions: () => [number, number];
export const ceCheck: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const corruptCaption: (a: number, b: number, c: number) => [number, number, number, number];
export const mseCheck: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const ratioSurface: (a: number, b: number, c: number) => [number, number, number, number];
export const retainedLengths: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const tauCurves: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;

/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_complete: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_fromCheckpoint: (a: number, b: number, c: bigint) => [number, number, number];
export const demo_iterations: (a: number) => number;
export const demo_nMax: (a: number) => number;
export const demo_new: (a: bigint) => [number, number, number];
export const demo_offsetScale: (a: number) => number;
export const demo_sampleSvg: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_train: (a: number, b: number) => [number, number, number];
export const renderStrokes: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const skeScore: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    complete(json: string, tau: number): string;
    static fromCheckpoint(bytes: Uint8Array, seed: bigint): Demo;
    iterations(): number;
    nMax(): number;
    /**
     * Untrained tiny model over the box corpus.
     */
    constructor(seed: bigint);
    offsetScale(): number;
    sampleSvg(count: number, columns: number, tau: number): string;
    train(steps: number): number;
}

export function renderStrokes(json: string, highlight_from: number | null | undefined, size: number): string;

export function skeScore(json: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_complete: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_fromCheckpoint: (a: number, b: number, c: bigint) => [number, number, number];
    readonly demo_iterations: (a: number) => number;
    readonly demo_nMax: (a: number) => number;
    readonly demo_new: (a: bigint) => [number, number, number];
    readonly demo_offsetScale: (a: number) => number;
    readonly demo_sampleSvg: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_train: (a: number, b: number) => [number, number, number];
    readonly renderStrokes: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly skeScore: (a: number, b: number) => [number, number, number, number];
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

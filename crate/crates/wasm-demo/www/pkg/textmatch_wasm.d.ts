/* tslint:disable */
/* eslint-disable */

/**
 * JavaScript handle around [`Session`].
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    explain(left: string, right: string): string;
    history(): string;
    constructor(model: string, queries: number, docs: number, epochs: number, seed: number);
    preprocess(text: string): string;
    sampleCount(): number;
    sample(index: number): string;
    readonly model: string;
}

/**
 * Registered model ids, as JSON.
 */
export function models(): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_explain: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_history: (a: number) => [number, number];
    readonly demo_model: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly demo_preprocess: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_sample: (a: number, b: number) => [number, number];
    readonly demo_sampleCount: (a: number) => number;
    readonly models: () => [number, number];
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

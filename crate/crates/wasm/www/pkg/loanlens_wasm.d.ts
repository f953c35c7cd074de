/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * JSON `Audit`.
     */
    audit(): string;
    /**
     * JSON array of `CurvePoint`.
     */
    cohortCurve(sizes: Uint32Array, seed: number): string;
    /**
     * Generates and trains; takes a moment for 1000 applications.
     */
    constructor(bias: number, seed: number);
    /**
     * JSON array of `ScatterPoint`.
     */
    scatter(index: number, lo: number, hi: number): string;
    testSize(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_audit: (a: number) => [number, number, number, number];
    readonly demo_cohortCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_scatter: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_testSize: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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

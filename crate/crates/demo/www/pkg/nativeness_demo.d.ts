/* tslint:disable */
/* eslint-disable */

export function augmentation_preview(seed: number, transform: string, amount: number, points: number): string;

export function difference_view(seed: number, focus: number, z_threshold: number, merge_gap: number, points: number): string;

export function loss_curves(gamma: number, temperature: number, points: number): string;

/**
 * Sample rate of every clip the demo produces.
 */
export function sample_rate(): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly augmentation_preview: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly difference_view: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly loss_curves: (a: number, b: number, c: number) => [number, number];
    readonly sample_rate: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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

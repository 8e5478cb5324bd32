/* tslint:disable */
/* eslint-disable */

/**
 * A generated city with its tournament already run.
 */
export class CityDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[{"k", "r2", "mae"}, ...]` for K = 1..k_max.
     */
    ablation(k_max: number): string;
    /**
     * Flat `[x, y, score, ...]` for the anchor images.
     */
    anchors(): Float64Array;
    /**
     * `{"r2", "mae"}` on the held-out anchors.
     */
    held_out(k: number): string;
    constructor(seed: number, points: number, anchors: number, opponents: number, noise: number);
    pairs(): number;
    /**
     * Flat `[x, y, latent, ...]`.
     */
    points(): Float64Array;
    /**
     * One K-NN score per point, aligned with `points()`.
     */
    score(k: number): Float64Array;
    spearman(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_citydemo_free: (a: number, b: number) => void;
    readonly citydemo_ablation: (a: number, b: number) => [number, number, number, number];
    readonly citydemo_anchors: (a: number) => [number, number];
    readonly citydemo_held_out: (a: number, b: number) => [number, number, number, number];
    readonly citydemo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly citydemo_pairs: (a: number) => number;
    readonly citydemo_points: (a: number) => [number, number];
    readonly citydemo_score: (a: number, b: number) => [number, number, number, number];
    readonly citydemo_spearman: (a: number) => number;
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
